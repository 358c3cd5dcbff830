"""Phase spaces, built-in Hamiltonian testbeds, coupling potentials, and the
physical/scaled coordinate changes.

Two base systems are provided. The torus of revolution carries the geodesic
Hamiltonian H0 = (p1^2 + p2^2 / w(x1)^2) / 2 with profile w(x1) = 2 +
cos(2 pi x1) on period-1 coordinates; its inner equator x1 = 1/2 is a
hyperbolic closed geodesic with two homoclinic loops. The pendulum-rotator
carries H0 = p1^2/2 + (1 + cos q) + p2^2/2; its separatrix is closed form,
which makes it the analytic-oracle and window-construction testbed.

Momenta couple to a slow external phase theta through a potential V(x, theta).
All built-in couplings are sums of products of a spatial factor and a smooth
weight on the external torus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._util import cos2pi, sin2pi
from .errors import DomainError, UnsupportedOperationError
from .extflow import ExternalFlowModel, linear_torus_flow

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# state containers


@dataclass(frozen=True)
class CotangentState:
    """A point (x, y) of the cotangent bundle in chart coordinates."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise DomainError("x and y must be 1-D arrays of equal length")


@dataclass(frozen=True)
class ExtendedState:
    """A point (x, y, theta) of T*M x N together with the physical time."""

    base: CotangentState
    theta: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)) % 1.0
        )
        object.__setattr__(self, "time", float(self.time))


@dataclass(frozen=True)
class ScaledState:
    """Scaled coordinates q = x, p = eps*y, s = t/eps, with the external phase."""

    q: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    s: float
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))
        object.__setattr__(
            self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)) % 1.0
        )
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        # epsilon = 0 is the frozen-theta limit, allowed for the flow itself
        # but not for the coordinate change back (from_scaled divides by it)
        if self.epsilon < 0.0:
            raise DomainError("epsilon must be nonnegative")


# ---------------------------------------------------------------------------
# metrics

# Batched convention: x and y have shape (..., dim); scalar outputs have
# shape (...,), gradients shape (..., dim).


class TorusOfRevolution:
    """Geodesic Hamiltonian of a torus of revolution in period-1 coordinates.

    Profile w(x1) = 2 + cos(2 pi x1). The x2 circle is cyclic, so p2 is the
    Clairaut first integral. H0 is homogeneous of degree 2 in the momenta.
    """

    name = "torus"
    dim = 2
    periods = (1.0, 1.0)
    homogeneous = True
    # inner equator: hyperbolic closed geodesic at x1 = 1/2
    equator_x1 = 0.5

    @staticmethod
    def profile(x1):
        return 2.0 + cos2pi(x1)

    @staticmethod
    def profile_d(x1):
        return -TWO_PI * sin2pi(x1)

    def h0(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        w = self.profile(x[..., 0])
        return 0.5 * (y[..., 0] ** 2 + (y[..., 1] / w) ** 2)

    def dh0_dx(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        w = self.profile(x[..., 0])
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape))
        out[..., 0] = -(y[..., 1] ** 2) * self.profile_d(x[..., 0]) / w**3
        return out

    def dh0_dy(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        w = self.profile(x[..., 0])
        out = np.empty(np.broadcast_shapes(x.shape, y.shape))
        out[..., 0] = y[..., 0]
        out[..., 1] = y[..., 1] / w**2
        return out


class PendulumRotator:
    """Pendulum times free rotator: H0 = p1^2/2 + (1 + cos q) + p2^2/2.

    q = x1 is the pendulum angle in its natural 2 pi chart; x2 is the rotator
    angle on the period-1 circle. The saddle sits at (q, p1) = (0, 0) with
    separatrix energy 2 and linearized rate 1. Not homogeneous in y.
    """

    name = "pendulum"
    dim = 2
    periods = (TWO_PI, 1.0)
    homogeneous = False
    equator_x1 = 0.0  # the saddle angle

    def h0(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return 0.5 * (y[..., 0] ** 2 + y[..., 1] ** 2) + 1.0 + np.cos(x[..., 0])

    def dh0_dx(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape))
        out[..., 0] = -np.sin(x[..., 0])
        return out

    def dh0_dy(self, x, y):
        y = np.asarray(y, dtype=float)
        return np.array(y, dtype=float, copy=True)


Metric = TorusOfRevolution | PendulumRotator

_METRICS = {"torus": TorusOfRevolution, "pendulum": PendulumRotator}


def make_metric(name: str) -> Metric:
    try:
        return _METRICS[name]()
    except KeyError:
        raise DomainError(f"unknown metric {name!r}") from None


# ---------------------------------------------------------------------------
# weights on the external torus


@dataclass(frozen=True)
class TrigWeight:
    """w(theta) = sum_i amp_i * sin(2 pi k_i . theta + phase_i) on T^d."""

    dim: int
    terms: tuple[tuple[float, tuple[int, ...], float], ...]

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape[:-1])
        for amp, k, phase in self.terms:
            out = out + amp * np.sin(TWO_PI * (theta @ np.asarray(k, dtype=float)) + phase)
        return out

    def grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape)
        for amp, k, phase in self.terms:
            kv = np.asarray(k, dtype=float)
            c = amp * TWO_PI * np.cos(TWO_PI * (theta @ kv) + phase)
            out = out + c[..., None] * kv
        return out


def default_weight(dim: int) -> TrigWeight:
    """sin(2 pi theta1) + 0.5 cos(2 pi theta2), truncated to the available dim."""
    terms = [(1.0, tuple(1 if i == 0 else 0 for i in range(dim)), 0.0)]
    if dim >= 2:
        terms.append((0.5, tuple(1 if i == 1 else 0 for i in range(dim)), 0.5 * math.pi))
    return TrigWeight(dim=dim, terms=tuple(terms))


def constant_weight(dim: int, c: float = 1.0) -> TrigWeight:
    # sin(phase) with k = 0 encodes a constant
    return TrigWeight(dim=dim, terms=(((c, tuple(0 for _ in range(dim)), 0.5 * math.pi)),))


# ---------------------------------------------------------------------------
# coupling potentials


class Potential:
    """Sum of product terms spatial(x) * weight(theta).

    Subclasses or factory helpers provide the concrete spatial factors. The
    three methods are vectorized over broadcastable leading shapes of x and
    theta.
    """

    def __init__(self, name: str, terms: Sequence[tuple["Spatial", TrigWeight]]):
        self.name = name
        self.terms = tuple(terms)

    def value(self, x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape[:-1], theta.shape[:-1]))
        for sp, wt in self.terms:
            out = out + sp.value(x) * wt.value(theta)
        return out

    def grad_x(self, x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], theta.shape[:-1]) + x.shape[-1:]
        out = np.zeros(shape)
        for sp, wt in self.terms:
            out = out + sp.grad(x) * wt.value(theta)[..., None]
        return out

    def grad_theta(self, x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], theta.shape[:-1]) + theta.shape[-1:]
        out = np.zeros(shape)
        for sp, wt in self.terms:
            out = out + sp.value(x)[..., None] * wt.grad(theta)
        return out


@dataclass(frozen=True)
class TrigSpatial:
    """v(x) = sum_i amp_i * prod_j sin(freq_ij * x_j + phase_ij)."""

    terms: tuple[tuple[float, tuple[float, ...], tuple[float, ...]], ...]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for amp, freqs, phases in self.terms:
            f = np.full(x.shape[:-1], amp)
            for j, (fr, ph) in enumerate(zip(freqs, phases)):
                f = f * np.sin(fr * x[..., j] + ph)
            out = out + f
        return out

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for amp, freqs, phases in self.terms:
            factors = [np.sin(fr * x[..., j] + ph) for j, (fr, ph) in enumerate(zip(freqs, phases))]
            for j, (fr, ph) in enumerate(zip(freqs, phases)):
                df = np.full(x.shape[:-1], amp)
                for i, fac in enumerate(factors):
                    df = df * (fr * np.cos(fr * x[..., j] + ph) if i == j else fac)
                out[..., j] = out[..., j] + df
        return out


HALF_PI = 0.5 * math.pi


def zero_potential(dim_theta: int = 2) -> Potential:
    return Potential("zero", ())


def torus_coupling(
    beta: float = 0.3,
    beta2: float = 0.15,
    weight: TrigWeight | None = None,
    dim_theta: int = 2,
) -> Potential:
    """Default torus coupling.

    V = (cos(2 pi x1) + sin(2 pi x1) (beta sin(2 pi x2) + beta2 sin(4 pi x2)))
        * w(theta).

    On the inner equator the spatial factor is the constant -1. beta =
    beta2 = 0 is the symmetric control case.

    Both angle harmonics are needed, and both must be odd. The loop family
    is invariant under (x1, x2, sigma) -> (-x1, -x2, -sigma), which sends
    one branch's angle profile to the other branch's with the angle
    reflected, so the two suprema over the angle agree exactly whenever the
    reflected angle factor g(-x2) is an angle shift of g(x2). A single
    harmonic always is, and so is sin + cos(4 pi x2) via the half-turn
    shift; sin(2 pi x2) + sin(4 pi x2) is not, and separates the suprema.
    """
    w = weight if weight is not None else default_weight(dim_theta)
    terms = [(1.0, (TWO_PI, 0.0), (HALF_PI, HALF_PI))]  # cos(2 pi x1)
    if beta:
        terms.append((beta, (TWO_PI, TWO_PI), (0.0, 0.0)))  # sin(2 pi x1) sin(2 pi x2)
    if beta2:
        terms.append((beta2, (TWO_PI, 2 * TWO_PI), (0.0, 0.0)))  # sin(2 pi x1) sin(4 pi x2)
    name = "torus-coupling" if (beta or beta2) else "torus-coupling-symmetric"
    return Potential(name, ((TrigSpatial(tuple(terms)), w),))


def pendulum_coupling(weight: TrigWeight | None = None, dim_theta: int = 2) -> Potential:
    """V = cos(q) * w(theta) for the pendulum-rotator."""
    w = weight if weight is not None else default_weight(dim_theta)
    sp = TrigSpatial((((1.0, (1.0, 0.0), (HALF_PI, HALF_PI))),))  # cos q
    return Potential("pendulum-coupling", ((sp, w),))


def angle_coupling(weight: TrigWeight | None = None, dim_theta: int = 2) -> Potential:
    """V = cos(2 pi x2) * w(theta): nonconstant along the closed geodesic.

    Exercises the parts of the gain formulas that sample the base angle.
    """
    w = weight if weight is not None else default_weight(dim_theta)
    sp = TrigSpatial((((1.0, (0.0, TWO_PI), (HALF_PI, HALF_PI))),))
    return Potential("angle-coupling", ((sp, w),))


class ScaledSumPotential(Potential):
    """alpha * V1 + beta * V2 (used by linearity tests and bump augmentation)."""

    def __init__(self, parts: Sequence[tuple[float, Potential]]):
        self.parts = tuple((float(c), p) for c, p in parts)
        name = "+".join(f"{c:g}*{p.name}" for c, p in self.parts)
        super().__init__(name, ())

    def value(self, x, theta):
        return sum(c * p.value(x, theta) for c, p in self.parts)

    def grad_x(self, x, theta):
        return sum(c * p.grad_x(x, theta) for c, p in self.parts)

    def grad_theta(self, x, theta):
        return sum(c * p.grad_theta(x, theta) for c, p in self.parts)


def _smooth_bump(r2):
    """C-infinity bump exp(1 - 1/(1 - r^2)) on r^2 < 1, zero outside."""
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    t = r2[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t))
    return out


def _smooth_bump_d(r2):
    """d/d(r^2) of the bump."""
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    t = r2[inside]
    out[inside] = -np.exp(1.0 - 1.0 / (1.0 - t)) / (1.0 - t) ** 2
    return out


class BumpPotential(Potential):
    """W(x, theta) = amp * B(M dx) * sin(2 pi n.(theta - theta_c)) * B(theta).

    B are smooth compactly supported radial bumps on the respective tori,
    dx is the periodic displacement from center_x and M the unit shear
    dx1 -> dx1 + shear * dx2. The derivative along the external field is
    positive on the inner third of the support when n.nu > 0 (further out
    the envelope term of the theta gradient can outweigh the oscillation).

    A nonzero shear tilts the support into an ellipse. An orbit chord
    through the center of a radial bump integrates to radius / |M u| per
    unit profile for chord direction u, so two chords with mirrored slopes
    pick up equal gains from a round bump but unequal gains from a sheared
    one. Tie-breaking between mirror-image orbits needs shear != 0.
    """

    def __init__(
        self,
        center_x,
        radius_x: float,
        center_theta,
        radius_theta: float,
        amplitude: float,
        periods_x: tuple[float, ...] | None = None,
        wavevec: tuple[int, ...] | None = None,
        shear: float = 0.0,
    ):
        super().__init__("bump", ())
        self.center_x = np.atleast_1d(np.asarray(center_x, dtype=float))
        self.radius_x = float(radius_x)
        self.center_theta = np.atleast_1d(np.asarray(center_theta, dtype=float))
        self.radius_theta = float(radius_theta)
        self.amplitude = float(amplitude)
        if periods_x is None:
            periods_x = (1.0,) * self.center_x.size
        self.periods_x = tuple(float(p) for p in periods_x)
        if wavevec is None:
            wavevec = tuple(1 if i == 0 else 0 for i in range(self.center_theta.size))
        self.wavevec = np.asarray(wavevec, dtype=float)
        self.shear = float(shear)
        if self.shear != 0.0 and self.center_x.size < 2:
            raise DomainError("shear needs at least two spatial coordinates")

    # per-coordinate shortest periodic displacement from the center
    def _dx(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        for j, per in enumerate(self.periods_x):
            d = (x[..., j] - self.center_x[j] + 0.5 * per) % per - 0.5 * per
            out[..., j] = d
        if self.shear != 0.0:
            out[..., 0] += self.shear * out[..., 1]
        return out

    def _dtheta(self, theta):
        theta = np.asarray(theta, dtype=float)
        return (theta - self.center_theta + 0.5) % 1.0 - 0.5

    def _parts(self, x, theta):
        dx = self._dx(x)
        dth = self._dtheta(theta)
        rx2 = np.sum(dx**2, axis=-1) / self.radius_x**2
        rt2 = np.sum(dth**2, axis=-1) / self.radius_theta**2
        bx = _smooth_bump(rx2)
        bt = _smooth_bump(rt2)
        phase = TWO_PI * (dth @ self.wavevec)
        return dx, dth, rx2, rt2, bx, bt, phase

    def value(self, x, theta):
        _, _, _, _, bx, bt, phase = self._parts(x, theta)
        return self.amplitude * bx * np.sin(phase) * bt

    def grad_x(self, x, theta):
        dx, _, rx2, _, _, bt, phase = self._parts(x, theta)
        dbx = _smooth_bump_d(rx2) * 2.0 / self.radius_x**2
        coeff = self.amplitude * np.sin(phase) * bt * dbx
        grad = coeff[..., None] * dx
        if self.shear != 0.0:
            grad = grad.copy()
            grad[..., 1] += self.shear * grad[..., 0]
        return grad

    def grad_theta(self, x, theta):
        dx, dth, rx2, rt2, bx, bt, phase = self._parts(x, theta)
        dbt = _smooth_bump_d(rt2) * 2.0 / self.radius_theta**2
        g_osc = TWO_PI * np.cos(phase) * bt
        g_env = np.sin(phase) * dbt
        out = (self.amplitude * bx * g_osc)[..., None] * self.wavevec
        out = out + (self.amplitude * bx * g_env)[..., None] * dth
        return out


# ---------------------------------------------------------------------------
# the system model


@dataclass(frozen=True)
class SystemModel:
    """Immutable bundle of metric, coupling potential, external flow, and E*."""

    metric: Metric
    potential: Potential
    external: ExternalFlowModel
    base_energy: float = 1.0

    def __post_init__(self):
        if self.base_energy <= 0.0:
            raise DomainError("base energy must be positive")

    @property
    def epsilon(self) -> float:
        return 1.0 / math.sqrt(self.base_energy)

    # state factories with canonical wrapping
    def state(self, x, y) -> CotangentState:
        return CotangentState(self.canonical_x(x), np.asarray(y, dtype=float))

    def extended(self, x, y, theta, time: float = 0.0) -> ExtendedState:
        return ExtendedState(self.state(x, y), theta, time)

    def canonical_x(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
        for j, per in enumerate(self.metric.periods):
            x[..., j] = x[..., j] % per
        return x


def default_model(
    beta: float = 0.3,
    beta2: float = 0.15,
    base_energy: float = 1.0,
    dim_theta: int = 2,
) -> SystemModel:
    """Torus of revolution, default coupling, golden-ratio linear flow."""
    return SystemModel(
        metric=TorusOfRevolution(),
        potential=torus_coupling(beta=beta, beta2=beta2, dim_theta=dim_theta),
        external=linear_torus_flow(dim=dim_theta),
        base_energy=base_energy,
    )


def pendulum_model(base_energy: float = 1.0, dim_theta: int = 2) -> SystemModel:
    """Pendulum-rotator with the analytic-oracle coupling."""
    return SystemModel(
        metric=PendulumRotator(),
        potential=pendulum_coupling(dim_theta=dim_theta),
        external=linear_torus_flow(dim=dim_theta),
        base_energy=base_energy,
    )


def torus_state_from_polar(r: float, p_r: float, phi: float, p_phi: float) -> CotangentState:
    """Build a torus state from 2 pi-periodic surface coordinates."""
    return CotangentState(
        np.array([(r / TWO_PI) % 1.0, (phi / TWO_PI) % 1.0]), np.array([p_r, p_phi])
    )


# ---------------------------------------------------------------------------
# operations


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("state has non-finite coordinates")


def eval_H0(model: SystemModel, z: CotangentState) -> float:
    """Kinetic-metric energy H0(x, y) = g_x(y, y)/2, plus the base potential
    for the pendulum testbed. Non-negative for the built-in metrics."""
    _check_finite(z.x, z.y)
    return float(model.metric.h0(z.x, z.y))


def eval_H(model: SystemModel, z: ExtendedState) -> float:
    """Coupled energy H0(x, y) + V(x, theta)."""
    _check_finite(z.base.x, z.base.y, z.theta)
    return float(model.metric.h0(z.base.x, z.base.y) + model.potential.value(z.base.x, z.theta))


def dilate(model: SystemModel, z: CotangentState, E: float) -> CotangentState:
    """Momentum dilation (x, y) -> (x, sqrt(2E) y), mapping energy 1/2 to E."""
    if E <= 0.0:
        raise DomainError("dilation energy must be positive")
    if not model.metric.homogeneous:
        raise UnsupportedOperationError("dilation requires a homogeneous metric")
    return CotangentState(z.x.copy(), math.sqrt(2.0 * E) * z.y)


def to_scaled(z: ExtendedState, eps: float) -> ScaledState:
    """q = x, p = eps*y, s = t/eps."""
    if eps <= 0.0:
        raise DomainError("eps must be positive")
    return ScaledState(z.base.x.copy(), eps * z.base.y, z.theta.copy(), z.time / eps, eps)


def from_scaled(zs: ScaledState) -> ExtendedState:
    """Inverse of to_scaled."""
    if zs.epsilon == 0.0:
        raise DomainError("the frozen-theta limit has no fast-time preimage")
    return ExtendedState(
        CotangentState(zs.q.copy(), zs.p / zs.epsilon), zs.theta.copy(), zs.s * zs.epsilon
    )


def eval_H_scaled(model: SystemModel, zs: ScaledState) -> float:
    """Scaled energy H_eps = H0(q, p) + eps^2 V(q, theta)."""
    _check_finite(zs.q, zs.p, zs.theta)
    return float(
        model.metric.h0(zs.q, zs.p)
        + zs.epsilon**2 * model.potential.value(zs.q, zs.theta)
    )
