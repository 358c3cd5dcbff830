"""The hyperbolic closed geodesic, its Floquet data, the homoclinic branches,
action-angle coordinates on the cylinder of closed orbits, and the
unperturbed scattering shift.

Conventions. The cylinder is parametrized by the action J = sqrt(2E) (for the
pendulum-rotator, J = sqrt(2(E - 2))) and a period-1 angle phi; on the inner
equator the angle advances at rate J, so the closed orbit has period 1/J.
Homoclinic orbits are anchored so that the backward asymptote has angle 0 at
time 0; the anchored angle trace converges forward to J t + a, which defines
the phase shift a.

Numerics. A separatrix can only be integrated reliably for about 13/rate time
units before roundoff, amplified like e^(rate t), ejects the computed orbit
from the saddle. Orbits are therefore integrated on the window |sigma| <=
t_reliable = 10/rate at near-machine tolerance and extended beyond it by the
asymptotic model

    transverse offset ~ delta(T) e^(-rate (sigma - T)),
    angle rate - J    ~ g(T) e^(-2 rate (sigma - T)),

whose coefficients are read off at the matching point. Tail-sensitive
quantities (the phase shift, improper integrals downstream) then converge by
construction instead of degrading when the window grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DomainError,
    NoOrbitFoundError,
    NotConvergedError,
    NotHyperbolicError,
)
from .integrate import IntegratorConfig, flow_unperturbed, rhs_unperturbed, solve_raw
from .models import CotangentState, SystemModel


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class PeriodicOrbitData:
    """A hyperbolic closed orbit of the unperturbed system."""

    energy: float
    point: CotangentState
    period: float
    floquet_multipliers: tuple[float, float]
    unstable_dir: np.ndarray
    stable_dir: np.ndarray
    residual: float

    @property
    def rate(self) -> float:
        """Exponential rate log|mu| / period of the transverse dynamics."""
        return math.log(abs(self.floquet_multipliers[0])) / self.period


@dataclass(frozen=True)
class ActionAngleChart:
    """(E, s) <-> (J, phi) on the cylinder of closed orbits.

    H0 restricted to the cylinder is energy_offset + J^2/2 (offset 0 for the
    geodesic testbed, 2 for the pendulum-rotator saddle).
    """

    equator_x1: float
    energy_offset: float = 0.0

    def J_of_E(self, E: float) -> float:
        if E <= self.energy_offset:
            raise DomainError("energy below the range of the orbit cylinder")
        return math.sqrt(2.0 * (E - self.energy_offset))

    def E_of_J(self, J: float) -> float:
        return self.energy_offset + 0.5 * J * J

    def phi_of_time(self, E: float, s: float) -> float:
        return (self.J_of_E(E) * s) % 1.0

    def time_of_phi(self, E: float, phi: float) -> float:
        return (phi % 1.0) / self.J_of_E(E)

    def state(self, J: float, phi: float) -> CotangentState:
        return CotangentState(np.array([self.equator_x1, phi % 1.0]), np.array([0.0, J]))


def action_angle_chart(model: SystemModel) -> ActionAngleChart:
    if model.metric.name == "pendulum":
        return ActionAngleChart(equator_x1=0.0, energy_offset=2.0)
    return ActionAngleChart(equator_x1=model.metric.equator_x1, energy_offset=0.0)


@dataclass(frozen=True)
class _TailModel:
    """One-sided asymptotic continuation at a matching time T (signed)."""

    T: float
    x1_eq: float  # unwrapped equator representative on this side
    dx1: float
    p1: float
    x2: float
    p2: float
    g: float  # angle rate minus J at the matching point
    rate: float
    side: int  # +1 forward tail, -1 backward tail

    def states(self, sigma: np.ndarray, J: float) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        u = self.side * (sigma - self.T)  # >= 0 in the tail
        decay = np.exp(-self.rate * u)
        out = np.empty(sigma.shape + (4,))
        out[..., 0] = self.x1_eq + self.dx1 * decay
        out[..., 2] = self.p1 * decay
        out[..., 1] = (
            self.x2
            + J * (sigma - self.T)
            + self.side * self.g * (1.0 - decay**2) / (2.0 * self.rate)
        )
        out[..., 3] = self.p2
        return out

    def angle_offset(self, J: float) -> float:
        """lim x2(sigma) - J sigma on this side."""
        return self.x2 - J * self.T + self.side * self.g / (2.0 * self.rate)


@dataclass(frozen=True)
class HomoclinicData:
    """One homoclinic loop of the closed orbit, anchored at backward angle 0.

    states rows are (x1, x2, p1, p2) with x2 anchored (x2 - J sigma -> 0
    backward) and x1 unwrapped (continuous across the loop). orbit_states
    evaluates the orbit at arbitrary parameters, switching to the asymptotic
    tail model beyond t_reliable.
    """

    branch: int
    energy: float
    action: float
    seed: CotangentState
    anchor_x2: float
    phase_shift: float
    phase_shift_alt: float  # re-estimate at a shorter matching time
    decay_rate: float
    t_reliable: float
    t_span: float
    sigma_grid: np.ndarray
    states: np.ndarray
    footpoint_minus: CotangentState
    footpoint_plus: CotangentState
    _eval: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)

    def orbit_states(self, sigma) -> np.ndarray:
        """Orbit samples (n, 4) at arbitrary sigma, tails included."""
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        return self._eval(sigma)


# ---------------------------------------------------------------------------
# periodic orbit


def _newton_1d(f, x0: float, tol: float = 1e-13, max_iter: int = 40) -> float:
    x = float(x0)
    for _ in range(max_iter):
        fx = f(x)
        h = 1e-7 * max(1.0, abs(x))
        dfx = (f(x + h) - f(x - h)) / (2.0 * h)
        if dfx == 0.0:
            raise NoOrbitFoundError("Newton stalled: zero derivative")
        step = fx / dfx
        x -= step
        if not math.isfinite(x) or abs(x - x0) > 0.5:
            raise NoOrbitFoundError("Newton left the seed neighborhood")
        if abs(step) < tol:
            return x
    raise NoOrbitFoundError("Newton did not converge")


def _monodromy(model: SystemModel, z: CotangentState, period: float, h: float = 1e-7) -> np.ndarray:
    """Finite-difference monodromy matrix of the period map at z."""
    m = model.metric.dim
    u0 = np.concatenate([z.x, z.y])
    n = 2 * m
    M = np.empty((n, n))
    cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12)
    rhs = rhs_unperturbed(model)
    for j in range(n):
        up = u0.copy()
        um = u0.copy()
        up[j] += h
        um[j] -= h
        fp = solve_raw(rhs, up, period, cfg).y[:, -1]
        fm = solve_raw(rhs, um, period, cfg).y[:, -1]
        M[:, j] = (fp - fm) / (2.0 * h)
    return M


HYPERBOLICITY_MARGIN = 1e-3


def find_periodic_orbit(
    model: SystemModel, E: float, x1_seed: float | None = None
) -> PeriodicOrbitData:
    """Closed orbit of the unperturbed system at energy E.

    The orbit position is Newton-refined as a critical point of the reduced
    x1-dynamics; hyperbolicity is certified from the finite-difference
    monodromy. Pass x1_seed to aim at a different equator (the outer torus
    equator is elliptic and is rejected)."""
    metric = model.metric
    chart = action_angle_chart(model)
    J = chart.J_of_E(E)
    seed = metric.equator_x1 if x1_seed is None else float(x1_seed)

    if metric.name == "torus":
        x1 = _newton_1d(lambda u: float(metric.profile(u + 5e-8) - metric.profile(u - 5e-8)), seed)
        w = float(metric.profile(x1))
        p2 = math.sqrt(2.0 * E) * w
        point = CotangentState(np.array([x1 % 1.0, 0.0]), np.array([0.0, p2]))
        period = w / math.sqrt(2.0 * E)
    elif metric.name == "pendulum":
        x1 = _newton_1d(math.sin, seed)
        point = CotangentState(np.array([x1 % (2.0 * math.pi), 0.0]), np.array([0.0, J]))
        period = 1.0 / J
    else:
        raise DomainError(f"unsupported metric {metric.name!r}")

    zret = flow_unperturbed(model, point, period, IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12))
    res = float(
        max(np.max(np.abs(_wrap_diff(zret.x, point.x, metric))), np.max(np.abs(zret.y - point.y)))
    )
    if res > 1e-9:
        raise NoOrbitFoundError(f"period-map residual {res:.2e} too large")

    M = _monodromy(model, point, period)
    eigvals, eigvecs = np.linalg.eig(M)
    order = np.argsort(np.abs(eigvals))
    mu_big = eigvals[order[-1]]
    mu_small = eigvals[order[0]]
    if abs(mu_big) <= 1.0 + HYPERBOLICITY_MARGIN or abs(mu_big.imag) > 1e-6 * abs(mu_big):
        raise NotHyperbolicError(
            f"leading multiplier {mu_big:.6g} is not hyperbolic at energy {E:g}"
        )
    # the symplectic spectrum pairs multipliers as (mu, 1/mu); the dominant
    # eigenvalue is the well-conditioned estimate, the measured small one is
    # only a consistency check on the differenced monodromy
    mu = float(np.real(mu_big))
    if abs(float(np.abs(mu_small)) * mu - 1.0) > 1e-2:
        raise NotHyperbolicError(
            f"monodromy spectrum {mu_big:.6g}, {mu_small:.6g} is not symplectic"
        )
    vu = np.real(eigvecs[:, order[-1]])
    vs = np.real(eigvecs[:, order[0]])
    return PeriodicOrbitData(
        energy=float(E),
        point=point,
        period=float(period),
        floquet_multipliers=(mu, 1.0 / mu),
        unstable_dir=vu / np.linalg.norm(vu),
        stable_dir=vs / np.linalg.norm(vs),
        residual=res,
    )


def _wrap_diff(xa, xb, metric) -> np.ndarray:
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    out = np.empty_like(xa)
    for j, per in enumerate(metric.periods):
        out[..., j] = (xa[..., j] - xb[..., j] + 0.5 * per) % per - 0.5 * per
    return out


# ---------------------------------------------------------------------------
# homoclinic branches

T_RELIABLE_RATE_UNITS = 10.0
T_SPAN_RATE_UNITS = 31.0


def find_homoclinics(
    model: SystemModel,
    E: float,
    branch: int = 1,
    t_span: float | None = None,
    samples_per_rate_unit: int = 24,
) -> HomoclinicData:
    """One homoclinic loop at energy E, anchored at backward angle 0.

    branch 1 leaves the closed orbit with positive transverse momentum (the
    torus loop wraps the x1 circle in the increasing direction); branch 2 is
    its reflection. The loop is integrated from its section crossing at
    sigma = 0 and continued into the tails by the asymptotic model.
    """
    if branch not in (1, 2):
        raise DomainError("branch must be 1 or 2")
    metric = model.metric
    chart = action_angle_chart(model)
    if E <= chart.energy_offset:
        raise DomainError("no homoclinic below the separatrix regime")
    J = chart.J_of_E(E)
    sign = 1.0 if branch == 1 else -1.0

    if metric.name == "torus":
        c = math.sqrt(2.0 * E)
        w_top = float(metric.profile(0.0))
        p1_top = sign * math.sqrt(2.0 * E * (1.0 - 1.0 / w_top**2))
        seed_x = np.array([0.0, 0.0])
        seed_y = np.array([p1_top, c])
        rate_hint = 2.0 * math.pi * J
        x1_eq = 0.5
    elif metric.name == "pendulum":
        seed_x = np.array([math.pi, 0.0])
        seed_y = np.array([sign * 2.0, J])
        rate_hint = 1.0
        x1_eq = 0.0
    else:
        raise DomainError(f"unsupported metric {metric.name!r}")

    t_rel = T_RELIABLE_RATE_UNITS / rate_hint
    if t_span is None:
        t_span = T_SPAN_RATE_UNITS / rate_hint
    if t_span < t_rel:
        t_rel = float(t_span)

    cfg = IntegratorConfig(rel_tol=1e-13, abs_tol=1e-15)
    rhs = rhs_unperturbed(model)
    u0 = np.concatenate([seed_x, seed_y])
    fwd = solve_raw(rhs, u0, t_rel, cfg, dense=True)
    bwd = solve_raw(rhs, u0, -t_rel, cfg, dense=True)

    def eval_window(sig: np.ndarray) -> np.ndarray:
        out = np.empty(sig.shape + (4,))
        pos = sig >= 0.0
        if np.any(pos):
            out[pos] = fwd.sol(sig[pos]).T
        if np.any(~pos):
            out[~pos] = bwd.sol(sig[~pos]).T
        return out

    # decay rate fitted on the late (but still reliable) forward window; the
    # window starts late enough that curvature corrections ~ e^(-rate sigma)
    # to the pure exponential are below the target accuracy
    fit_grid = np.linspace(0.75 * t_rel, 0.98 * t_rel, 33)
    fit_states = eval_window(fit_grid)
    per0 = metric.periods[0]
    dx1 = (fit_states[:, 0] - x1_eq + 0.5 * per0) % per0 - 0.5 * per0
    d = np.hypot(dx1, fit_states[:, 2])
    if np.any(d <= 0.0):
        raise NotConvergedError("orbit touched the equator inside the window")
    rate_fit = -float(np.polyfit(fit_grid, np.log(d), 1)[0])
    if not (0.2 * rate_hint < rate_fit < 5.0 * rate_hint):
        raise NotConvergedError(
            f"fitted decay rate {rate_fit:.4g} far from the expected {rate_hint:.4g}"
        )

    def make_tail(T_match: float, side: int) -> _TailModel:
        st = eval_window(np.array([side * T_match]))[0]
        x1_rep = x1_eq + per0 * round((st[0] - x1_eq) / per0)
        g = float(metric.dh0_dy(st[:2], st[2:])[1]) - J
        return _TailModel(
            T=side * T_match,
            x1_eq=x1_rep,
            dx1=st[0] - x1_rep,
            p1=st[2],
            x2=st[1],
            p2=st[3],
            g=g,
            rate=rate_fit,
            side=side,
        )

    tail_f = make_tail(t_rel, +1)
    tail_b = make_tail(t_rel, -1)
    beta_minus = tail_b.angle_offset(J)
    beta_plus = tail_f.angle_offset(J)
    anchor = -beta_minus
    a_full = beta_plus - beta_minus

    # re-estimate at a shorter matching time: the two agree once both matching
    # points are in the asymptotic regime
    t_alt = 0.8 * t_rel
    a_alt = make_tail(t_alt, +1).angle_offset(J) - make_tail(t_alt, -1).angle_offset(J)

    def orbit_eval(sig: np.ndarray) -> np.ndarray:
        sig = np.asarray(sig, dtype=float)
        out = np.empty(sig.shape + (4,))
        mid = np.abs(sig) <= t_rel
        if np.any(mid):
            out[mid] = eval_window(sig[mid])
        hi = sig > t_rel
        if np.any(hi):
            out[hi] = tail_f.states(sig[hi], J)
        lo = sig < -t_rel
        if np.any(lo):
            out[lo] = tail_b.states(sig[lo], J)
        out[..., 1] += anchor
        return out

    n = max(257, int(samples_per_rate_unit * 2.0 * T_SPAN_RATE_UNITS) | 1)
    grid = np.linspace(-t_span, t_span, n)
    states = orbit_eval(grid)

    p2_eq = J if metric.name == "pendulum" else math.sqrt(2.0 * E)
    foot_minus = CotangentState(np.array([x1_eq % per0, 0.0]), np.array([0.0, p2_eq]))
    foot_plus = CotangentState(np.array([x1_eq % per0, a_full % 1.0]), np.array([0.0, p2_eq]))

    return HomoclinicData(
        branch=branch,
        energy=float(E),
        action=J,
        seed=CotangentState(seed_x + np.array([0.0, anchor]), seed_y),
        anchor_x2=float(anchor),
        phase_shift=float(a_full),
        phase_shift_alt=float(a_alt),
        decay_rate=rate_fit,
        t_reliable=float(t_rel),
        t_span=float(t_span),
        sigma_grid=grid,
        states=states,
        footpoint_minus=foot_minus,
        footpoint_plus=foot_plus,
        _eval=orbit_eval,
    )


def phase_shift(hom: HomoclinicData, tol: float = 1e-8) -> float:
    """The scattering angle advance a, with a two-truncation consistency check."""
    if abs(hom.phase_shift - hom.phase_shift_alt) > tol:
        raise NotConvergedError(
            "phase shift not converged: "
            f"{hom.phase_shift:.10f} vs {hom.phase_shift_alt:.10f} at the shorter match"
        )
    return hom.phase_shift


def unperturbed_scattering(
    chart: ActionAngleChart, hom: HomoclinicData, zminus: tuple[float, float]
) -> tuple[float, float]:
    """(J, phi) -> (J, phi + a): action preserved, angle advanced by the shift."""
    J, phi = zminus
    if J <= 0.0:
        raise DomainError("action must be positive")
    return (J, (phi + hom.phase_shift) % 1.0)


def homoclinic_csv_rows(hom: HomoclinicData):
    """(sigma, x1, p1, x2, p2) rows for export."""
    for i, s in enumerate(hom.sigma_grid):
        x1, x2, p1, p2 = hom.states[i]
        yield (s, x1, p1, x2, p2)
