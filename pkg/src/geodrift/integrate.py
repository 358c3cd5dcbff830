"""Flow maps for the unperturbed, coupled, and scaled systems.

All integrators work on flat coordinate vectors:
  unperturbed: (x, y)            of length 2 m
  extended:    (x, y, theta)     of length 2 m + d
  scaled:      (q, p, theta)     of length 2 m + d  (slow phase, time s)

The adaptive path is an embedded Runge-Kutta of order 8(5,3) with dense
output; a fixed-step implicit-midpoint integrator is available for very long
schedules where symmetric energy behavior matters more than local order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, NotConvergedError
from .models import CotangentState, ExtendedState, ScaledState, SystemModel


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "adaptive"  # "adaptive" | "symplectic"
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_step: float = math.inf
    sym_step: float = 1e-3  # fixed step of the implicit-midpoint method
    sym_iters: int = 6

    def __post_init__(self):
        if self.rel_tol <= 0.0 or self.abs_tol <= 0.0:
            raise DomainError("tolerances must be positive")
        if self.method not in ("adaptive", "symplectic"):
            raise DomainError(f"unknown integrator method {self.method!r}")


DEFAULT_CONFIG = IntegratorConfig()


@dataclass(frozen=True)
class Trajectory:
    """Sampled orbit with an energy ledger.

    kind is "unperturbed", "extended", or "scaled"; states rows hold the flat
    coordinate vectors of that kind. For periodic coordinates the rows are the
    raw integrator output (continuous, unwrapped).
    """

    kind: str
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    tolerance: float

    def __post_init__(self):
        if len(self.times) != len(self.states) or len(self.times) != len(self.energy):
            raise DomainError("trajectory arrays must have equal length")
        if np.any(np.diff(self.times) <= 0.0) and len(self.times) > 1:
            raise DomainError("trajectory times must be strictly increasing")


# ---------------------------------------------------------------------------
# right-hand sides


def rhs_unperturbed(model: SystemModel) -> Callable[[float, np.ndarray], np.ndarray]:
    m = model.metric.dim
    metric = model.metric

    def rhs(_t, u):
        x, y = u[:m], u[m : 2 * m]
        return np.concatenate([metric.dh0_dy(x, y), -metric.dh0_dx(x, y)])

    return rhs


def rhs_extended(model: SystemModel) -> Callable[[float, np.ndarray], np.ndarray]:
    m = model.metric.dim
    metric, pot, ext = model.metric, model.potential, model.external

    def rhs(_t, u):
        x, y, th = u[:m], u[m : 2 * m], u[2 * m :]
        dx = metric.dh0_dy(x, y)
        dy = -metric.dh0_dx(x, y) - pot.grad_x(x, th % 1.0)
        dth = ext.vec(th % 1.0)
        return np.concatenate([dx, dy, dth])

    return rhs


def rhs_scaled(model: SystemModel, eps: float) -> Callable[[float, np.ndarray], np.ndarray]:
    m = model.metric.dim
    metric, pot, ext = model.metric, model.potential, model.external
    eps2 = eps * eps

    def rhs(_s, u):
        q, p, th = u[:m], u[m : 2 * m], u[2 * m :]
        dq = metric.dh0_dy(q, p)
        dp = -metric.dh0_dx(q, p) - eps2 * pot.grad_x(q, th % 1.0)
        dth = eps * ext.vec(th % 1.0)
        return np.concatenate([dq, dp, dth])

    return rhs


# ---------------------------------------------------------------------------
# core drivers


def _solve_adaptive(rhs, u0, t: float, cfg: IntegratorConfig, t_eval=None, events=None,
                    dense: bool = False):
    if not math.isfinite(t):
        raise DomainError("integration span must be finite")
    if t == 0.0 and t_eval is None:
        # degenerate span: return the initial point
        class _Z:
            pass

        z = _Z()
        z.t = np.array([0.0])
        z.y = np.asarray(u0, dtype=float)[:, None]
        z.success = True
        z.t_events = [np.array([])] * (len(events) if events else 0)
        z.sol = None
        return z
    kwargs = {}
    if math.isfinite(cfg.max_step):
        kwargs["max_step"] = cfg.max_step
    sol = solve_ivp(
        rhs,
        (0.0, t),
        np.asarray(u0, dtype=float),
        method="DOP853",
        rtol=cfg.rel_tol,
        atol=cfg.abs_tol,
        t_eval=t_eval,
        events=events,
        dense_output=dense,
        **kwargs,
    )
    if not sol.success:
        raise NotConvergedError(f"integration failed: {sol.message}")
    return sol


def _solve_midpoint(rhs, u0, t: float, cfg: IntegratorConfig, t_eval=None):
    """Fixed-step implicit midpoint, fixed-point iterated."""
    if not math.isfinite(t):
        raise DomainError("integration span must be finite")
    u = np.asarray(u0, dtype=float).copy()
    if t == 0.0:
        ts = np.array([0.0])
        return ts, u[None, :].copy()
    n = max(1, int(math.ceil(abs(t) / cfg.sym_step)))
    h = t / n
    out_t = [0.0]
    out_u = [u.copy()]
    want = list(t_eval) if t_eval is not None else None
    for k in range(n):
        mid = u + 0.5 * h * rhs(0.0, u)
        for _ in range(cfg.sym_iters):
            mid = u + 0.5 * h * rhs(0.0, mid)
        u = 2.0 * mid - u
        out_t.append((k + 1) * h)
        out_u.append(u.copy())
    ts = np.asarray(out_t)
    us = np.asarray(out_u)
    if want is not None:
        us = np.stack([_linear_sample(ts, us, tw) for tw in want])
        ts = np.asarray(want, dtype=float)
    return ts, us


def _linear_sample(ts, us, t):
    i = np.searchsorted(ts, t)
    i = min(max(i, 1), len(ts) - 1)
    w = (t - ts[i - 1]) / (ts[i] - ts[i - 1])
    return (1.0 - w) * us[i - 1] + w * us[i]


def _integrate(rhs, u0, t, cfg, t_eval=None):
    """Final state plus optional sample matrix, independent of method."""
    if cfg.method == "symplectic":
        ts, us = _solve_midpoint(rhs, u0, t, cfg, t_eval=t_eval)
        return us[-1], ts, us
    sol = _solve_adaptive(rhs, u0, t, cfg, t_eval=t_eval)
    return sol.y[:, -1], sol.t, sol.y.T


# ---------------------------------------------------------------------------
# public flow maps


def flow_unperturbed(
    model: SystemModel, z: CotangentState, t: float, cfg: IntegratorConfig = DEFAULT_CONFIG
) -> CotangentState:
    """Geodesic flow xi_t(z)."""
    u0 = np.concatenate([z.x, z.y])
    uf, _, _ = _integrate(rhs_unperturbed(model), u0, float(t), cfg)
    m = model.metric.dim
    return model.state(uf[:m], uf[m:])


def flow_extended(
    model: SystemModel, z: ExtendedState, t: float, cfg: IntegratorConfig = DEFAULT_CONFIG
) -> ExtendedState:
    """Coupled flow psi_t(x, y, theta); advances the physical time."""
    u0 = np.concatenate([z.base.x, z.base.y, z.theta])
    uf, _, _ = _integrate(rhs_extended(model), u0, float(t), cfg)
    m = model.metric.dim
    return model.extended(uf[:m], uf[m : 2 * m], uf[2 * m :] % 1.0, z.time + float(t))


def flow_scaled(
    model: SystemModel, zs: ScaledState, s: float, cfg: IntegratorConfig = DEFAULT_CONFIG
) -> ScaledState:
    """Slow-system flow over scaled time s."""
    u0 = np.concatenate([zs.q, zs.p, zs.theta])
    uf, _, _ = _integrate(rhs_scaled(model, zs.epsilon), u0, float(s), cfg)
    m = model.metric.dim
    return ScaledState(
        model.canonical_x(uf[:m]), uf[m : 2 * m], uf[2 * m :] % 1.0, zs.s + float(s), zs.epsilon
    )


def trajectory_unperturbed(
    model: SystemModel,
    z: CotangentState,
    t: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    n_samples: int = 201,
) -> Trajectory:
    u0 = np.concatenate([z.x, z.y])
    t_eval = np.linspace(0.0, float(t), n_samples)
    _, ts, us = _integrate(rhs_unperturbed(model), u0, float(t), cfg, t_eval=t_eval)
    m = model.metric.dim
    energy = model.metric.h0(us[:, :m], us[:, m:])
    return Trajectory("unperturbed", ts, us, energy, cfg.rel_tol)


def trajectory_extended(
    model: SystemModel,
    z: ExtendedState,
    t: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    n_samples: int = 201,
) -> Trajectory:
    u0 = np.concatenate([z.base.x, z.base.y, z.theta])
    t_eval = np.linspace(0.0, float(t), n_samples)
    _, ts, us = _integrate(rhs_extended(model), u0, float(t), cfg, t_eval=t_eval)
    m = model.metric.dim
    energy = model.metric.h0(us[:, :m], us[:, m : 2 * m]) + model.potential.value(
        us[:, :m], us[:, 2 * m :] % 1.0
    )
    return Trajectory("extended", ts + z.time, us, energy, cfg.rel_tol)


def trajectory_scaled(
    model: SystemModel,
    zs: ScaledState,
    s: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    n_samples: int = 201,
) -> Trajectory:
    u0 = np.concatenate([zs.q, zs.p, zs.theta])
    t_eval = np.linspace(0.0, float(s), n_samples)
    _, ts, us = _integrate(rhs_scaled(model, zs.epsilon), u0, float(s), cfg, t_eval=t_eval)
    m = model.metric.dim
    eps2 = zs.epsilon**2
    energy = model.metric.h0(us[:, :m], us[:, m : 2 * m]) + eps2 * model.potential.value(
        us[:, :m], us[:, 2 * m :] % 1.0
    )
    return Trajectory("scaled", ts + zs.s, us, energy, cfg.rel_tol)


def solve_raw(
    rhs,
    u0: np.ndarray,
    t: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    events=None,
    dense: bool = False,
):
    """Low-level access to the adaptive solver (events, dense output)."""
    return _solve_adaptive(rhs, u0, t, cfg, events=events, dense=dense)


def integrate_batch(
    rhs_single: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Integrate a batch of initial conditions as one stacked system.

    rhs_single must be vectorized: given u of shape (n, k) it returns the
    derivative with the same shape. y0 has shape (n, k); the result too.
    """
    y0 = np.asarray(y0, dtype=float)
    n, k = y0.shape

    def rhs_flat(t_, uflat):
        return rhs_single(t_, uflat.reshape(n, k)).reshape(-1)

    uf, _, _ = _integrate(rhs_flat, y0.reshape(-1), float(t), cfg)
    return uf.reshape(n, k)


def rhs_scaled_batch(model: SystemModel, eps: float) -> Callable[[float, np.ndarray], np.ndarray]:
    """Vectorized scaled right-hand side on state rows (q, p, theta)."""
    m = model.metric.dim
    metric, pot, ext = model.metric, model.potential, model.external
    eps2 = eps * eps

    def rhs(_s, U):
        q, p, th = U[..., :m], U[..., m : 2 * m], U[..., 2 * m :] % 1.0
        dq = metric.dh0_dy(q, p)
        dp = -metric.dh0_dx(q, p) - eps2 * pot.grad_x(q, th)
        dth = eps * ext.vec(th)
        return np.concatenate([dq, dp, dth], axis=-1)

    return rhs
