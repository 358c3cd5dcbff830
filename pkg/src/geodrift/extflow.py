"""External dynamics on the torus T^d: flows, recurrence diagnostics, and
flow-box geometry.

The default external system is the linear flow with a rationally independent
frequency vector, which is minimal, so every point is uniformly recurrent.
An ODE-defined field on the torus is supported as a second kind; recurrence
for it is certified only empirically over a finite horizon.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from ._util import circdist, wrap01
from .errors import DomainError, InsufficientDataError, ShrinkRequiredError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ExternalFlowModel:
    """A flow on T^d with period-1 coordinates.

    kind is "linear-torus" (field nu, exact advance) or "ode-on-torus"
    (vectorized closure field, integrated advance).
    """

    dim: int
    kind: str
    nu: np.ndarray | None = None
    field: Callable[[np.ndarray], np.ndarray] | None = None
    speed_bound: float = 0.0

    def __post_init__(self):
        if self.kind == "linear-torus":
            nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
            if nu.size != self.dim or not np.any(nu != 0.0):
                raise DomainError("linear torus flow needs a nonzero frequency vector")
            object.__setattr__(self, "nu", nu)
            object.__setattr__(self, "speed_bound", float(np.linalg.norm(nu)))
        elif self.kind == "ode-on-torus":
            if self.field is None:
                raise DomainError("ode-on-torus flow needs a field closure")
            if not self.speed_bound:
                probe = np.random.default_rng(0).random((256, self.dim))
                object.__setattr__(
                    self,
                    "speed_bound",
                    float(np.max(np.linalg.norm(self.vec(probe), axis=-1))),
                )
        else:
            raise DomainError(f"unknown external flow kind {self.kind!r}")

    def vec(self, theta) -> np.ndarray:
        """The vector field X(theta), vectorized over leading shape."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "linear-torus":
            return np.broadcast_to(self.nu, theta.shape).copy()
        return np.asarray(self.field(theta % 1.0), dtype=float)


def linear_torus_flow(dim: int = 2, nu: Sequence[float] | None = None) -> ExternalFlowModel:
    """Default linear flow; the built-in frequencies are rationally independent."""
    if nu is None:
        base = (1.0, GOLDEN, math.sqrt(2.0) - 1.0)
        if dim > len(base):
            raise DomainError("no default frequencies beyond dimension 3")
        nu = base[:dim]
    return ExternalFlowModel(dim=dim, kind="linear-torus", nu=np.asarray(nu, dtype=float))


def ode_torus_flow(
    dim: int = 2,
    fieldfn: Callable[[np.ndarray], np.ndarray] | None = None,
    speed_bound: float = 0.0,
    amplitude: float = 0.6,
    nu: Sequence[float] | None = None,
) -> ExternalFlowModel:
    """Nonlinear flow on the torus. The built-in field perturbs the linear
    frequencies by amplitude-sized waves in the cyclically next coordinate;
    the first component stays >= nu_1 - amplitude > 0 for amplitude < 1, so
    the field has no zeros, but its direction swings and develops slow
    regions as amplitude grows."""
    if fieldfn is None:
        if not (0.0 <= amplitude < 1.0):
            raise DomainError("built-in field needs 0 <= amplitude < 1")
        base = linear_torus_flow(dim, nu).nu
        phases = np.arange(dim) * 0.5 * math.pi

        def fieldfn(theta):
            theta = np.asarray(theta, dtype=float)
            rolled = np.roll(theta, -1, axis=-1)
            return base + amplitude * np.cos(2.0 * math.pi * rolled + phases)

        if speed_bound == 0.0:
            speed_bound = float(np.linalg.norm(base)) + amplitude * math.sqrt(dim)
    return ExternalFlowModel(dim=dim, kind="ode-on-torus", field=fieldfn, speed_bound=speed_bound)


# ---------------------------------------------------------------------------
# flow maps


def advance(flow: ExternalFlowModel, theta, t: float) -> np.ndarray:
    """chi_t(theta). Exact (mod ulp) for the linear kind, integrated otherwise."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    t = float(t)
    if not math.isfinite(t):
        raise DomainError("advance needs finite t")
    if flow.kind == "linear-torus":
        return wrap01(theta + flow.nu * t)
    if t == 0.0:
        return wrap01(theta)
    sol = solve_ivp(
        lambda _s, th: flow.vec(th),
        (0.0, t),
        theta,
        method="DOP853",
        rtol=1e-11,
        atol=1e-12,
        dense_output=False,
    )
    if not sol.success:
        raise DomainError(f"external flow integration failed: {sol.message}")
    return wrap01(sol.y[:, -1])


def flow_trajectory(flow: ExternalFlowModel, theta0, t_grid: np.ndarray) -> np.ndarray:
    """chi_t(theta0) sampled on an increasing grid starting at t_grid[0] >= 0."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    t_grid = np.asarray(t_grid, dtype=float)
    if flow.kind == "linear-torus":
        return wrap01(theta0[None, :] + t_grid[:, None] * flow.nu[None, :])
    sol = solve_ivp(
        lambda _s, th: flow.vec(th),
        (float(t_grid[0]), float(t_grid[-1])),
        theta0,
        method="DOP853",
        rtol=1e-11,
        atol=1e-12,
        t_eval=t_grid,
    )
    if not sol.success:
        raise DomainError(f"external flow integration failed: {sol.message}")
    return wrap01(sol.y.T)


# ---------------------------------------------------------------------------
# recurrence diagnostics


@dataclass(frozen=True)
class RecurrenceProfile:
    """Observed visits of chi_t(theta0) to the ball U(theta0, radius)."""

    intervals: tuple[tuple[float, float], ...]
    max_gap: float
    horizon: float
    radius: float
    observed: bool  # False flags `recurrence-not-observed`


def _torus_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = circdist(a, b)
    return np.sqrt(np.sum(d**2, axis=-1))


def _refine_crossing(tgrid, i, f) -> float:
    return float(brentq(f, tgrid[i], tgrid[i + 1], xtol=1e-12, rtol=1e-13))


def _scan_sublevel(f_grid: np.ndarray, t_grid: np.ndarray, f) -> list[tuple[float, float]]:
    """Intervals where f < 0, refined at the grid sign changes."""
    neg = f_grid < 0.0
    intervals: list[tuple[float, float]] = []
    i = 0
    n = len(t_grid)
    while i < n:
        if neg[i]:
            if i == 0:
                t_in = t_grid[0]
            else:
                t_in = _refine_crossing(t_grid, i - 1, f)
            j = i
            while j + 1 < n and neg[j + 1]:
                j += 1
            if j == n - 1:
                t_out = t_grid[-1]
            else:
                t_out = _refine_crossing(t_grid, j, f)
            intervals.append((t_in, t_out))
            i = j + 1
        else:
            i += 1
    return intervals


def recurrence_profile(
    flow: ExternalFlowModel,
    theta0,
    radius: float,
    horizon: float,
    a3_mode: bool = False,
) -> RecurrenceProfile:
    """Entry/exit times of the orbit of theta0 into the ball around itself.

    max_gap is the longest stretch without a visit, the finite-horizon stand-in
    for the uniform-recurrence return-time bound. A profile with no return
    after the initial exit is flagged observed=False.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float)) % 1.0
    if radius <= 0.0 or horizon <= 0.0:
        raise DomainError("radius and horizon must be positive")
    if a3_mode:
        speed = float(np.linalg.norm(flow.vec(theta0)))
        if speed == 0.0:
            raise DomainError("theta0 is a fixed point of the external field")

    step = radius / max(4.0 * flow.speed_bound, 1e-6)
    n = int(math.ceil(horizon / step)) + 1
    t_grid = np.linspace(0.0, horizon, n)
    traj = flow_trajectory(flow, theta0, t_grid)
    f_grid = _torus_dist(traj, theta0[None, :]) - radius

    def f(t):
        return float(_torus_dist(advance(flow, theta0, t), theta0) - radius)

    intervals = _scan_sublevel(f_grid, t_grid, f)
    # returns after the initial visit containing t=0
    later = [iv for iv in intervals if iv[0] > 0.0]
    observed = len(later) > 0
    gaps = []
    prev_exit = 0.0
    for t_in, t_out in intervals:
        if t_in > prev_exit:
            gaps.append(t_in - prev_exit)
        prev_exit = max(prev_exit, t_out)
    if prev_exit < horizon:
        gaps.append(horizon - prev_exit)
    max_gap = float(max(gaps)) if gaps else 0.0
    return RecurrenceProfile(
        intervals=tuple((float(a), float(b)) for a, b in intervals),
        max_gap=max_gap,
        horizon=float(horizon),
        radius=float(radius),
        observed=observed,
    )


# ---------------------------------------------------------------------------
# flow boxes


@dataclass(frozen=True)
class FlowBox:
    """Product box (flow interval) x (transverse disk) anchored at theta0.

    Coordinates: theta = theta0 + frame @ (t, c1, .., c_{d-1}), |t| <= rho,
    |c_i| <= sigma. The first frame column is the field at theta0, so t is
    measured in flow time for the linear kind.
    """

    center: np.ndarray
    rho: float
    sigma: float
    frame: np.ndarray
    frame_inv: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.frame_inv is None:
            object.__setattr__(self, "frame_inv", np.linalg.inv(self.frame))

    @property
    def dim(self) -> int:
        return self.center.size

    def _best_coords(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Full box coordinates and gauge of the closest integer translate."""
        theta = np.asarray(theta, dtype=float)
        delta = (theta - self.center + 0.5) % 1.0 - 0.5
        best_xi = None
        best_gauge = None
        for k in itertools.product((-1.0, 0.0, 1.0), repeat=self.dim):
            xi = (delta + np.asarray(k)) @ self.frame_inv.T
            gauge = np.maximum(
                np.abs(xi[..., 0]) / self.rho,
                np.max(np.abs(xi[..., 1:]), axis=-1) / self.sigma
                if self.dim > 1
                else 0.0,
            )
            if best_gauge is None:
                best_xi, best_gauge = xi, gauge
            else:
                better = gauge < best_gauge
                best_xi = np.where(better[..., None], xi, best_xi)
                best_gauge = np.where(better, gauge, best_gauge)
        return best_xi, best_gauge

    def coords(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Box coordinates (t, c): flow-axis offset and transverse offsets."""
        xi, _ = self._best_coords(theta)
        return xi[..., 0], xi[..., 1:]

    def gauge(self, theta) -> np.ndarray:
        """< 1 inside, 1 on the boundary, > 1 outside."""
        return self._best_coords(theta)[1]

    def contains(self, theta) -> np.ndarray:
        return self.gauge(theta) <= 1.0

    def sample(self, n_axial: int, n_disk: int) -> np.ndarray:
        """Deterministic product grid of box points, shape (m, d)."""
        ts = np.linspace(-self.rho, self.rho, n_axial)
        if self.dim == 1:
            xi = ts[:, None]
        else:
            cs = np.linspace(-self.sigma, self.sigma, n_disk)
            grids = np.meshgrid(ts, *([cs] * (self.dim - 1)), indexing="ij")
            xi = np.stack([g.ravel() for g in grids], axis=-1)
        return (self.center + xi @ self.frame.T) % 1.0


def _transverse_frame(v: np.ndarray) -> np.ndarray:
    """Columns: v itself, then an orthonormal basis of its complement."""
    d = v.size
    q, _ = np.linalg.qr(np.concatenate([v[:, None], np.eye(d)], axis=1))
    frame = np.concatenate([v[:, None], q[:, 1:d]], axis=1)
    return frame


def build_flow_box(
    flow: ExternalFlowModel,
    theta0,
    rho: float,
    sigma_radius: float,
    density: int = 7,
) -> FlowBox:
    """Flow box at theta0 with half-thickness rho and transverse half-width
    sigma_radius, validated by sampling the field's component along the flow
    axis over the whole box."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float)) % 1.0
    if rho <= 0.0 or sigma_radius <= 0.0:
        raise DomainError("rho and sigma_radius must be positive")
    v = flow.vec(theta0)
    speed = float(np.linalg.norm(v))
    if speed == 0.0:
        raise DomainError("theta0 is a fixed point of the external field")

    def try_box(r: float) -> tuple[FlowBox, float]:
        box = FlowBox(center=theta0, rho=r, sigma=sigma_radius, frame=_transverse_frame(v))
        pts = box.sample(density, density)
        xvals = flow.vec(pts)
        # t-component of X in box coordinates; equals 1 at the center
        tcomp = (xvals @ box.frame_inv.T)[..., 0]
        return box, float(np.min(tcomp))

    box, margin = try_box(rho)
    if margin > 0.0:
        return box
    # bisect for the largest feasible half-thickness
    lo, hi = 0.0, rho
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if mid == 0.0:
            break
        _, m = try_box(mid)
        if m > 0.0:
            lo = mid
        else:
            hi = mid
    raise ShrinkRequiredError(
        f"flow not transverse to the slices at rho={rho:g}", max_rho=lo
    )


# ---------------------------------------------------------------------------
# residence statistics


@dataclass(frozen=True)
class ResidenceBounds:
    """Extremes of in-box visit durations and between-visit gaps.

    In the time units of the external flow itself (the scheduler divides by
    eps when converting to scaled time).
    """

    tau0: float
    tau0p: float
    tau1: float
    tau1p: float

    def __post_init__(self):
        if not (0.0 < self.tau0 <= self.tau0p and 0.0 < self.tau1 <= self.tau1p):
            raise DomainError("residence bounds must satisfy 0 < min <= max")


def residence_bounds(
    flow: ExternalFlowModel, theta0, box: FlowBox, horizon: float
) -> ResidenceBounds:
    """Empirical visit/gap extremes of the orbit of theta0 through the box."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float)) % 1.0
    step = min(box.rho, box.sigma) / max(2.0 * flow.speed_bound, 1e-6)
    n = int(math.ceil(horizon / step)) + 1
    t_grid = np.linspace(0.0, horizon, n)
    traj = flow_trajectory(flow, theta0, t_grid)
    f_grid = box.gauge(traj) - 1.0

    def f(t):
        return float(box.gauge(advance(flow, theta0, t)) - 1.0)

    intervals = _scan_sublevel(f_grid, t_grid, f)
    # complete visits only: strictly inside the horizon
    complete = [iv for iv in intervals if iv[0] > 0.0 and iv[1] < horizon]
    if len(complete) < 3:
        raise InsufficientDataError(
            f"only {len(complete)} complete visits within horizon {horizon:g}"
        )
    durations = [b - a for a, b in complete]
    gaps = [b[0] - a[1] for a, b in zip(complete[:-1], complete[1:])]
    return ResidenceBounds(
        tau0=float(min(durations)),
        tau0p=float(max(durations)),
        tau1=float(min(gaps)),
        tau1p=float(max(gaps)),
    )
