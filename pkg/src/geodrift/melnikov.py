"""Leading-order energy-gain functionals of one homoclinic excursion.

The jump functional compares the coupling derivative along the homoclinic
loop against the same derivative along the orbit it is asymptotic to, with
the external phase frozen:

    jump(J, phi, theta) = int_{-inf}^0 [DV(gamma_phi(v)) - DV(lam(phi + Jv))] dv
                        + int_0^inf  [DV(gamma_phi(v)) - DV(lam(phi + Jv + a))] dv

where DV(x) = grad_theta V(x, theta) . X(theta), gamma_phi is the anchored
homoclinic shifted by phi in the cyclic angle, and lam(alpha) is the closed
orbit at angle alpha. Note the comparison orbit itself switches by the phase
shift a across the excursion; comparing against a single fixed orbit would
lose the angle dependence whenever V is constant on the closed orbit.

The block functional adds the gain along the closed orbit over one angle
window [a, L] after the excursion.

Both are evaluated by composite Gauss-Legendre panels on the orbit samples
(model tails included), with panels aligned so that half the span is a panel
boundary: the reported truncation bound is the actual difference between the
full-span and half-span values.

For the momentum-homogeneous metric the functionals obey the exact scaling
F(J, phi, theta) = (sqrt(2)/J) F(sqrt(2), phi, theta) with the period-1
angle preserved; rescale_check verifies it by independent quadratures.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DomainError,
    InvalidBlockError,
    InvalidSupportError,
    UnsupportedOperationError,
)
from .extflow import FlowBox, advance, build_flow_box, recurrence_profile
from .integrate import IntegratorConfig, rhs_scaled, solve_raw
from .invariant import HomoclinicData, action_angle_chart, find_homoclinics
from .models import BumpPotential, Potential, ScaledSumPotential, SystemModel

J_BASE = math.sqrt(2.0)
GL_POINTS = 12
PANELS_PER_HALF = 62  # even, so the half-span probe lands on a panel boundary


@dataclass(frozen=True)
class MelnikovSample:
    """One evaluation of a gain functional at a scattering configuration."""

    kind: str
    energy: float
    time: float
    action: float
    angle: float
    theta: tuple[float, ...]
    branch: int
    value: float
    truncation_bound: float


@dataclass(frozen=True)
class A4Report:
    """Branch-separation certificate at the base action sqrt(2).

    margin is the worst-case separation sup_phi G1(dominant) - sup_phi
    G1(other) over the sampled flow box around theta0; delta = margin / 2 is
    the certified gain floor. phi_star is the dominant branch's maximizer at
    theta0 (in period-1 angle units; the matching orbit time at action J is
    phi_star / J).
    """

    sup1: tuple[float, float]
    sup2: tuple[float, float]
    margin: float
    delta: float
    phi_star: float
    flow_box: FlowBox
    dominant_branch: int
    indeterminate: bool
    resolution: float
    theta0: tuple[float, ...]
    extension_margins: dict[float, float] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# pointwise derivative along the external field


def d_x_v(model: SystemModel, q, theta) -> np.ndarray | float:
    """grad_theta V(q, theta) . X(theta), batched over leading shape."""
    q = np.asarray(q, dtype=float)
    theta = np.asarray(theta, dtype=float)
    g = model.potential.grad_theta(q, theta % 1.0)
    x = model.external.vec(theta % 1.0)
    out = np.sum(g * x, axis=-1)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# quadrature plumbing


@dataclass(frozen=True)
class _Quadrature:
    nodes: np.ndarray
    weights: np.ndarray
    half: np.ndarray  # mask of |v| <= T/2
    states: np.ndarray
    x1_eq: float


def _build_quadrature(hom: HomoclinicData) -> _Quadrature:
    T = hom.t_span
    gl_x, gl_w = np.polynomial.legendre.leggauss(GL_POINTS)
    edges = np.linspace(0.0, T, PANELS_PER_HALF + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    half_w = 0.5 * (edges[1:] - edges[:-1])
    pos = (mids[:, None] + half_w[:, None] * gl_x[None, :]).ravel()
    w_pos = (half_w[:, None] * gl_w[None, :]).ravel()
    nodes = np.concatenate([-pos[::-1], pos])
    weights = np.concatenate([w_pos[::-1], w_pos])
    states = hom.orbit_states(nodes)
    x1_eq = float(hom.footpoint_minus.x[0])
    return _Quadrature(nodes, weights, np.abs(nodes) <= 0.5 * T, states, x1_eq)


_QUAD_CACHE: dict[int, tuple[weakref.ref, _Quadrature]] = {}


def _quadrature_for(hom: HomoclinicData) -> _Quadrature:
    key = id(hom)
    hit = _QUAD_CACHE.get(key)
    if hit is not None and hit[0]() is hom:
        return hit[1]
    if len(_QUAD_CACHE) > 32:
        _QUAD_CACHE.clear()
    quad = _build_quadrature(hom)
    _QUAD_CACHE[key] = (weakref.ref(hom), quad)
    return quad


def _jump_values(
    model: SystemModel, hom: HomoclinicData, phis: np.ndarray, theta
) -> tuple[np.ndarray, np.ndarray]:
    """Jump functional on an angle grid; returns (values, truncation bounds)."""
    quad = _quadrature_for(hom)
    theta = np.asarray(theta, dtype=float) % 1.0
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    J = hom.action
    a = hom.phase_shift

    x_gamma = np.empty(phis.shape + quad.nodes.shape + (2,))
    x_gamma[..., 0] = quad.states[:, 0]
    x_gamma[..., 1] = quad.states[:, 1][None, :] + phis[:, None]
    x_lam = np.empty_like(x_gamma)
    x_lam[..., 0] = quad.x1_eq
    x_lam[..., 1] = (
        phis[:, None] + J * quad.nodes[None, :] + np.where(quad.nodes > 0.0, a, 0.0)[None, :]
    )
    xvec = model.external.vec(theta)
    integrand = model.potential.grad_theta(x_gamma, theta) @ xvec - (
        model.potential.grad_theta(x_lam, theta) @ xvec
    )
    values = integrand @ quad.weights
    halves = integrand[:, quad.half] @ quad.weights[quad.half]
    bounds = np.abs(values - halves) + 1e-15 * (1.0 + np.abs(values))
    return values, bounds


def _block_extra(
    model: SystemModel, hom: HomoclinicData, phis: np.ndarray, theta, L: float
) -> np.ndarray:
    """Gain along the closed orbit over the angle window [a, L] after the jump."""
    a = hom.phase_shift
    J = hom.action
    theta = np.asarray(theta, dtype=float) % 1.0
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    gl_x, gl_w = np.polynomial.legendre.leggauss(GL_POINTS)
    n_panels = max(8, int(math.ceil(4.0 * (L - a))))
    edges = np.linspace(a / J, L / J, n_panels + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    half_w = 0.5 * (edges[1:] - edges[:-1])
    u = (mids[:, None] + half_w[:, None] * gl_x[None, :]).ravel()
    w = (half_w[:, None] * gl_w[None, :]).ravel()
    x = np.empty(phis.shape + u.shape + (2,))
    x[..., 0] = float(hom.footpoint_minus.x[0])
    x[..., 1] = phis[:, None] + J * u[None, :]
    xvec = model.external.vec(theta)
    return (model.potential.grad_theta(x, theta) @ xvec) @ w


def _action_factor(model: SystemModel, hom: HomoclinicData, J: float) -> float:
    """Exact rescaling factor from the orbit's own action to the requested one."""
    if abs(J - hom.action) < 1e-12:
        return 1.0
    if not model.metric.homogeneous:
        raise DomainError(
            "requested action differs from the orbit's and the metric does not rescale"
        )
    return hom.action / J


# ---------------------------------------------------------------------------
# public functionals


def delta1(model: SystemModel, hom: HomoclinicData, E: float, s: float, theta) -> MelnikovSample:
    """Jump functional at energy E, crossing time s, frozen external phase."""
    chart = action_angle_chart(model)
    J = chart.J_of_E(E)
    phi = (J * s) % 1.0
    fac = _action_factor(model, hom, J)
    vals, bounds = _jump_values(model, hom, np.array([phi]), theta)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    return MelnikovSample(
        kind="delta1",
        energy=float(E),
        time=float(s),
        action=J,
        angle=phi,
        theta=tuple(float(t) for t in th),
        branch=hom.branch,
        value=float(fac * vals[0]),
        truncation_bound=float(abs(fac) * bounds[0]),
    )


DEFAULT_BLOCK_WINDOW = 1.0  # angle turns past the phase shift


def g1(
    model: SystemModel,
    hom: HomoclinicData,
    E: float,
    s: float,
    theta,
    L: float | None = None,
) -> MelnikovSample:
    """Block functional: the jump plus the closed-orbit gain over [a, L]."""
    if L is None:
        L = hom.phase_shift + DEFAULT_BLOCK_WINDOW
    if L <= hom.phase_shift:
        raise InvalidBlockError(
            f"block window L={L:g} must exceed the phase shift {hom.phase_shift:g}"
        )
    base = delta1(model, hom, E, s, theta)
    fac = _action_factor(model, hom, base.action)
    extra = _block_extra(model, hom, np.array([base.angle]), theta, float(L))
    return MelnikovSample(
        kind="g1",
        energy=base.energy,
        time=base.time,
        action=base.action,
        angle=base.angle,
        theta=base.theta,
        branch=base.branch,
        value=base.value + float(fac * extra[0]),
        truncation_bound=base.truncation_bound,
    )


def _g1_grid(
    model: SystemModel, hom: HomoclinicData, phis: np.ndarray, theta, L: float
) -> np.ndarray:
    vals, _ = _jump_values(model, hom, phis, theta)
    return vals + _block_extra(model, hom, phis, theta, L)


def g1_profile(
    model: SystemModel,
    hom: HomoclinicData,
    phis,
    E: float,
    theta,
    L: float | None = None,
) -> np.ndarray:
    """Block-functional values over an angle grid at energy E.

    Vectorized counterpart of g1: one quadrature sweep over all angles, with
    the exact action rescaling applied, so schedulers can scan candidate
    angles without re-integrating the orbit.
    """
    chart = action_angle_chart(model)
    J = chart.J_of_E(E)
    if L is None:
        L = hom.phase_shift + DEFAULT_BLOCK_WINDOW
    if L <= hom.phase_shift:
        raise InvalidBlockError(
            f"block window L={L:g} must exceed the phase shift {hom.phase_shift:g}"
        )
    fac = _action_factor(model, hom, J)
    phis = np.atleast_1d(np.asarray(phis, dtype=float)) % 1.0
    return fac * _g1_grid(model, hom, phis, theta, float(L))


def rescale_check(
    model: SystemModel, hom: HomoclinicData, J: float, phi: float, theta
) -> dict[str, tuple[float, float]]:
    """Both sides of the action-rescaling identity, by independent quadratures.

    hom must be the reference orbit at action sqrt(2); the left entries are
    computed on a freshly integrated orbit at action J, the right entries are
    (sqrt(2)/J) times the reference values at the same angle.
    """
    if not model.metric.homogeneous:
        raise UnsupportedOperationError("rescaling needs a momentum-homogeneous metric")
    if abs(hom.action - J_BASE) > 1e-9:
        raise DomainError("the reference orbit must sit at action sqrt(2)")
    if J <= 0.0:
        raise DomainError("action must be positive")
    phi = float(phi) % 1.0
    hom_j = (
        hom
        if abs(J - J_BASE) < 1e-12
        else find_homoclinics(model, 0.5 * J * J, branch=hom.branch)
    )
    L = hom.phase_shift + DEFAULT_BLOCK_WINDOW
    ratio = J_BASE / J

    d_lhs = float(_jump_values(model, hom_j, np.array([phi]), theta)[0][0])
    d_rhs = ratio * float(_jump_values(model, hom, np.array([phi]), theta)[0][0])
    g_lhs = d_lhs + float(_block_extra(model, hom_j, np.array([phi]), theta, L)[0])
    g_rhs = d_rhs + ratio * float(_block_extra(model, hom, np.array([phi]), theta, L)[0])
    return {"delta1": (d_lhs, d_rhs), "g1": (g_lhs, g_rhs)}


# ---------------------------------------------------------------------------
# branch-separation certificate


def _refine_max(fn, phis: np.ndarray, vals: np.ndarray) -> tuple[float, float]:
    """Golden-section refinement of a grid maximum of a periodic function."""
    n = len(phis)
    i = int(np.argmax(vals))
    lo = phis[(i - 1) % n] + (-1.0 if i == 0 else 0.0)
    hi = phis[(i + 1) % n] + (1.0 if i == n - 1 else 0.0)
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - inv * (hi - lo)
    x2 = lo + inv * (hi - lo)
    f1 = fn(x1 % 1.0)
    f2 = fn(x2 % 1.0)
    for _ in range(60):
        if hi - lo < 1e-12:
            break
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv * (hi - lo)
            f2 = fn(x2 % 1.0)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv * (hi - lo)
            f1 = fn(x1 % 1.0)
    if f1 >= f2:
        return float(x1 % 1.0), float(f1)
    return float(x2 % 1.0), float(f2)


def check_a4(
    model: SystemModel,
    hom1: HomoclinicData,
    hom2: HomoclinicData,
    theta0,
    L: float | None = None,
    phi_grid: int = 512,
    box_rho: float = 0.04,
    box_sigma: float = 0.04,
    j_extension: Sequence[float] = (1.7, 2.0),
    recurrence_radius: float = 0.2,
    recurrence_horizon: float = 60.0,
) -> A4Report:
    """Certify that one homoclinic branch strictly dominates the other.

    Computes sup over the angle of the block functional for both branches at
    theta0, then certifies the separation margin as a minimum over a sampled
    flow box around theta0 and over the action window via exact rescaling
    plus direct spot checks.
    """
    if hom1.branch == hom2.branch:
        raise DomainError("need the two distinct homoclinic branches")
    for h in (hom1, hom2):
        if abs(h.action - J_BASE) > 1e-9:
            raise DomainError("branch comparison is anchored at action sqrt(2)")
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float)) % 1.0
    if L is None:
        L = hom1.phase_shift + DEFAULT_BLOCK_WINDOW
    if L <= hom1.phase_shift:
        raise InvalidBlockError("block window must exceed the phase shift")

    prof = recurrence_profile(
        model.external, theta0, radius=recurrence_radius, horizon=recurrence_horizon,
        a3_mode=True,
    )
    if not prof.observed:
        raise DomainError("theta0 recurrence not observed at the configured horizon")

    phis = (np.arange(phi_grid) + 0.5) / phi_grid
    grid1 = _g1_grid(model, hom1, phis, theta0, L)
    grid2 = _g1_grid(model, hom2, phis, theta0, L)

    def f1(p):
        return float(_g1_grid(model, hom1, np.array([p]), theta0, L)[0])

    def f2(p):
        return float(_g1_grid(model, hom2, np.array([p]), theta0, L)[0])

    arg1, sup1 = _refine_max(f1, phis, grid1)
    arg2, sup2 = _refine_max(f2, phis, grid2)
    # refinement gain doubles as the grid-resolution estimate
    resolution = max(
        1e-9,
        4.0 * (sup1 - float(np.max(grid1))),
        4.0 * (sup2 - float(np.max(grid2))),
    )

    signed = sup1 - sup2
    dominant = 1 if signed >= 0.0 else 2
    hom_dom, hom_oth = (hom1, hom2) if dominant == 1 else (hom2, hom1)
    phi_star = arg1 if dominant == 1 else arg2

    box = build_flow_box(model.external, theta0, box_rho, box_sigma)
    margin = abs(signed)
    for th in box.sample(3, 3):
        dom_val = float(_g1_grid(model, hom_dom, np.array([phi_star]), th, L)[0])
        oth_sup = float(np.max(_g1_grid(model, hom_oth, phis, th, L)))
        margin = min(margin, dom_val - oth_sup)

    indeterminate = margin <= resolution
    delta = max(margin, 0.0) / 2.0

    extension: dict[float, float] = {}
    if not indeterminate:
        corners = np.vstack([theta0[None, :], box.sample(2, 2)])
        for Jx in j_extension:
            hd = find_homoclinics(model, 0.5 * Jx * Jx, branch=hom_dom.branch)
            ho = find_homoclinics(model, 0.5 * Jx * Jx, branch=hom_oth.branch)
            worst = math.inf
            for th in corners:
                dom_val = float(_g1_grid(model, hd, np.array([phi_star]), th, L)[0])
                oth_sup = float(np.max(_g1_grid(model, ho, phis, th, L)))
                worst = min(worst, dom_val - oth_sup)
            extension[float(Jx)] = worst
            if worst < delta:
                indeterminate = True

    return A4Report(
        sup1=(float(sup1), float(arg1)),
        sup2=(float(sup2), float(arg2)),
        margin=float(margin),
        delta=float(delta),
        phi_star=float(phi_star),
        flow_box=box,
        dominant_branch=dominant,
        indeterminate=bool(indeterminate),
        resolution=float(resolution),
        theta0=tuple(float(t) for t in theta0),
        extension_margins=extension,
    )


# ---------------------------------------------------------------------------
# tie-breaking bump

# A round bump cannot separate the branches: the two orbits cross any disk
# through its center along chords of mirrored slope and equal speed, so their
# gain integrals agree exactly. The support is therefore sheared so that its
# long axis lies along the branch-1 chord, which shortens the branch-2 chord.


def _ball_samples(rng, n: int, dim: int, radius: float) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return v * (radius * rng.random((n, 1)) ** (1.0 / dim))


def _config_velocity(model: SystemModel, state: np.ndarray) -> np.ndarray:
    return model.metric.dh0_dy(state[:2], state[2:])


SHEAR_CAP = 1.5  # partial shear keeps the support's x1 reach moderate


def _bump_shear(model: SystemModel, state: np.ndarray) -> float:
    """Shear sending the crossing chord toward the x2 axis, clamped.

    The full shear -v1/v2 would align the support exactly with the branch-1
    chord, but it stretches the support in x1 by the same factor; clamping
    trades some of the branch asymmetry for clearance.
    """
    vel = _config_velocity(model, state)
    if abs(vel[1]) < 1e-12:
        raise InvalidSupportError("branch-1 crossing is tangent to the angle fiber")
    return float(np.clip(-vel[0] / vel[1], -SHEAR_CAP, SHEAR_CAP))


def _x1_window_margins(
    model: SystemModel, hom1: HomoclinicData, x1c: float, reach: float
) -> tuple[float, float]:
    """Clearance of the support's x1 window from the two degenerate circles.

    Both loops wind once around the x1 circle, so no placement avoids the
    other branch at every angle shift; what the support must avoid is the
    closed orbit's circle (the comparison terms of every jump live there,
    and both branches' tails sweep all angles along it) and the antipodal
    circle where the two branches intersect each other and a single angle
    alignment feeds both chords at once.
    """
    per = float(model.metric.periods[0])
    x1_eq = float(hom1.footpoint_minus.x[0])
    mirror = (x1_eq + 0.5 * per) % per
    d_eq = abs((x1c - x1_eq + 0.5 * per) % per - 0.5 * per)
    d_mid = abs((x1c - mirror + 0.5 * per) % per - 0.5 * per)
    return d_eq - reach, d_mid - reach


def bump_site(
    model: SystemModel,
    hom1: HomoclinicData,
    hom2: HomoclinicData,
    phi_center: float | None = None,
    radius_x: float = 0.05,
    clearance: float = 0.03,
) -> tuple[float, float]:
    """Pick (sigma_center, phi_center) for a bump with good clearance.

    Scans branch-1 parameters in the mid excursion, scoring each candidate
    by the clearance of its sheared x1 window from the closed orbit and from
    the branch-intersection circle. If phi_center is given it is kept (the
    caller wants the gain lobe at a specific angle); otherwise the lobe is
    centered at angle 1/2.
    """
    if hom1.branch == hom2.branch:
        raise DomainError("need the two distinct homoclinic branches")
    sig1 = np.linspace(-0.45 * hom1.t_reliable, 0.45 * hom1.t_reliable, 257)
    st1 = hom1.orbit_states(sig1)

    best = None
    for k in range(sig1.size):
        x1c = st1[k, 0] % 1.0
        shear = _bump_shear(model, st1[k])
        reach = radius_x * (1.0 + abs(shear))
        score = min(_x1_window_margins(model, hom1, x1c, reach)) - clearance
        if best is None or score > best[0]:
            best = (score, float(sig1[k]))
    if best is None or best[0] <= 0.0:
        raise InvalidSupportError("no bump site with usable clearance")
    phi = 0.5 if phi_center is None else float(phi_center)
    return best[1], phi


def bump_potential(
    model: SystemModel,
    hom1: HomoclinicData,
    hom2: HomoclinicData,
    sigma_center: float,
    phi_center: float,
    theta_center,
    rho: float,
    radius_x: float = 0.05,
    radius_theta: float = 0.15,
    clearance: float = 0.03,
) -> Potential:
    """Base potential plus a sheared bump riding branch 1 only.

    The bump is centered at the branch-1 configuration at parameter
    sigma_center, angle-shifted by phi_center, sheared along the branch-1
    crossing direction, and oscillating in theta so its derivative along the
    external field is at least rho on the inner third of the support. The
    support's x1 window must clear the closed orbit and the circle where the
    branches cross. The other branch still crosses the support at its own
    angle alignments (the loops wind fully around x1), but along a chord the
    shear leaves short: its gain lobe is smaller than branch 1's by the
    chord ratio, which is what the certificate re-measures after the fact.
    """
    if rho < 0.0:
        raise DomainError("rho must be nonnegative")
    if hom1.branch == hom2.branch:
        raise DomainError("need the two distinct homoclinic branches")
    theta_center = np.atleast_1d(np.asarray(theta_center, dtype=float)) % 1.0
    st = hom1.orbit_states(np.array([float(sigma_center)]))[0]
    center_x = np.array([st[0] % 1.0, (st[1] + phi_center) % 1.0])
    shear = _bump_shear(model, st)
    minv = np.array([[1.0, -shear], [0.0, 1.0]])

    # the sheared support's x1 extent is bounded by radius_x * (1 + |shear|)
    reach = radius_x * (1.0 + abs(shear))
    m_eq, m_mid = _x1_window_margins(model, hom1, float(center_x[0]), reach)
    if m_eq < clearance:
        raise InvalidSupportError(
            f"support too close to the closed orbit: margin {m_eq:.3f} < {clearance:.3f}"
        )
    if m_mid < clearance:
        raise InvalidSupportError(
            "support straddles the branch-intersection circle: "
            f"margin {m_mid:.3f} < {clearance:.3f}"
        )

    bump = BumpPotential(
        center_x=center_x,
        radius_x=radius_x,
        center_theta=theta_center,
        radius_theta=radius_theta,
        amplitude=0.0 if rho == 0.0 else 1.0,
        shear=shear,
    )
    if rho == 0.0:
        return ScaledSumPotential([(1.0, model.potential), (1.0, bump)])

    # calibrate the amplitude so D_X(bump) >= rho on the inner third of the
    # support, where the oscillation term dominates the envelope term
    rng = np.random.default_rng(12345)
    n = 4096
    xs = center_x + _ball_samples(rng, n, 2, radius_x / 3.0) @ minv.T
    ths = (theta_center + _ball_samples(rng, n, theta_center.size, radius_theta / 3.0)) % 1.0
    probe = SystemModel(model.metric, bump, model.external, model.base_energy)
    low = float(np.min(d_x_v(probe, xs, ths)))
    if low <= 0.0:
        raise InvalidSupportError(
            "bump derivative not positive on the inner support; shrink radius_theta"
        )
    bump.amplitude = rho / low
    return ScaledSumPotential([(1.0, model.potential), (1.0, bump)])


# ---------------------------------------------------------------------------
# finite-epsilon consistency probe

_PROBE_CONFIG = IntegratorConfig(rel_tol=1e-13, abs_tol=1e-15)


def energy_jump_probe(
    model: SystemModel, hom: HomoclinicData, s: float, theta, eps: float
) -> tuple[float, float]:
    """Measured vs predicted slow-energy change of one excursion.

    Integrates the coupled slow system along the homoclinic segment and
    subtracts the two matched closed-orbit segments, with the external phase
    arranged to pass through theta at the crossing. Returns (measured,
    eps^3 * jump functional). The difference should shrink like
    eps^4 |ln eps| plus the deviation term eps^(3.8).

    The matching horizon grows like 1.2 |ln eps| in rate units: shorter
    horizons leave a truncated tail, longer ones let the coupled orbit
    escape along the unstable direction (deviation eps^2 e^(rate T)) before
    the bookkeeping closes.
    """
    if eps <= 0.0 or eps >= 1.0:
        raise DomainError("eps must lie in (0, 1)")
    rate = hom.decay_rate
    T = max(5.0, 1.2 * abs(math.log(eps))) / rate
    if T > hom.t_reliable:
        T = hom.t_reliable
    J = hom.action
    phi = (J * float(s)) % 1.0
    theta = np.atleast_1d(np.asarray(theta, dtype=float)) % 1.0
    theta_start = advance(model.external, theta, -eps * T)

    def h_eps(u: np.ndarray) -> float:
        x, p, th = u[:2], u[2:4], u[4:]
        return float(model.metric.h0(x, p) + eps * eps * model.potential.value(x, th % 1.0))

    def run(x, p, th, span: float) -> float:
        u0 = np.concatenate([np.asarray(x, float), np.asarray(p, float), th])
        sol = solve_raw(rhs_scaled(model, eps), u0, span, _PROBE_CONFIG)
        return h_eps(sol.y[:, -1]) - h_eps(u0)

    st = hom.orbit_states(np.array([-T]))[0]
    d_hom = run((st[0], st[1] + phi), st[2:], theta_start, 2.0 * T)
    fm, fp = hom.footpoint_minus, hom.footpoint_plus
    d_lam_m = run((fm.x[0], phi - J * T), fm.y, theta_start, T)
    d_lam_p = run((fp.x[0], phi + hom.phase_shift), fp.y, theta, T)

    chart = action_angle_chart(model)
    predicted = eps**3 * delta1(model, hom, chart.E_of_J(J), s, theta).value
    return d_hom - d_lam_m - d_lam_p, predicted
