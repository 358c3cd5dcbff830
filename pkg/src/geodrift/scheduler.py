"""Pseudo-orbit assembly from elementary energy-gain blocks.

One building block is a homoclinic excursion at frozen external phase plus
an inner stretch along the orbit cylinder spending an angle budget L. The
schedulers evolve (J, phi, theta) by the idealized inner map -- J constant
within a block, the cyclic angle advancing by the budget, theta advancing
under the slow flow over the block's scaled duration -- and post the
leading-order gain eps^3 G1 to the scaled-energy ledger. Full numerical
integration of a block is reserved for validate_block.

Angle steering. Budgets live in [a+1, a+2), one full angle period past the
excursion's phase shift a. Handing off to the same angle forces an integer
budget (hold_budget), so a string of blocks under one policy shares a single
constant budget and duration; only the O(eps * n) blocks that switch policy
use a fractional budget. A short fixed-point pass resolves the circular
dependence of the budget on the next theta.

Policies:

* two-map: while theta sits inside the certified flow box, ride the
  certificate's dominant branch at its maximizing angle (action-independent
  by the rescaling identity); elsewhere ride the other branch at the start
  angle phi0. Same-angle strings telescope -- their gains are a Riemann sum
  of a flow derivative of a bounded antiderivative -- so the net over
  ceil(1/eps^2) blocks is the in-box advantage, which clears the floor
  0.5 * eps * tau0 * delta with tau0 = 2 rho, the exact per-visit residence
  of the linear flow in the box (the axial frame column is the field).
* single-map: one branch and one angle throughout, no certificate. The
  telescoping leaves only the boundary term, O(eps^2) net over any horizon;
  this is the control experiment the two-map policy must beat.
* energy-path: greedy tracking of a prescribed physical-energy target. Each
  step scans the candidate handoff angles with the exact budget each would
  use (the gain depends on the budget through the inner stretch) plus a
  one-block lookahead on both branches, picks the candidate landing closest
  to the target among those moving toward it, and waits on the most neutral
  block when the needed sign is absent (counted in the diagnostics).

An epoch ends when the scaled ledger doubles; reinitialize doubles the
reference energy, re-reads the ledger at half its value, and hands back a
start state for the same machinery at eps' = eps/sqrt(2). Chained epochs
give physical energy linear in physical time with an epoch-independent
slope.

Within an epoch the ledger is policed to the scaled band: reaching 2 ends
the epoch (overshoot carried, never clipped), while the waiting strings'
telescoped flutter may dip below 1 by O(eps^2); the default floor 1 - 2 eps^2
absorbs that transient (the scattering window reaches one notch further
down) and anything beyond raises EpochOverflowError.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DomainError,
    EpochOverflowError,
    PathInfeasibleError,
    PrematureReinitError,
)
from .extflow import FlowBox, advance
from .integrate import IntegratorConfig, rhs_scaled, solve_raw
from .invariant import HomoclinicData, find_homoclinics
from .melnikov import A4Report, J_BASE, d_x_v, delta1, g1, g1_profile

# Calibrated from validate_block defects at eps = 0.1 on the default model
# (worst defect / (eps^4 |ln eps|) = 13.4 over schedule and random blocks),
# then doubled and frozen; the defect itself shrinks faster than
# eps^4 |ln eps|, so smaller eps only gains slack.
REMAINDER_CONSTANT = 27.0

ACTION_PAD = 1.05  # overshoot allowance past the certified action window
# Calibrated tracking authority of the path scheduler on the default model
# at eps = 0.1 (about half the slope a one-sided greedy run sustains), well
# above the certified floor rate of the alternating policy.
MAX_PATH_SLOPE = 0.05
WAIT_GRID = 256  # angle grid for the waiting-angle search
PATH_GRID = 32  # angle grid for the energy-path candidate search
DRIFT_GRID = 513  # closed-orbit cumulative grid for the candidate budgets
STUCK_LIMIT = 8  # consecutive sign-less blocks before a path is infeasible
LOOKAHEAD_PASSES = 3  # fixed-point passes of the angle-budget retarget
CHUNK_RATE_SPAN = 3.0  # re-anchor the inner run every ~3 hyperbolic e-folds

_VALIDATE_CONFIG = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)


# ---------------------------------------------------------------------------
# reference orbits and small helpers


_HOM_CACHE: dict[tuple[int, int], tuple[weakref.ref, HomoclinicData]] = {}


def _hom_for(model, branch: int) -> HomoclinicData:
    """Reference loop of the branch at action sqrt(2), cached per metric.

    Every gain evaluation rescales from this orbit, so a schedule costs one
    orbit integration per branch -- shared across epochs, whose models differ
    only in base_energy.
    """
    if branch not in (1, 2):
        raise DomainError(f"branch must be 1 or 2, got {branch}")
    key = (id(model.metric), int(branch))
    hit = _HOM_CACHE.get(key)
    if hit is not None and hit[0]() is model.metric:
        return hit[1]
    if len(_HOM_CACHE) > 16:
        _HOM_CACHE.clear()
    hom = find_homoclinics(model, E=1.0, branch=branch)
    _HOM_CACHE[key] = (weakref.ref(model.metric), hom)
    return hom


def box_measure(box: FlowBox) -> float:
    """Lebesgue measure of a flow box on the torus of external phases."""
    return float(
        2.0 * box.rho * (2.0 * box.sigma) ** (box.dim - 1) * abs(np.linalg.det(box.frame))
    )


def remainder_bound(eps: float) -> float:
    """Per-block error budget of the idealized gain, C * eps^4 |ln eps|."""
    if eps <= 0.0 or eps >= 1.0:
        raise DomainError("eps must lie in (0, 1)")
    return REMAINDER_CONSTANT * eps**4 * abs(math.log(eps))


def _retarget(phi: float, a: float, target: float) -> float:
    """Smallest angle budget in [a+1, a+2) whose handoff lands on target."""
    return a + 1.0 + (target - phi - a - 1.0) % 1.0


def hold_budget(a: float) -> float:
    """The budget in [a+1, a+2) that reopens at the same angle (an integer)."""
    return a + 1.0 + (-a - 1.0) % 1.0


def waiting_angle(model, branch: int, theta, L: float | None = None,
                  n_grid: int = WAIT_GRID) -> float:
    """Angle minimizing the branch's block gain at theta and budget L.

    A same-angle string's net collapses to its telescoped boundary term, so
    the per-block value at the waiting angle is pure opportunity cost: the
    smaller (more negative) it is where the in-box blocks run, the larger the
    advantage the gaining branch accumulates per box visit. L defaults to the
    string's own hold budget.
    """
    hom = _hom_for(model, branch)
    if L is None:
        L = hold_budget(hom.phase_shift)
    phis = (np.arange(n_grid) + 0.5) / n_grid
    vals = g1_profile(model, hom, phis, E=1.0, theta=theta, L=L)
    return float(phis[int(np.argmin(vals))])


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class BuildingBlock:
    """One excursion-plus-inner-stretch unit of the pseudo-orbit ledger."""

    branch: int
    pre_state: tuple[float, float, tuple[float, ...]]  # (J, phi, theta)
    L: float
    scaled_duration: float  # (L - a) / J
    predicted_gain: float  # eps^3 * G1 at the pre-state
    remainder_bound: float  # C * eps^4 |ln eps|


@dataclass(frozen=True, eq=False)
class Schedule:
    """Blocks plus the bookkeeping ledgers they generate.

    h_scaled[k] is the scaled energy before block k (so h_scaled has one
    more entry than blocks and consecutive entries differ by exactly the
    block's predicted gain); h_physical = base_energy * h_scaled; t_physical
    advances by eps * scaled_duration per block, matching the slow flow's
    clock, so theta_path[k+1] = advance(theta_path[k], t step).
    """

    policy_tag: str
    model: object
    epsilon: float
    base_energy: float
    blocks: tuple[BuildingBlock, ...]
    h_scaled: np.ndarray
    h_physical: np.ndarray
    t_physical: np.ndarray
    theta_path: np.ndarray
    end_state: tuple[float, float, tuple[float, ...]]
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.blocks)
        for name in ("h_scaled", "h_physical", "t_physical", "theta_path"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.shape[0] != n + 1:
                raise DomainError(f"{name} must hold one entry per block boundary")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite entries")

    @property
    def net_gain(self) -> float:
        return float(self.h_scaled[-1] - self.h_scaled[0])


@dataclass(frozen=True)
class EpochStart:
    """Hand-off produced by reinitialize: the next epoch's opening data."""

    model: object
    epsilon: float
    state: tuple[float, float, tuple[float, ...]]  # (J, phi, theta)
    t_physical: float


@dataclass(frozen=True, eq=False)
class EnergyPath:
    """Target physical energy versus physical time, with a slope budget."""

    grid: np.ndarray
    values: np.ndarray
    slope_bound: float
    floor: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.ndim != 1 or grid.size < 2 or values.shape != grid.shape:
            raise DomainError("path needs matching 1-d grid and values with >= 2 samples")
        if not np.all(np.diff(grid) > 0.0):
            raise DomainError("path grid must be strictly increasing")
        if self.slope_bound < 0.0:
            raise DomainError("slope bound must be nonnegative")
        if np.min(values) < self.floor - 1e-12:
            raise DomainError("path dips below its energy floor")
        slopes = np.diff(values) / np.diff(grid)
        if np.max(np.abs(slopes)) > self.slope_bound * (1.0 + 1e-9) + 1e-15:
            raise DomainError("sampled path slope exceeds the declared bound")

    def target(self, t) -> np.ndarray | float:
        out = np.interp(t, self.grid, self.values)
        if np.ndim(out) == 0:
            return float(out)
        return out


@dataclass(frozen=True)
class BlockValidation:
    """Measured versus predicted energy change of one integrated block."""

    measured: float
    predicted: float
    remainder_bound: float

    @property
    def defect(self) -> float:
        return abs(self.measured - self.predicted)

    @property
    def within(self) -> bool:
        return self.defect <= 2.0 * self.remainder_bound


# ---------------------------------------------------------------------------
# block construction


def _action_window(model, report: A4Report | None) -> tuple[float, float]:
    # The lower edge sits 3 eps^2 below the scaled band: a waiting string's
    # telescoped flutter swings the ledger by up to eps^2 osc(V)/duration, so
    # the window must admit the transient before the policy floor (2 eps^2
    # below the band) cuts the schedule off.
    eps = model.epsilon
    lo = math.sqrt(2.0 * max(1.0 - 3.0 * eps * eps, 0.025)) * (1.0 - 1e-12)
    hi = 2.0
    if report is not None and report.extension_margins:
        hi = max(hi, max(report.extension_margins))
    return lo, hi * ACTION_PAD


def make_block(model, report: A4Report | None, j: int, state, L: float) -> BuildingBlock:
    """Building block at (J, phi, theta) on branch j with angle budget L.

    The gain is the rescaled block functional times eps^3; the remainder
    bound is the frozen constant times eps^4 |ln eps|. The action must lie
    in the scattering window [sqrt(2 (1 - eps^2)), top], where the top is
    the certificate's extension range (plus an overshoot pad) -- the lower
    slack admits the waiting strings' flutter, the upper the final block's
    overshoot before re-initialization.
    """
    J, phi, theta = state
    J = float(J)
    theta = np.atleast_1d(np.asarray(theta, dtype=float)) % 1.0
    if theta.size != model.external.dim:
        raise DomainError("theta dimension does not match the external flow")
    lo, hi = _action_window(model, report)
    if not lo <= J <= hi:
        raise DomainError(
            f"action {J:.6f} outside the scattering window [{lo:.6f}, {hi:.6f}]"
        )
    hom = _hom_for(model, j)
    eps = model.epsilon
    phi = float(phi) % 1.0
    sample = g1(model, hom, E=0.5 * J * J, s=phi / J, theta=theta, L=float(L))
    return BuildingBlock(
        branch=int(j),
        pre_state=(J, phi, tuple(float(t) for t in theta)),
        L=float(L),
        scaled_duration=(float(L) - hom.phase_shift) / J,
        predicted_gain=eps**3 * sample.value,
        remainder_bound=remainder_bound(eps),
    )


# ---------------------------------------------------------------------------
# ledger accumulation shared by the policies


class _Ledger:
    """Sequential block accumulation with the idealized inner map."""

    def __init__(self, model, start, t_start: float):
        J, phi, theta = start
        self.model = model
        self.eps = model.epsilon
        self.J = float(J)
        self.phi = float(phi) % 1.0
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float)) % 1.0
        self.h = 0.5 * self.J * self.J
        self.blocks: list[BuildingBlock] = []
        self.h_path = [self.h]
        self.t_path = [float(t_start)]
        self.theta_path = [self.theta.copy()]

    def push(self, block: BuildingBlock) -> None:
        self.blocks.append(block)
        self.h = self.h + block.predicted_gain
        self.h_path.append(self.h)
        dt = self.eps * block.scaled_duration
        self.t_path.append(self.t_path[-1] + dt)
        self.theta = advance(self.model.external, self.theta, dt) % 1.0
        self.theta_path.append(self.theta.copy())
        self.phi = (self.phi + block.L) % 1.0
        self.J = math.sqrt(2.0 * self.h)

    def finish(self, policy_tag: str, diagnostics: dict) -> Schedule:
        h = np.array(self.h_path)
        return Schedule(
            policy_tag=policy_tag,
            model=self.model,
            epsilon=self.eps,
            base_energy=self.model.base_energy,
            blocks=tuple(self.blocks),
            h_scaled=h,
            h_physical=self.model.base_energy * h,
            t_physical=np.array(self.t_path),
            theta_path=np.array(self.theta_path),
            end_state=(self.J, self.phi, tuple(float(t) for t in self.theta)),
            diagnostics=diagnostics,
        )


def _budget_fixpoint(ledger: _Ledger, a: float, choose_target) -> tuple[float, bool]:
    """Resolve the circular dependence of the budget on the next theta.

    choose_target maps the predicted next theta to the angle the next block
    should open at; the budget that lands there moves theta, which can move
    the choice. Returns the settled budget and whether it settled.
    """
    L = hold_budget(a)
    for _ in range(LOOKAHEAD_PASSES):
        theta_next = advance(
            ledger.model.external, ledger.theta, ledger.eps * (L - a) / ledger.J
        )
        L_new = _retarget(ledger.phi, a, choose_target(theta_next % 1.0))
        if abs(L_new - L) < 1e-12:
            return L_new, True
        L = L_new
    return L, False


# ---------------------------------------------------------------------------
# policies


def schedule_two_map(
    model,
    report: A4Report,
    start,
    horizon_blocks: int | None = None,
    *,
    phi0: float | None = None,
    until_doubling: bool = False,
    floor: float | None = None,
    t_start: float = 0.0,
) -> Schedule:
    """Alternate certified gaining blocks with waiting blocks.

    While theta sits in the certificate's flow box the block rides the
    dominant branch at the maximizing angle (the rescaling identity makes
    that angle action-independent); elsewhere it rides the other branch at
    phi0, by default the start state's angle. Runs horizon_blocks blocks,
    default ceil(1/eps^2); with until_doubling=True it stops at the first
    ledger value >= 2 instead (the overshoot is carried, not clipped).
    Leaving the scaled band prematurely raises EpochOverflowError.
    """
    if report.indeterminate or report.margin <= 0.0:
        raise DomainError("two-map policy needs a certificate with a positive margin")
    eps = model.epsilon
    n1 = math.ceil(1.0 / eps**2) if horizon_blocks is None else int(horizon_blocks)
    if n1 <= 0:
        raise DomainError("horizon must be positive")
    box = report.flow_box
    dom = report.dominant_branch
    oth = 3 - dom
    hom_dom = _hom_for(model, dom)
    hom_oth = _hom_for(model, oth)
    phi0 = float(start[1]) % 1.0 if phi0 is None else float(phi0) % 1.0
    phi_star = report.phi_star
    floor = 1.0 - 2.0 * eps * eps if floor is None else float(floor)

    led = _Ledger(model, start, t_start)
    gaining = waiting = transitions = open_budgets = 0
    prev_inside = None
    doubled = False
    for n in range(n1):
        inside = bool(box.contains(led.theta))
        if prev_inside is not None and inside != prev_inside:
            transitions += 1
        prev_inside = inside
        j = dom if inside else oth
        hom = hom_dom if inside else hom_oth
        a = hom.phase_shift

        def choose_target(theta_next):
            return phi_star if bool(box.contains(theta_next)) else phi0

        L, settled = _budget_fixpoint(led, a, choose_target)
        if not settled:
            open_budgets += 1
        block = make_block(model, report, j, (led.J, led.phi, led.theta), L)
        led.push(block)
        gaining += inside
        waiting += not inside
        if led.h >= 2.0:
            if until_doubling:
                doubled = True
                break
            raise EpochOverflowError(
                f"scaled energy reached {led.h:.6f} at block {n}", block_index=n
            )
        if led.h < floor:
            raise EpochOverflowError(
                f"scaled energy fell to {led.h:.6f} below the floor {floor:.6f}"
                f" at block {n}",
                block_index=n,
            )
    if until_doubling and not doubled:
        raise EpochOverflowError(
            f"scaled energy stayed below 2 over {n1} blocks", block_index=n1 - 1
        )

    tau0 = 2.0 * box.rho
    u_span = led.t_path[-1] - led.t_path[0]
    diagnostics = {
        "gaining_blocks": gaining,
        "waiting_blocks": waiting,
        "transitions": transitions,
        "expected_transitions": u_span * box_measure(box) / box.rho,
        "open_budgets": open_budgets,
        "box_measure": box_measure(box),
        "tau0": tau0,
        "certified_floor": 0.5 * eps * tau0 * report.delta,
        "phi0": phi0,
        "phi_star": phi_star,
        "doubled": int(doubled),
    }
    return led.finish("two-map", diagnostics)


def schedule_single_map(
    model,
    j: int,
    start,
    horizon_blocks: int | None = None,
    *,
    phi0: float | None = None,
    t_start: float = 0.0,
) -> Schedule:
    """Constant-branch, constant-angle schedule: the telescoping control.

    Every handoff retargets the same angle phi0 (default the start state's
    angle), so after the first block the budget is the constant hold value
    and the gains form a Riemann sum of a flow derivative; the net change
    stays O(eps^2) no matter the horizon (default ceil(1/eps) blocks).
    """
    eps = model.epsilon
    n = math.ceil(1.0 / eps) if horizon_blocks is None else int(horizon_blocks)
    if n <= 0:
        raise DomainError("horizon must be positive")
    hom = _hom_for(model, j)
    a = hom.phase_shift
    phi0 = float(start[1]) % 1.0 if phi0 is None else float(phi0) % 1.0
    led = _Ledger(model, start, t_start)
    for _ in range(n):
        L = _retarget(led.phi, a, phi0)
        block = make_block(model, None, j, (led.J, led.phi, led.theta), L)
        led.push(block)
    return led.finish("single-map", {"phi0": phi0})


def reinitialize(schedule: Schedule) -> EpochStart:
    """Open the next epoch after the scaled ledger doubled.

    The reference energy doubles, eps shrinks by sqrt(2), and the ledger
    re-reads at half its final value (carrying any overshoot), so the
    physical energy is continuous across the seam by construction.
    """
    h_end = float(schedule.h_scaled[-1])
    if h_end < 2.0 - 1e-12:
        raise PrematureReinitError(
            f"scaled energy {h_end:.6f} has not doubled; cannot re-initialize"
        )
    new_model = replace(schedule.model, base_energy=2.0 * schedule.base_energy)
    h_new = 0.5 * h_end
    _, phi_end, theta_end = schedule.end_state
    return EpochStart(
        model=new_model,
        epsilon=new_model.epsilon,
        state=(math.sqrt(2.0 * h_new), phi_end, theta_end),
        t_physical=float(schedule.t_physical[-1]),
    )


def grow_through_doublings(
    model,
    report: A4Report,
    start,
    n_epochs: int,
    *,
    phi0: float | None = None,
    max_blocks_per_epoch: int | None = None,
    t_start: float = 0.0,
) -> list[Schedule]:
    """Chain two-map epochs through n_epochs energy doublings.

    The waiting angle phi0 (default the start state's angle) is re-imposed
    at every epoch: the seam hands over whatever angle the final block left,
    and the first retarget of the new epoch swings back onto phi0.
    """
    if n_epochs <= 0:
        raise DomainError("need at least one epoch")
    if phi0 is None:
        phi0 = float(start[1]) % 1.0
    out: list[Schedule] = []
    for _ in range(n_epochs):
        eps = model.epsilon
        if max_blocks_per_epoch is None:
            tau0 = 2.0 * report.flow_box.rho
            cap = math.ceil(4.0 / (eps**3 * tau0 * report.delta))
        else:
            cap = int(max_blocks_per_epoch)
        sched = schedule_two_map(
            model,
            report,
            start,
            horizon_blocks=cap,
            phi0=phi0,
            until_doubling=True,
            t_start=t_start,
        )
        out.append(sched)
        seam = reinitialize(sched)
        model, start, t_start = seam.model, seam.state, seam.t_physical
    return out


def _drift_cumulative(model, hom: HomoclinicData, phi: float, theta) -> tuple[np.ndarray, np.ndarray]:
    """Closed-orbit gain integral, cumulative over the angle window.

    Trapezoid accumulation of the frozen-theta integrand along the orbit
    cylinder from the phase shift a out to a+2, covering every admissible
    budget; the energy-path selector interpolates it to price candidate
    budgets in one sweep. Selection only -- the chosen block is re-priced
    exactly by make_block.
    """
    a = hom.phase_shift
    alphas = np.linspace(a, a + 2.0, DRIFT_GRID)
    x = np.stack(
        [np.full(DRIFT_GRID, float(hom.footpoint_minus.x[0])), phi + alphas], axis=-1
    )
    vals = np.atleast_1d(d_x_v(model, x, theta))
    seg = 0.5 * (vals[1:] + vals[:-1]) * np.diff(alphas) / hom.action
    return alphas, np.concatenate([[0.0], np.cumsum(seg)])


def deliverable_rate(report: A4Report, hold_duration: float) -> float:
    """Certified physical energy slope floor of the two-map policy.

    The floor 0.5 * eps * tau0 * delta per ceil(1/eps^2) blocks, divided by
    their physical duration eps * n1 * hold_duration, is independent of eps.
    hold_duration is the per-block scaled duration (L - a) / J of the policy's
    hold budget. Chained epochs therefore grow at least linearly in physical
    time at this slope.
    """
    tau0 = 2.0 * report.flow_box.rho
    return 0.5 * tau0 * report.delta / hold_duration


def schedule_energy_path(
    model,
    report: A4Report,
    path: EnergyPath,
    start=None,
    *,
    phi_grid: int = PATH_GRID,
    t_start: float | None = None,
) -> Schedule:
    """Greedy block selection tracking a prescribed physical-energy path.

    Each step prices every candidate handoff angle with the budget it would
    actually receive -- the gain depends on the budget through the inner
    stretch -- plus a one-block lookahead on both branches at the hold
    budget, and picks the pair landing closest to the target among those
    moving toward it. When no candidate moves the right way (the flow
    derivative of the weight pins the sign until theta crosses its zero
    set), the most neutral candidate waits it out and the event is counted;
    a coupling with no sign authority at all (e.g. no external dependence)
    runs out of patience after STUCK_LIMIT consecutive such blocks and
    raises PathInfeasibleError. The tracking constant
    D = max |H_phys - target| * sqrt(target) is reported.
    """
    eps = model.epsilon
    base = model.base_energy
    if path.floor < base * (1.0 - 1e-9):
        raise DomainError("path floor below the model's base energy")
    if float(np.max(path.values)) > 2.0 * base * (1.0 + 1e-9):
        raise DomainError("path exceeds the single-epoch energy band")
    homs = {1: _hom_for(model, 1), 2: _hom_for(model, 2)}
    holds = {j: hold_budget(h.phase_shift) for j, h in homs.items()}
    dom = report.dominant_branch
    if path.slope_bound > MAX_PATH_SLOPE:
        raise PathInfeasibleError(
            f"path slope bound {path.slope_bound:.5f} exceeds the tracking"
            f" authority {MAX_PATH_SLOPE:.5f}"
        )
    psis = (np.arange(phi_grid) + 0.5) / phi_grid
    if t_start is None:
        t_start = float(path.grid[0])
    if start is None:
        theta0 = np.asarray(report.theta0)
        start = (J_BASE, waiting_angle(model, 3 - dom, theta0), theta0)
    led = _Ledger(model, start, t_start)

    branch = dom
    no_loser = no_gainer = stuck = 0
    t_end = float(path.grid[-1])
    while led.t_path[-1] < t_end - 1e-12:
        hom = homs[branch]
        a = hom.phase_shift
        if abs(led.J - hom.action) >= 1e-12 and not model.metric.homogeneous:
            raise DomainError(
                "path tracking away from the reference action needs a"
                " homogeneous metric"
            )
        fac = 1.0 if abs(led.J - hom.action) < 1e-12 else hom.action / led.J
        # price this block at every candidate budget in one sweep
        Ls = a + 1.0 + (psis - led.phi - a - 1.0) % 1.0
        jump = delta1(model, hom, E=led.h, s=led.phi / led.J, theta=led.theta).value
        alphas, cum = _drift_cumulative(model, hom, led.phi, led.theta)
        gain_now = eps**3 * (jump + fac * np.interp(Ls, alphas, cum))
        h_phys_now = base * led.h
        # one-block lookahead at the hold budget, both branches, with the
        # slow phase frozen at the mid-budget prediction
        theta_hat = advance(model.external, led.theta, eps * 1.5 / led.J) % 1.0
        t2 = {}
        menu = {}
        for jb, hb in homs.items():
            menu[jb] = eps**3 * g1_profile(
                model, hb, psis, E=led.h, theta=theta_hat, L=holds[jb]
            )
            t2[jb] = (
                led.t_path[-1]
                + eps * (Ls - a) / led.J
                + eps * (holds[jb] - hb.phase_shift) / led.J
            )
        t_probe = led.t_path[-1] + eps * (float(np.mean(Ls)) - a) / led.J
        need = float(path.target(t_probe)) - h_phys_now
        best = None
        fallback = None
        any_toward = False
        for jb in homs:
            totals = base * (gain_now + menu[jb])
            err = np.abs(h_phys_now + totals - path.target(t2[jb]))
            toward = totals > 0.0 if need > 0.0 else totals < 0.0
            k_fb = int(np.argmin(np.abs(totals)))
            if fallback is None or abs(totals[k_fb]) < fallback[0]:
                fallback = (abs(totals[k_fb]), jb, float(psis[k_fb]))
            if np.any(toward):
                any_toward = True
                masked = np.where(toward, err, np.inf)
                k = int(np.argmin(masked))
                if best is None or masked[k] < best[0]:
                    best = (masked[k], jb, float(psis[k]))
        if not any_toward:
            if abs(need) > 1e-9 * base:
                if need > 0.0:
                    no_gainer += 1
                else:
                    no_loser += 1
                stuck += 1
                if stuck >= STUCK_LIMIT:
                    raise PathInfeasibleError(
                        f"no block on the angle grid moves the ledger toward"
                        f" the target for {stuck} consecutive blocks near"
                        f" t = {led.t_path[-1]:.4f}"
                    )
            pick = (fallback[1], fallback[2])
        else:
            stuck = 0
            pick = (best[1], best[2])
        L = _retarget(led.phi, a, pick[1])
        block = make_block(model, report, branch, (led.J, led.phi, led.theta), L)
        led.push(block)
        branch = pick[0]

    h_phys = base * np.array(led.h_path)
    targets = np.asarray(path.target(np.array(led.t_path)), dtype=float)
    dev = np.abs(h_phys - targets)
    tracking_d = float(np.max(dev * np.sqrt(targets)))
    diagnostics = {
        "tracking_D": tracking_d,
        "max_deviation": float(np.max(dev)),
        "final_deviation": float(dev[-1]),
        "no_losing_block": no_loser,
        "no_gaining_block": no_gainer,
        "rate_cap": MAX_PATH_SLOPE,
        "certified_floor_rate": deliverable_rate(
            report, (holds[dom] - homs[dom].phase_shift) / J_BASE
        ),
    }
    return led.finish("energy-path", diagnostics)


# ---------------------------------------------------------------------------
# end-to-end validation of one block


def _scaled_orbit_state(hom: HomoclinicData, sigma: float, c: float) -> np.ndarray:
    """Homoclinic state at orbit time sigma for action c * reference action.

    For a momentum-homogeneous metric the rescaled loop is exact: same
    spatial curve traversed c times faster with momenta scaled by c.
    """
    st = hom.orbit_states(np.array([c * sigma]))[0]
    return np.array([st[0], st[1], c * st[2], c * st[3]])


def validate_block(model, block: BuildingBlock) -> BlockValidation:
    """Integrate the coupled scaled flow through one block and compare.

    The excursion is entered at matching time -T on the loop (T chosen as
    in the finite-eps jump probe) with the slow phase arranged to cross
    theta at the jump, and a matched control segment along the orbit
    cylinder removes the pre-excursion baseline. Past min(T, S), where
    S = (L - a)/J ends the angle budget, the inner stretch is measured in
    sub-segments re-anchored on the cylinder every few hyperbolic e-folds:
    a single shot would let the cylinder's own exponential shear amplify
    the eps^2 forcing into an escape, which is a property of naive forward
    integration, not of the shadowing orbits the ledger models. The total
    measured change of H_eps = H0 + eps^2 V should match the block's
    predicted gain within twice the remainder bound.
    """
    eps = model.epsilon
    J, phi, theta = block.pre_state
    theta = np.asarray(theta, dtype=float)
    hom = _hom_for(model, block.branch)
    c = J / hom.action
    if abs(c - 1.0) > 1e-12 and not model.metric.homogeneous:
        raise DomainError(
            "validation away from the reference action needs a homogeneous metric"
        )
    rate = hom.decay_rate * c
    T = max(5.0, 1.2 * abs(math.log(eps))) / rate
    T = min(T, hom.t_reliable / c)
    a = hom.phase_shift
    S = (block.L - a) / J

    def h_eps(u: np.ndarray) -> float:
        x, p, th = u[:2], u[2:4], u[4:]
        return float(model.metric.h0(x, p) + eps * eps * model.potential.value(x, th % 1.0))

    def run(x, p, th, span: float) -> float:
        u0 = np.concatenate([np.asarray(x, float), np.asarray(p, float), np.asarray(th, float)])
        sol = solve_raw(rhs_scaled(model, eps), u0, span, _VALIDATE_CONFIG)
        return h_eps(sol.y[:, -1]) - h_eps(u0)

    theta_start = advance(model.external, theta, -eps * T)
    t_cut = min(T, S)
    st = _scaled_orbit_state(hom, -T, c)
    d_hom = run((st[0], st[1] + phi), st[2:], theta_start, T + t_cut)
    fm = hom.footpoint_minus
    d_ctrl = run((fm.x[0], phi - J * T), c * fm.y, theta_start, T)

    d_inner = 0.0
    if S > t_cut:
        n_chunks = max(1, math.ceil(rate * (S - t_cut) / CHUNK_RATE_SPAN))
        edges = np.linspace(t_cut, S, n_chunks + 1)
        fp = hom.footpoint_plus
        for t0, t1 in zip(edges[:-1], edges[1:]):
            d_inner += run(
                (fp.x[0], phi + a + J * t0),
                c * fp.y,
                advance(model.external, theta, eps * t0),
                t1 - t0,
            )

    measured = d_hom - d_ctrl + d_inner
    return BlockValidation(
        measured=measured,
        predicted=block.predicted_gain,
        remainder_bound=block.remainder_bound,
    )


# ---------------------------------------------------------------------------
# export


def schedule_csv_rows(schedule: Schedule) -> tuple[list[str], list[list]]:
    """Header and rows for the per-block ledger table.

    Each row holds the block's pre-state and the ledger values after it.
    """
    d = schedule.theta_path.shape[1]
    header = ["block", "branch", "J", "phi"]
    header += [f"theta{i + 1}" for i in range(d)]
    header += ["H_scaled", "H_physical", "t_physical"]
    rows: list[list] = []
    for k, blk in enumerate(schedule.blocks):
        J, phi, theta = blk.pre_state
        rows.append(
            [k, blk.branch, J, phi, *theta]
            + [
                float(schedule.h_scaled[k + 1]),
                float(schedule.h_physical[k + 1]),
                float(schedule.t_physical[k + 1]),
            ]
        )
    return header, rows


def schedule_summary(schedules) -> dict:
    """JSON-ready summary of one or more chained schedules.

    Reports one record per epoch (policy, eps, block count, the physical
    energy-versus-time slope between its seams) plus the seam list and the
    spread of the slopes across epochs.
    """
    epochs = []
    seams = []
    slopes = []
    for sched in schedules:
        dt = float(sched.t_physical[-1] - sched.t_physical[0])
        dh = float(sched.h_physical[-1] - sched.h_physical[0])
        slope = dh / dt if dt > 0.0 else math.nan
        if dt > 0.0:
            slopes.append(slope)
        epochs.append(
            {
                "policy": sched.policy_tag,
                "epsilon": sched.epsilon,
                "base_energy": sched.base_energy,
                "blocks": len(sched.blocks),
                "t_start": float(sched.t_physical[0]),
                "t_end": float(sched.t_physical[-1]),
                "h_physical_start": float(sched.h_physical[0]),
                "h_physical_end": float(sched.h_physical[-1]),
                "slope": slope,
                "diagnostics": {k: float(v) for k, v in sched.diagnostics.items()},
            }
        )
        seams.append(
            {"t": float(sched.t_physical[-1]), "h_physical": float(sched.h_physical[-1])}
        )
    out = {"epochs": epochs, "seams": seams[:-1]}
    if slopes:
        out["slope_min"] = min(slopes)
        out["slope_max"] = max(slopes)
        out["slope_ratio"] = max(slopes) / min(slopes) if min(slopes) > 0 else math.inf
    return out
