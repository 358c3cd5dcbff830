import math

import numpy as np
import pytest

from geodrift.errors import DomainError, NotConvergedError, NotHyperbolicError
from geodrift.invariant import (
    action_angle_chart,
    find_homoclinics,
    find_periodic_orbit,
    homoclinic_csv_rows,
    phase_shift,
    unperturbed_scattering,
)
from geodrift.models import default_model, pendulum_model

MODEL = default_model()
PEND = pendulum_model()


def test_periodic_orbit_basic():
    po = find_periodic_orbit(MODEL, 0.5)
    assert np.allclose(po.point.x, [0.5, 0.0], atol=1e-12)
    assert np.allclose(po.point.y, [0.0, 1.0], atol=1e-12)
    assert math.isclose(po.period, 1.0, rel_tol=1e-12)
    assert po.residual < 1e-10


def test_floquet_multiplier_exact_value():
    # the reduced linearization at the inner equator has exponent 2 pi at
    # every energy, so the multiplier over one period is e^(2 pi)
    for E in (0.5, 2.0):
        po = find_periodic_orbit(MODEL, E)
        assert math.isclose(po.floquet_multipliers[0], math.exp(2 * math.pi), rel_tol=1e-4)
        assert math.isclose(
            po.floquet_multipliers[0] * po.floquet_multipliers[1], 1.0, rel_tol=1e-8
        )
        assert math.isclose(po.rate, 2 * math.pi * math.sqrt(2 * E), rel_tol=1e-4)


def test_period_scales_with_energy():
    for E in (0.5, 1.0, 2.0, 8.0):
        po = find_periodic_orbit(MODEL, E)
        assert math.isclose(po.period, 1.0 / math.sqrt(2 * E), rel_tol=1e-12)


def test_elliptic_equator_rejected():
    with pytest.raises(NotHyperbolicError):
        find_periodic_orbit(MODEL, 0.5, x1_seed=0.0)


def test_pendulum_saddle():
    po = find_periodic_orbit(PEND, 3.0)  # J = sqrt(2)
    J = math.sqrt(2.0)
    assert math.isclose(po.period, 1.0 / J, rel_tol=1e-12)
    # multiplier e^(1/J): unit pendulum exponent over one rotator period
    assert math.isclose(po.floquet_multipliers[0], math.exp(1.0 / J), rel_tol=1e-4)


def test_chart_roundtrip():
    ch = action_angle_chart(MODEL)
    assert ch.J_of_E(0.5) == 1.0
    assert ch.E_of_J(1.0) == 0.5
    assert math.isclose(ch.phi_of_time(0.5, 0.3), 0.3, rel_tol=1e-12)
    chp = action_angle_chart(PEND)
    assert chp.energy_offset == 2.0
    assert math.isclose(chp.J_of_E(3.0), math.sqrt(2.0), rel_tol=1e-15)
    with pytest.raises(DomainError):
        chp.J_of_E(1.0)


def test_homoclinic_tail_bound():
    h = find_homoclinics(MODEL, 0.5, 1)
    sig = h.sigma_grid
    d = np.hypot(np.abs(h.states[:, 0] % 1.0 - 0.5), h.states[:, 2])
    # dist <= C e^(-rate |sigma|) along the whole sampled span
    C = np.max(d * np.exp(h.decay_rate * np.abs(sig)))
    assert C < 20.0
    assert d[0] < 1e-12 and d[-1] < 1e-12


def test_homoclinic_energy_conserved():
    h = find_homoclinics(MODEL, 0.5, 1)
    H = MODEL.metric.h0(h.states[:, :2], h.states[:, 2:])
    assert np.max(np.abs(H - 0.5)) < 1e-11


def test_decay_rate_matches_floquet():
    h = find_homoclinics(MODEL, 0.5, 1)
    po = find_periodic_orbit(MODEL, 0.5)
    assert abs(h.decay_rate - po.rate) < 1e-4 * po.rate


def test_phase_shift_value_and_convergence():
    h = find_homoclinics(MODEL, 0.5, 1)
    a = phase_shift(h)
    assert a < 0.0  # the angle lags: the loop crosses the slow region
    assert abs(h.phase_shift - h.phase_shift_alt) < 1e-9


def test_phase_shift_energy_independent():
    # in angle units the shift is a property of the profile alone
    vals = [find_homoclinics(MODEL, E, 1).phase_shift for E in (0.5, 1.0, 2.0)]
    assert abs(vals[0] - vals[1]) < 1e-10
    assert abs(vals[0] - vals[2]) < 1e-10


def test_branches_are_reflections():
    h1 = find_homoclinics(MODEL, 0.5, 1)
    h2 = find_homoclinics(MODEL, 0.5, 2)
    assert math.isclose(h1.phase_shift, h2.phase_shift, rel_tol=1e-10)
    sig = np.linspace(-1.5, 1.5, 61)
    s1 = h1.orbit_states(sig)
    s2 = h2.orbit_states(sig)
    # x1 -> -x1 (mod 1), p1 -> -p1, identical angle trace
    assert np.max(np.abs(((s1[:, 0] + s2[:, 0]) + 0.5) % 1.0 - 0.5)) < 1e-10
    assert np.max(np.abs(s1[:, 2] + s2[:, 2])) < 1e-10
    assert np.max(np.abs(s1[:, 1] - s2[:, 1])) < 1e-10


def test_branches_geometrically_distinct():
    h1 = find_homoclinics(MODEL, 0.5, 1)
    h2 = find_homoclinics(MODEL, 0.5, 2)
    # away from the equator the two loops pass on opposite sides
    sig = np.linspace(-0.2, 0.2, 41)
    s1 = h1.orbit_states(sig)
    s2 = h2.orbit_states(sig)
    gap = np.min(
        np.abs(s1[:, 2][:, None] - s2[:, 2][None, :])
        + np.abs((s1[:, 0][:, None] - s2[:, 0][None, :] + 0.5) % 1.0 - 0.5)
    )
    assert gap > 0.5


def test_footpoints():
    h = find_homoclinics(MODEL, 0.5, 1)
    assert np.allclose(h.footpoint_minus.x, [0.5, 0.0], atol=1e-12)
    assert np.allclose(h.footpoint_minus.y, [0.0, 1.0], atol=1e-12)
    assert math.isclose(h.footpoint_plus.x[1], h.phase_shift % 1.0, abs_tol=1e-12)


def test_scattering_advances_angle():
    ch = action_angle_chart(MODEL)
    h = find_homoclinics(MODEL, 0.5, 1)
    J, phi = unperturbed_scattering(ch, h, (1.0, 0.25))
    assert J == 1.0
    assert math.isclose(phi, (0.25 + h.phase_shift) % 1.0, abs_tol=1e-12)
    with pytest.raises(DomainError):
        unperturbed_scattering(ch, h, (-1.0, 0.0))


def test_pendulum_separatrix_closed_form():
    h = find_homoclinics(PEND, 3.0, 1)
    sig = np.linspace(-8.0, 8.0, 161)
    s = h.orbit_states(sig)
    assert np.max(np.abs(s[:, 0] - 4.0 * np.arctan(np.exp(sig)))) < 1e-8
    assert np.max(np.abs(s[:, 2] - 2.0 / np.cosh(sig))) < 1e-8
    # rotator angle advances linearly: zero phase shift
    assert abs(h.phase_shift) < 1e-10
    assert math.isclose(h.decay_rate, 1.0, abs_tol=1e-6)


def test_pendulum_below_separatrix_rejected():
    with pytest.raises(DomainError):
        find_homoclinics(PEND, 1.5)


def test_homoclinic_doubling_span_stable():
    h1 = find_homoclinics(MODEL, 0.5, 1)
    h2 = find_homoclinics(MODEL, 0.5, 1, t_span=2 * h1.t_span)
    assert abs(h1.phase_shift - h2.phase_shift) < 1e-8


def test_csv_rows_shape():
    h = find_homoclinics(MODEL, 0.5, 1)
    rows = list(homoclinic_csv_rows(h))
    assert len(rows) == len(h.sigma_grid)
    assert len(rows[0]) == 5


def test_orbit_states_seed_consistency():
    h = find_homoclinics(MODEL, 0.5, 1)
    st = h.orbit_states(np.array([0.0]))[0]
    assert abs(st[0] - h.seed.x[0]) < 1e-12
    assert abs(st[1] - h.seed.x[1]) < 1e-12
    assert abs(st[2] - h.seed.y[0]) < 1e-12
