import math

import numpy as np
import pytest

from geodrift.errors import DomainError
from geodrift.integrate import (
    IntegratorConfig,
    flow_extended,
    flow_scaled,
    flow_unperturbed,
    trajectory_extended,
    trajectory_scaled,
    trajectory_unperturbed,
)
from geodrift.models import (
    ExtendedState,
    ScaledState,
    default_model,
    dilate,
    eval_H,
    eval_H0,
    eval_H_scaled,
    from_scaled,
    to_scaled,
    torus_coupling,
    zero_potential,
)

MODEL = default_model()
CFG = IntegratorConfig()


def test_zero_time_is_identity():
    z = MODEL.state([0.3, 0.1], [0.2, 1.1])
    out = flow_unperturbed(MODEL, z, 0.0)
    assert np.allclose(out.x, z.x) and np.allclose(out.y, z.y)


def test_equator_relative_equilibrium():
    # the inner equator is an exact equilibrium of the reduced dynamics:
    # x1 and p1 must not drift at all over a long run
    z = MODEL.state([0.5, 0.0], [0.0, 1.0])
    traj = trajectory_unperturbed(MODEL, z, 100.0, n_samples=101)
    assert np.max(np.abs(traj.states[:, 0] - 0.5)) < 1e-10
    assert np.max(np.abs(traj.states[:, 2])) < 1e-10


def test_energy_drift_long_run():
    z = MODEL.state([0.2, 0.1], [0.3, 1.2])
    traj = trajectory_unperturbed(MODEL, z, 100.0, n_samples=201)
    assert np.max(np.abs(traj.energy - traj.energy[0])) < 1e-9


def test_clairaut_constant():
    z = MODEL.state([0.2, 0.1], [0.3, 1.2])
    traj = trajectory_unperturbed(MODEL, z, 100.0, n_samples=201)
    assert np.max(np.abs(traj.states[:, 3] - 1.2)) < 1e-10


def test_time_reversal():
    z = MODEL.state([0.37, 0.7], [0.5, 0.9])
    fwd = flow_unperturbed(MODEL, z, 7.0)
    back = flow_unperturbed(MODEL, fwd, -7.0)
    assert np.max(np.abs(back.x - z.x)) < 1e-8
    assert np.max(np.abs(back.y - z.y)) < 1e-8


def test_scaling_conjugacy():
    # dilating momenta by sqrt(2E) conjugates the flow at energy E to the
    # flow at energy 1/2 run at speed sqrt(2E)
    z = MODEL.state([0.31, 0.9], [0.25, 0.97])
    z_half = MODEL.state(z.x, z.y / math.sqrt(2.0 * eval_H0(MODEL, z)))
    for E in (2.0, 8.0):
        t = 1.3
        lhs = flow_unperturbed(MODEL, dilate(MODEL, z_half, E), t)
        rhs = dilate(MODEL, flow_unperturbed(MODEL, z_half, math.sqrt(2.0 * E) * t), E)
        assert np.max(np.abs(MODEL.canonical_x(lhs.x) - MODEL.canonical_x(rhs.x))) < 1e-8
        assert np.max(np.abs(lhs.y - rhs.y)) < 1e-8


def test_extended_zero_potential_decouples():
    model = default_model(beta=0.0, beta2=0.0)
    model = type(model)(model.metric, zero_potential(), model.external, model.base_energy)
    z = ExtendedState(model.state([0.2, 0.3], [0.4, 1.0]), np.array([0.1, 0.2]), 0.0)
    out = flow_extended(model, z, 2.0)
    base = flow_unperturbed(model, z.base, 2.0)
    assert np.max(np.abs(out.base.x - base.x)) < 1e-10
    assert np.max(np.abs(out.base.y - base.y)) < 1e-10
    from geodrift.extflow import advance

    assert np.max(np.abs(out.theta - advance(model.external, z.theta, 2.0))) < 1e-10


def test_extended_energy_rate_matches_fd():
    # dH/dt along the coupled orbit equals grad_theta V . X
    # the fastest potential harmonic makes |H'''| ~ 1e3 along the orbit, so a
    # fourth-order stencil on a dt = 5e-4 grid is needed to resolve to 1e-6
    z = ExtendedState(MODEL.state([0.2, 0.3], [0.4, 1.0]), np.array([0.1, 0.2]), 0.0)
    traj = trajectory_extended(MODEL, z, 2.0, n_samples=4001)
    t = traj.times
    H = traj.energy
    dt = t[1] - t[0]
    dH = (H[:-4] - 8 * H[1:-3] + 8 * H[3:-1] - H[4:]) / (12 * dt)
    m = MODEL.metric.dim
    rate = np.empty(len(t))
    for i in range(len(t)):
        x = traj.states[i, :m]
        th = traj.states[i, 2 * m :] % 1.0
        gth = MODEL.potential.grad_theta(x, th)
        rate[i] = gth @ MODEL.external.vec(th)
    assert np.max(np.abs(dH - rate[2:-2])) < 1e-6


def test_extended_linear_energy_bound():
    z = ExtendedState(MODEL.state([0.2, 0.3], [0.4, 1.0]), np.array([0.1, 0.2]), 0.0)
    T = 20.0
    traj = trajectory_extended(MODEL, z, T, n_samples=201)
    # sup |grad_theta V| |X| by grid search
    rng = np.random.default_rng(0)
    xs = rng.random((400, 2))
    ths = rng.random((400, 2))
    gv = np.linalg.norm(MODEL.potential.grad_theta(xs, ths), axis=-1)
    xv = np.linalg.norm(MODEL.external.vec(ths), axis=-1)
    bound = float(np.max(gv) * np.max(xv))
    assert np.max(np.abs(traj.energy - traj.energy[0])) <= T * bound + 1e-6


def test_scaled_conjugacy():
    eps = 0.1
    z = ExtendedState(MODEL.state([0.2, 0.3], [0.4, 1.0]), np.array([0.1, 0.2]), 0.0)
    s = 3.0
    out_scaled = from_scaled(flow_scaled(MODEL, to_scaled(z, eps), s))
    out_ext = flow_extended(MODEL, z, eps * s)
    assert np.max(np.abs(out_scaled.base.x - out_ext.base.x)) < 1e-8
    assert np.max(np.abs(out_scaled.base.y - out_ext.base.y)) < 1e-8
    assert np.max(np.abs(out_scaled.theta - out_ext.theta)) < 1e-8


def test_scaled_frozen_theta_at_eps_zero():
    zs = ScaledState([0.2, 0.3], [0.1, 1.0], [0.4, 0.6], 0.0, 0.0)
    out = flow_scaled(MODEL, zs, 5.0)
    assert np.allclose(out.theta, [0.4, 0.6], atol=1e-14)


def test_scaled_energy_rate():
    # dH_eps/ds = eps^3 (grad_theta V . X) along the scaled orbit
    eps = 0.2
    zs = ScaledState([0.2, 0.3], [0.1, 1.0], [0.4, 0.6], 0.0, eps)
    traj = trajectory_scaled(MODEL, zs, 4.0, n_samples=1601)
    dH = np.gradient(traj.energy, traj.times)
    m = MODEL.metric.dim
    rate = np.empty_like(dH)
    for i in range(len(traj.times)):
        q = traj.states[i, :m]
        th = traj.states[i, 2 * m :] % 1.0
        rate[i] = eps**3 * (MODEL.potential.grad_theta(q, th) @ MODEL.external.vec(th))
    assert np.max(np.abs(dH - rate)[5:-5]) < 1e-6


def test_trajectory_invariants():
    z = MODEL.state([0.2, 0.1], [0.3, 1.2])
    traj = trajectory_unperturbed(MODEL, z, 5.0, n_samples=33)
    assert len(traj.times) == len(traj.energy) == traj.states.shape[0] == 33
    assert np.all(np.diff(traj.times) > 0)


def test_symplectic_method_bounded_oscillation():
    cfg = IntegratorConfig(method="symplectic", sym_step=2e-3)
    z = MODEL.state([0.2, 0.1], [0.3, 1.2])
    traj = trajectory_unperturbed(MODEL, z, 50.0, n_samples=101, cfg=cfg)
    dev = np.abs(traj.energy - traj.energy[0])
    # second-order method: energy oscillates but does not drift
    assert np.max(dev) < 1e-4
    assert abs(traj.energy[-1] - traj.energy[0]) < 1e-5


def test_infinite_time_rejected():
    z = MODEL.state([0.2, 0.1], [0.3, 1.2])
    with pytest.raises(DomainError):
        flow_unperturbed(MODEL, z, math.inf)
