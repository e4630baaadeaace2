"""Trajectory optimization, MPC plumbing and one-step model fitting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsim.control import (
    ControlBounds,
    CostSpec,
    ILQRConfig,
    MPCController,
    ReferenceEnvironment,
    ReplayBuffer,
    Transition,
    _stored,
    cost,
    fit_model,
    ilqr,
    linearize,
    mass_lower_bounds,
    mean_prediction_error,
    observation_size,
    observe,
    prediction_loss,
    state_from_observation,
    step,
    swung_up,
    upright_goal,
)
from diffsim.integrate import IntegratorConfig
from diffsim.model import X_AXIS, Body, Joint, Model, apply_parameters, cartpole, cartpole_binding, pendulum_chain
from diffsim.optimize import OptimizerConfig
from diffsim.system import ParametricSystem

from oracles import double_integrator_lqr_controls


def double_integrator():
    body = Body("block", 1.0, (0.0, 0.0, 0.0), (0.01, 0, 0, 0, 0.01, 0, 0, 0, 0.01))
    m = Model((body,), (Joint("prismatic", X_AXIS, -1, (0.0, 0.0, 0.0)),))
    return ParametricSystem(m, None, (0,))


def swing_spec(n, vel=0.01, acc=0.0, control=1e-3, terminal=100.0):
    Q = np.full(observation_size(n), vel)
    Q[0] = 1.0
    Q[2:2 + 2 * n] = 1.0
    Q[2 + 3 * n:] = acc
    return CostSpec(tuple(Q), (control,), tuple(terminal * Q), tuple(upright_goal(n)))


def test_ilqr_matches_riccati_in_one_iteration():
    s = double_integrator()
    Q, R, S = (1.0, 0.5), (0.1,), (5.0, 2.0)
    spec = CostSpec(Q, R, S, (0.0, 0.0), "state")
    x0, H, dt = np.array([1.0, -0.5]), 30, 0.1
    U0 = np.random.default_rng(0).normal(size=(H, 1))
    res = ilqr(s, (), x0, U0, spec, ControlBounds.unbounded(1), ILQRConfig(dt=dt, max_iters=1))
    assert res.iterations == 1
    np.testing.assert_allclose(res.controls, double_integrator_lqr_controls(x0, H, dt, Q, R, S), atol=1e-8)


def test_linearization_matches_finite_differences(rng):
    s = ParametricSystem(cartpole(2), None, (0,))
    x, u = rng.uniform(-1, 1, s.nx), np.array([3.0])
    for substeps in (1, 2):
        A, B = linearize(s, (), x, u, 0.01, "rk4", substeps)
        h = 1e-6
        for k in range(s.nx):
            e = np.zeros(s.nx)
            e[k] = h
            fd = (step(s, (), x + e, u, 0.01, "rk4", substeps) - step(s, (), x - e, u, 0.01, "rk4", substeps)) / (2 * h)
            np.testing.assert_allclose(A[:, k], fd, atol=1e-7)
        fd = (step(s, (), x, u + h, 0.01, "rk4", substeps) - step(s, (), x, u - h, 0.01, "rk4", substeps)) / (2 * h)
        np.testing.assert_allclose(B[:, 0], fd, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=6, max_size=6))
def test_observation_round_trip(x):
    m = cartpole(2)
    x = np.array(x)
    obs = observe(m, x, np.array([0.1, 0.2, 0.3]))
    assert obs.shape == (observation_size(2),)
    np.testing.assert_allclose(obs[-2:], [0.2, 0.3])
    np.testing.assert_allclose(state_from_observation(obs, 2), x, atol=1e-12)


def test_observation_needs_a_cartpole():
    with pytest.raises(ValueError):
        observe(pendulum_chain(2), np.zeros(4), np.zeros(2))


def test_cost_by_hand():
    spec = CostSpec((1.0, 2.0), (0.5,), (3.0, 4.0), (1.0, 0.0), "state")
    obs = np.array([[0.0, 1.0], [1.0, 1.0], [2.0, -1.0]])
    U = np.array([[1.0], [2.0]])
    expected = (1 + 2) + (0 + 2) + 0.5 * (1 + 4) + (3 * 1 + 4 * 1)
    assert cost(obs, U, spec) == pytest.approx(expected)
    with pytest.raises(ValueError):
        cost(obs[:, :1], U, spec)
    with pytest.raises(ValueError):
        CostSpec((1.0,), (0.0,), (1.0,), (0.0,))


def test_goal_is_a_fixed_point():
    s = ParametricSystem(cartpole(1), None, (0,))
    res = ilqr(s, (), np.zeros(4), np.zeros((20, 1)), swing_spec(1), ControlBounds.symmetric(10.0))
    assert res.status == "converged"
    np.testing.assert_allclose(res.controls, 0.0, atol=1e-12)
    assert res.costs[-1] == pytest.approx(0.0, abs=1e-20)


def test_swing_up_from_hanging():
    s = ParametricSystem(cartpole(1), None, (0,))
    x0 = np.array([0.0, math.pi - 0.03, 0.0, 0.0])
    Q = np.array(swing_spec(1).Q)
    S = np.full(len(Q), 100.0)
    S[-1] = 0.0  # no weight on the pole acceleration
    spec = CostSpec(tuple(Q), (1e-3,), tuple(S), tuple(upright_goal(1)))
    res = ilqr(s, (), x0, np.zeros((140, 1)), spec, ControlBounds.symmetric(100.0), ILQRConfig(max_iters=100))
    xT = res.states[-1]
    assert res.iterations <= 100
    assert math.cos(xT[1]) >= 0.99 and abs(xT[2]) <= 0.1
    assert all(b <= a for a, b in zip(res.costs, res.costs[1:]))
    assert np.all(np.abs(res.controls) <= 100.0)


def test_controls_are_clamped():
    s = ParametricSystem(cartpole(1), None, (0,))
    # the cart starts far from the goal so the unconstrained optimum saturates
    x0 = np.array([5.0, 0.0, 0.0, 0.0])
    cfg = ILQRConfig(max_iters=20)
    res = ilqr(s, (), x0, np.zeros((20, 1)), swing_spec(1), ControlBounds.symmetric(2.0), cfg)
    assert np.max(np.abs(res.controls)) <= 2.0
    assert np.max(np.abs(res.controls)) == pytest.approx(2.0)
    x = x0
    for u in res.controls:
        x = step(s, (), x, u, cfg.dt, cfg.method, cfg.substeps)
    np.testing.assert_allclose(res.states[-1], x, atol=1e-12)


def test_mpc_controller_warm_start():
    s = ParametricSystem(cartpole(1), None, (0,))
    ctrl = MPCController(s, swing_spec(1), ControlBounds.symmetric(5.0), 10, ILQRConfig(max_iters=3))
    np.testing.assert_array_equal(ctrl.warm_start(), np.zeros((10, 1)))
    u = ctrl(np.array([0.0, 0.3, 0.0, 0.0]), ())
    assert abs(u[0]) <= 5.0
    warm = ctrl.warm_start()
    np.testing.assert_array_equal(warm[:-1], ctrl.plan[1:])
    np.testing.assert_array_equal(warm[-1], ctrl.plan[-1])
    ctrl.reset()
    assert ctrl.plan is None


def test_bounds_validation():
    with pytest.raises(ValueError):
        ControlBounds((1.0,), (0.0,))
    np.testing.assert_array_equal(ControlBounds.symmetric(1.0).clamp([3.0]), [1.0])


def test_replay_buffer_capacity():
    buf = ReplayBuffer(2)
    tr = Transition((0.0,), (1.0,), (0.5,))
    assert buf.add(tr) and buf.add(tr) and not buf.add(tr)
    assert len(buf) == 2
    with pytest.raises(ValueError):
        Transition((0.0,), (1.0,), (0.5, 0.1))
    with pytest.raises(ValueError):
        ReplayBuffer(0)


@pytest.mark.parametrize("per_episode, T", [(100, 140), (10, 140), (140, 140), (None, 50), (7, 9)])
def test_storage_schedule_keeps_exactly_per_episode(per_episode, T):
    kept = sum(_stored(t, per_episode, T) for t in range(T))
    assert kept == (T if per_episode is None else min(per_episode, T))


def test_swung_up_checks_every_pole():
    up = np.tile(upright_goal(2), (12, 1))
    assert swung_up(up, 2)
    up[-1, 5] = 0.5  # second pole cosine
    assert not swung_up(up, 2)
    assert not swung_up(up[:5], 2)


def _rollout_transitions(env, n_steps, seed):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer()
    obs = env.reset()
    for _ in range(n_steps):
        u = rng.uniform(-5, 5, 1)
        nxt = env.step(u)
        buf.add(Transition(tuple(obs), tuple(env.u), tuple(nxt)))
        obs = nxt
    return buf


def test_environment_is_seeded_and_clamps():
    m = cartpole(1, inertia="capsule")
    a = ReferenceEnvironment(m, bounds=ControlBounds.symmetric(1.0), seed=4)
    b = ReferenceEnvironment(m, bounds=ControlBounds.symmetric(1.0), seed=4)
    np.testing.assert_array_equal(a.reset(), b.reset())
    a.step([50.0])
    np.testing.assert_array_equal(a.u, [1.0])
    assert math.cos(state_from_observation(a.reset(), 1)[1]) < -0.99


def test_prediction_loss_vanishes_for_the_true_model_and_has_exact_gradient():
    b = cartpole_binding(1, 0.5, 0.25)
    m = cartpole(1, inertia="point")
    theta = b.read(m)
    env = ReferenceEnvironment(apply_parameters(m, b, theta), cfg=IntegratorConfig("rk4", dt=0.005), seed=1)
    buf = _rollout_transitions(env, 30, 0)
    s = ParametricSystem(m, b, (0,))
    L, g = prediction_loss(s, theta, buf, substeps=2)
    assert L <= 1e-24 and mean_prediction_error(s, theta, buf, substeps=2) <= 1e-12
    th = theta + 0.05
    L, g = prediction_loss(s, th, buf, substeps=2)
    h = 1e-6
    for k in range(len(th)):
        e = np.zeros(len(th))
        e[k] = h
        fd = (prediction_loss(s, th + e, buf, substeps=2, with_grad=False)[0]
              - prediction_loss(s, th - e, buf, substeps=2, with_grad=False)[0]) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_fit_reduces_prediction_error():
    b = cartpole_binding(1, 0.5, 0.25)
    m = cartpole(1, inertia="point")
    truth = b.read(cartpole(1, pole_masses=[0.4], pole_lengths=[0.3], inertia="point"))
    env = ReferenceEnvironment(apply_parameters(m, b, truth), cfg=IntegratorConfig("rk4", dt=0.005), seed=2)
    buf = _rollout_transitions(env, 60, 1)
    s = ParametricSystem(m, b, (0,))
    theta0 = np.full(b.arity, 2.0)
    fr = fit_model(buf, m, b, theta0, OptimizerConfig(max_iters=60), substeps=2)
    assert fr.iterations <= 60
    assert mean_prediction_error(s, fr.theta, buf, substeps=2) < 1e-2 * mean_prediction_error(s, theta0, buf, substeps=2)
    assert all(fr.theta[i] >= lo for i, lo in enumerate(mass_lower_bounds(b)))
    # the fd engine follows the same loss
    fd = fit_model(buf, m, b, theta0, OptimizerConfig(max_iters=3), substeps=2, engine="fd")
    assert fd.losses[-1] < fd.losses[0]
    with pytest.raises(ValueError):
        fit_model(ReplayBuffer(), m, b, theta0)
    with pytest.raises(ValueError):
        fit_model(buf, m, b, theta0, engine="newton")


def test_fit_at_the_truth_is_a_no_op():
    b = cartpole_binding(1, 0.5, 0.25)
    m = cartpole(1, inertia="point")
    theta = b.read(m)
    env = ReferenceEnvironment(m, cfg=IntegratorConfig("rk4", dt=0.005), seed=3)
    buf = _rollout_transitions(env, 20, 2)
    fr = fit_model(buf, m, b, theta, substeps=2)
    np.testing.assert_allclose(fr.theta, theta, atol=1e-9)
    assert fr.iterations <= 1
