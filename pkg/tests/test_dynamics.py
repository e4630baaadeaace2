"""Forward and inverse dynamics against each other and against closed forms."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsim.ad import Dual, Tape, tangent
from diffsim.dynamics import (
    aba,
    bias_forces,
    gravity_forces,
    mass_matrix,
    ode_rhs,
    rnea,
    total_energy,
)
from diffsim.model import cartpole, pendulum_chain

from conftest import random_model, random_state, rel_err
from oracles import double_pendulum_energy, double_pendulum_inverse_dynamics, rod_pendulum_acceleration


def test_aba_inverts_rnea_on_random_models(rng):
    worst = 0.0
    for trial in range(100):
        m = random_model(rng, int(rng.integers(1, 7)))
        q, qd = random_state(rng, m)
        tau = rng.normal(size=m.dof) * 3
        qdd = np.array(aba(m, q, qd, tau), dtype=float)
        worst = max(worst, rel_err(rnea(m, q, qd, qdd), tau))
        qdd2 = rng.normal(size=m.dof)
        worst = max(worst, rel_err(aba(m, q, qd, rnea(m, q, qd, qdd2)), qdd2))
    assert worst <= 1e-8


def test_equation_of_motion_structure(rng):
    for _ in range(20):
        m = random_model(rng, int(rng.integers(1, 7)))
        q, qd = random_state(rng, m)
        H = mass_matrix(m, q)
        np.testing.assert_allclose(H, H.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(H) > 0)
        qdd = rng.normal(size=m.dof)
        np.testing.assert_allclose(rnea(m, q, qd, qdd), H @ qdd + np.array(bias_forces(m, q, qd)), atol=1e-10)
        # gravity-only bias equals the gradient of potential energy
        G = np.array(gravity_forces(m, q))
        h = 1e-6
        for k in range(m.dof):
            e = np.zeros(m.dof)
            e[k] = h
            dV = (total_energy(m, q + e, np.zeros(m.dof)) - total_energy(m, q - e, np.zeros(m.dof))) / (2 * h)
            assert G[k] == pytest.approx(dV, abs=1e-6)


def test_kinetic_energy_is_half_qd_H_qd(rng):
    for _ in range(10):
        m = random_model(rng, 4)
        q, qd = random_state(rng, m)
        T = total_energy(m, q, qd) - total_energy(m, q, np.zeros(m.dof))
        assert T == pytest.approx(0.5 * qd @ mass_matrix(m, q) @ qd, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(0.1, 5.0))
def test_rod_pendulum_closed_form(q, length):
    m = pendulum_chain(1, [length], [1.7])
    assert aba(m, [q], [0.0], [0.0])[0] == pytest.approx(rod_pendulum_acceleration(q, length), abs=1e-10)


def test_double_pendulum_matches_lagrangian(rng):
    oracle = double_pendulum_inverse_dynamics()
    worst = 0.0
    for _ in range(50):
        lengths = rng.uniform(0.3, 2.0, 2)
        masses = rng.uniform(0.3, 2.0, 2)
        m = pendulum_chain(2, lengths, masses)
        q, qd, qdd = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2), rng.uniform(-5, 5, 2)
        worst = max(worst, rel_err(rnea(m, q, qd, qdd), oracle(q, qd, qdd, lengths, masses)))
        assert total_energy(m, q, qd) == pytest.approx(double_pendulum_energy(q, qd, lengths, masses), rel=1e-12)
    assert worst <= 1e-8


def test_cartpole_static_balance():
    # upright poles at rest only feel gravity along the joint axes: no motion
    m = cartpole(2)
    qdd = aba(m, [0.3, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(qdd, 0.0, atol=1e-14)
    # pushing the cart accelerates it forward and tips the poles back
    qdd = aba(m, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [5.0, 0.0, 0.0])
    assert qdd[0] > 0 and qdd[1] < 0


def test_dual_scalars_give_exact_directional_derivatives(rng):
    m = random_model(rng, 5)
    q, qd = random_state(rng, m)
    tau = rng.normal(size=m.dof)
    dq = rng.normal(size=m.dof)
    out = aba(m, [Dual(a, b) for a, b in zip(q, dq)], list(qd), list(tau))
    h = 1e-6
    fd = (np.array(aba(m, q + h * dq, qd, tau)) - np.array(aba(m, q - h * dq, qd, tau))) / (2 * h)
    np.testing.assert_allclose([tangent(o) for o in out], fd, rtol=1e-6, atol=1e-6)


def test_tape_scalars_match_dual_scalars(rng):
    m = random_model(rng, 4)
    q, qd = random_state(rng, m)
    x = np.concatenate([q, qd])
    tape = Tape()
    xv = tape.vars(x)
    f = ode_rhs(m, None, (), (), 0.0, np.array(xv, dtype=object))
    J_rev = tape.jacobian(list(f), xv)
    J_fwd = np.zeros_like(J_rev)
    for k in range(len(x)):
        xd = [Dual(v, 1.0 if i == k else 0.0) for i, v in enumerate(x)]
        J_fwd[:, k] = [tangent(v) for v in ode_rhs(m, None, (), (), 0.0, np.array(xd, dtype=object))]
    np.testing.assert_allclose(J_rev, J_fwd, rtol=1e-12, atol=1e-12)


def test_wrong_vector_length_is_rejected():
    m = pendulum_chain(2)
    with pytest.raises(ValueError):
        aba(m, [0.0], [0.0, 0.0], [0.0, 0.0])
