"""Array kernels: compiled and numpy paths agree with each other and the generic code."""

import json
import os
import subprocess
import sys

import numpy as np

from diffsim import kernels
from diffsim._jit import HAVE_NUMBA
from diffsim.dynamics import aba as aba_generic
from diffsim.model import cartpole, cartpole_binding, pendulum_chain, pendulum_length_binding
from diffsim.system import ParametricSystem

from conftest import random_model, random_state

KERNELS = [kernels.aba_tangent_numpy, kernels.aba_tangent_loops]


def test_kernel_aba_matches_generic_aba(rng):
    for _ in range(30):
        m = random_model(rng, int(rng.integers(1, 7)))
        q, qd = random_state(rng, m)
        tau = rng.normal(size=m.dof)
        P = kernels.pack(m)
        ref = np.array(aba_generic(m, q, qd, tau), dtype=float)
        for k in KERNELS:
            np.testing.assert_allclose(kernels.aba(P, q, qd, tau, kernel=k), ref, rtol=1e-11, atol=1e-11)


def test_compiled_and_numpy_kernels_agree_on_tangents(rng):
    for _ in range(20):
        m = random_model(rng, int(rng.integers(1, 7)))
        q, qd = random_state(rng, m)
        tau = rng.normal(size=m.dof)
        K = 5
        dq, dqd, dtau = (rng.normal(size=(K, m.dof)) for _ in range(3))
        P = kernels.pack(m)
        a = kernels.aba_tangent(P, q, qd, tau, dq, dqd, dtau, kernel=KERNELS[0])
        b = kernels.aba_tangent(P, q, qd, tau, dq, dqd, dtau, kernel=KERNELS[1])
        np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-10)


def test_state_tangents_match_finite_differences(rng):
    m = random_model(rng, 5, allow_fixed=True)
    q, qd = random_state(rng, m)
    tau = rng.normal(size=m.dof)
    P = kernels.pack(m)
    n = m.dof
    eye = np.eye(n)
    z = np.zeros((n, n))
    h = 1e-6
    for kernel in KERNELS:
        _, dq = kernels.aba_tangent(P, q, qd, tau, eye, z, z, kernel=kernel)
        _, dv = kernels.aba_tangent(P, q, qd, tau, z, eye, z, kernel=kernel)
        _, dt = kernels.aba_tangent(P, q, qd, tau, z, z, eye, kernel=kernel)
        for k in range(n):
            fq = (kernels.aba(P, q + h * eye[k], qd, tau) - kernels.aba(P, q - h * eye[k], qd, tau)) / (2 * h)
            fv = (kernels.aba(P, q, qd + h * eye[k], tau) - kernels.aba(P, q, qd - h * eye[k], tau)) / (2 * h)
            ft = (kernels.aba(P, q, qd, tau + h * eye[k]) - kernels.aba(P, q, qd, tau - h * eye[k])) / (2 * h)
            np.testing.assert_allclose(dq[k], fq, rtol=1e-6, atol=1e-6)
            np.testing.assert_allclose(dv[k], fv, rtol=1e-6, atol=1e-6)
            np.testing.assert_allclose(dt[k], ft, rtol=1e-6, atol=1e-6)


def test_parameter_tangents_match_finite_differences(rng):
    cases = [
        (pendulum_chain(3), pendulum_length_binding(3), np.array([1.2, 0.8, 0.5]), ()),
        (cartpole(2, inertia="rod"), cartpole_binding(2, 0.5, 0.25),
         np.array([2, 1, 0.8, 0.4, 1.2, 0.1, 0, 0.2, 0, 0.3, 0.6, 0, 0.1, 0.5]), (0,)),
    ]
    for m, b, theta, u_map in cases:
        s = ParametricSystem(m, b, u_map)
        x = rng.uniform(-1, 1, s.nx)
        u = np.ones(s.nu)
        _, _, fth, _ = s.value_and_jacobians(theta, x, u)
        h = 1e-6
        for k in range(s.ntheta):
            e = np.zeros(s.ntheta)
            e[k] = h
            fd = (s.rhs(theta + e, x, u) - s.rhs(theta - e, x, u)) / (2 * h)
            np.testing.assert_allclose(fth[:, k], fd, rtol=1e-6, atol=1e-6)


def _run_isolated(disable: bool) -> dict:
    code = (
        "import json, numpy as np\n"
        "from diffsim._jit import HAVE_NUMBA\n"
        "from diffsim.model import pendulum_chain\n"
        "from diffsim.system import ParametricSystem\n"
        "s = ParametricSystem(pendulum_chain(4))\n"
        "x = np.linspace(-1, 1, 8)\n"
        "f, J, _, _ = s.value_and_jacobians((), x)\n"
        "print(json.dumps({'numba': HAVE_NUMBA, 'f': f.tolist(), 'J': J.tolist()}))\n"
    )
    env = dict(os.environ)
    env.pop("DIFFSIM_DISABLE_NUMBA", None)
    if disable:
        env["DIFFSIM_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_disable_switch_selects_numpy_path_with_same_results():
    off = _run_isolated(True)
    on = _run_isolated(False)
    assert off["numba"] is False
    assert on["numba"] is HAVE_NUMBA
    np.testing.assert_allclose(off["f"], on["f"], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(off["J"], on["J"], rtol=1e-10, atol=1e-10)
