"""Compiled (numba) versus numpy articulated-body kernels.

Usage: ``python3 benchmarks/bench_kernels.py [--links 2 10 50] [--repeat 5]``

Two measurements per chain length:

* the tangent ABA kernel alone, both implementations in one process;
* a full coupled-sensitivity gradient, once in a child process with
  ``DIFFSIM_DISABLE_NUMBA=1`` and once without.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from diffsim import kernels
from diffsim._jit import HAVE_NUMBA
from diffsim.model import pendulum_chain

GRADIENT_SNIPPET = """
import json, time, numpy as np
from diffsim._jit import HAVE_NUMBA
from diffsim.integrate import IntegratorConfig
from diffsim.model import pendulum_chain, pendulum_length_binding
from diffsim.sensitivity import GradientRequest, LossTarget, grad_coupled
from diffsim.system import ParametricSystem
n = {n}
s = ParametricSystem(pendulum_chain(n), pendulum_length_binding(n))
x0 = np.concatenate([np.linspace(-0.3, 0.3, n), np.zeros(n)])
req = GradientRequest(s, np.ones(n), x0, 0.0, 0.2, IntegratorConfig("rk4", dt=0.01), None,
                      LossTarget.squared_error([0.2], [np.zeros(2 * n)]))
grad_coupled(req)  # warm-up, includes compilation
best = float("inf")
for _ in range({repeat}):
    t = time.perf_counter()
    grad_coupled(req)
    best = min(best, time.perf_counter() - t)
print(json.dumps({{"numba": HAVE_NUMBA, "seconds": best}}))
"""


def kernel_times(n: int, repeat: int, tangents: int = 4) -> dict:
    rng = np.random.default_rng(0)
    P = kernels.pack(pendulum_chain(n))
    q, qd, tau = rng.normal(size=n), rng.normal(size=n), rng.normal(size=n)
    dq, dqd, dtau = (rng.normal(size=(tangents, n)) for _ in range(3))
    out = {}
    for name, k in (("loops", kernels.aba_tangent_loops), ("numpy", kernels.aba_tangent_numpy)):
        kernels.aba_tangent(P, q, qd, tau, dq, dqd, dtau, kernel=k)  # compile once
        number = max(1, 2000 // n)
        t = min(timeit.repeat(lambda: kernels.aba_tangent(P, q, qd, tau, dq, dqd, dtau, kernel=k),
                              number=number, repeat=repeat))
        out[name] = t / number
    return out


def gradient_time(n: int, repeat: int, disable: bool) -> dict:
    env = dict(os.environ)
    env.pop("DIFFSIM_DISABLE_NUMBA", None)
    if disable:
        env["DIFFSIM_DISABLE_NUMBA"] = "1"
    code = GRADIENT_SNIPPET.format(n=n, repeat=repeat)
    proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--links", type=int, nargs="+", default=[2, 10, 50])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is unavailable or disabled: the 'loops' kernel runs as plain Python")
    print(f"{'links':>5} {'loops kernel':>14} {'numpy kernel':>14} {'speedup':>8} "
          f"{'grad numba':>12} {'grad numpy':>12} {'speedup':>8}")
    for n in args.links:
        k = kernel_times(n, args.repeat)
        on = gradient_time(n, args.repeat, disable=False)
        off = gradient_time(n, args.repeat, disable=True)
        print(f"{n:>5} {k['loops'] * 1e6:>11.1f} us {k['numpy'] * 1e6:>11.1f} us {k['numpy'] / k['loops']:>7.1f}x "
              f"{on['seconds']:>10.4f} s {off['seconds']:>10.4f} s {off['seconds'] / on['seconds']:>7.1f}x")


if __name__ == "__main__":
    main()
