"""Explicit ODE solvers with evaluation counters.

All solvers accept ``rhs(t, x) -> xdot`` with ``x`` a 1-D numpy array of
floats or of tower scalars (object dtype).  Step-size control only looks at
primal values, so dual and tape scalars flow through unchanged.

Evaluation counts per solve:

* ``euler``: 1 per step, ``rk4``: 4 per step.
* ``dopri45``: 7 for the first attempted step, then 6 per attempt; the last
  stage of an accepted step is reused as the first stage of the next one
  (FSAL), and a rejected step keeps its first stage.
* ``fehlberg45``: 6 per accepted and 5 per rejected step (a rejected step
  keeps its first stage).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ad import value

METHODS = ("euler", "rk4", "dopri45", "fehlberg45")


class IntegrationError(RuntimeError):
    pass


class DivergenceError(IntegrationError):
    """Non-finite state encountered."""


class StepSizeError(IntegrationError):
    """Adaptive step fell below ``min_step``."""


class BudgetError(IntegrationError):
    """Evaluation budget exhausted."""


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"
    dt: float = 0.01
    abs_tol: float = 1e-6
    rel_tol: float = 1e-6
    min_step: float = 1e-12
    max_step: float = math.inf
    max_evals: int = 50_000_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.min_step > self.max_step:
            raise ValueError("min_step exceeds max_step")

    @property
    def adaptive(self) -> bool:
        return self.method in ("dopri45", "fehlberg45")


@dataclass
class EvalCounter:
    rhs_evaluations: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0
    tape_variables: int = 0

    def add(self, other: EvalCounter) -> EvalCounter:
        self.rhs_evaluations += other.rhs_evaluations
        self.accepted_steps += other.accepted_steps
        self.rejected_steps += other.rejected_steps
        self.tape_variables = max(self.tape_variables, other.tape_variables)
        return self

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _primal(x) -> np.ndarray:
    if x.dtype == object:
        return np.array([value(v) for v in x], dtype=float)
    return x


def _check_finite(x, t):
    if not np.all(np.isfinite(_primal(x))):
        raise DivergenceError(f"non-finite state at t={value(t):.6g}")


class _Rhs:
    """Wraps ``rhs`` with counting and budget enforcement."""

    def __init__(self, rhs, counter: EvalCounter, budget: int):
        self.rhs = rhs
        self.counter = counter
        self.budget = budget

    def __call__(self, t, x):
        if self.counter.rhs_evaluations >= self.budget:
            raise BudgetError(f"evaluation budget of {self.budget} exhausted")
        self.counter.rhs_evaluations += 1
        return np.asarray(self.rhs(t, x))


def _euler_step(f, t, x, h):
    return x + h * f(t, x)


def _rk4_step(f, t, x, h):
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, x + (0.5 * h) * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _fixed(f, x, t0, t1, cfg, counter, grid):
    span = t1 - t0
    n = max(1, math.ceil(abs(span) / cfg.dt - 1e-9))
    h = span / n
    step = _euler_step if cfg.method == "euler" else _rk4_step
    for i in range(n):
        t = t0 + i * h
        if grid is not None:
            grid.append((t, h, x))
        x = step(f, t, x, h)
        _check_finite(x, t + h)
        counter.accepted_steps += 1
    return x


# Butcher tableaus: (c, a, b_propagated, b_error) with b_error = b - b_hat
_DOPRI_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DOPRI_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DOPRI_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DOPRI_E = (
    35 / 384 - 5179 / 57600,
    0.0,
    500 / 1113 - 7571 / 16695,
    125 / 192 - 393 / 640,
    -2187 / 6784 + 92097 / 339200,
    11 / 84 - 187 / 2100,
    -1 / 40,
)

_RKF_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_RKF_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_RKF_B = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_RKF_E = (
    25 / 216 - 16 / 135,
    0.0,
    1408 / 2565 - 6656 / 12825,
    2197 / 4104 - 28561 / 56430,
    -1 / 5 + 9 / 50,
    -2 / 55,
)


_EULER = ((0.0,), ((),), (1.0,))
_RK4 = ((0.0, 0.5, 0.5, 1.0), ((), (0.5,), (0.0, 0.5), (0.0, 0.0, 1.0)),
        (1 / 6, 1 / 3, 1 / 3, 1 / 6))

# (c, A, b) of the propagated solution for every method
TABLEAUS = {
    "euler": _EULER,
    "rk4": _RK4,
    "dopri45": (_DOPRI_C, _DOPRI_A, _DOPRI_B),
    "fehlberg45": (_RKF_C, _RKF_A, _RKF_B),
}


def tableau_step(f, t, x, h, method: str):
    """One step of the propagated scheme of ``method`` (no error control)."""
    C, A, B = TABLEAUS[method]
    ks = []
    for i in range(len(C)):
        xi = x if i == 0 else x + h * _lincomb(A[i], ks)
        ks.append(f(t + C[i] * h, xi))
    return x + h * _lincomb(B, ks)


def _lincomb(coefs, ks):
    acc = None
    for c, k in zip(coefs, ks):
        if c == 0.0:
            continue
        term = c * k
        acc = term if acc is None else acc + term
    return acc


def _adaptive(f, x, t0, t1, cfg, counter, grid):
    dopri = cfg.method == "dopri45"
    C, A, B, E = (_DOPRI_C, _DOPRI_A, _DOPRI_B, _DOPRI_E) if dopri else (_RKF_C, _RKF_A, _RKF_B, _RKF_E)
    span = t1 - t0
    direction = 1.0 if span > 0 else -1.0
    t = t0
    k1 = f(t, x)
    hmax = min(cfg.max_step, abs(span))
    xp = _primal(x)
    sc = cfg.abs_tol + cfg.rel_tol * np.abs(xp)
    d0 = float(np.max(np.abs(xp) / sc)) if xp.size else 0.0
    d1 = float(np.max(np.abs(_primal(k1)) / sc)) if xp.size else 0.0
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(max(h, cfg.min_step), hmax)
    while True:
        remaining = abs(t1 - t)
        if remaining <= 1e-12 * max(1.0, abs(t1)):
            break
        last = h >= remaining
        if last:
            h = remaining
        hs = direction * h
        ks = [k1]
        for i in range(1, len(C)):
            xi = x + hs * _lincomb(A[i], ks)
            ks.append(f(t + C[i] * hs, xi))
        if dopri:
            xnew = xi  # row 7 of A equals the propagated weights
        else:
            xnew = x + hs * _lincomb(B, ks)
        err_vec = _primal(hs * _lincomb(E, ks))
        xnp = _primal(xnew)
        if not np.all(np.isfinite(xnp)):
            err = math.inf
        else:
            sc = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(_primal(x)), np.abs(xnp))
            err = float(np.max(np.abs(err_vec) / sc)) if xnp.size else 0.0
        if err <= 1.0:
            if grid is not None:
                grid.append((t, hs, x))
            t = t1 if last else t + hs
            x = xnew
            counter.accepted_steps += 1
            k1 = ks[-1] if dopri else (f(t, x) if not last else None)
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if last:
                break
            h = min(h * factor, hmax)
        else:
            counter.rejected_steps += 1
            if not math.isfinite(err):
                factor = 0.2
            else:
                factor = min(1.0, max(0.2, 0.9 * err ** -0.2))
            h = h * factor
            if h < cfg.min_step:
                if not math.isfinite(err):
                    raise DivergenceError(f"non-finite state near t={value(t):.6g}")
                raise StepSizeError(f"step size {h:.3g} below min_step at t={value(t):.6g}")
    _check_finite(x, t)
    return x


def integrate(rhs, x0, t0: float, t1: float, cfg: IntegratorConfig,
              counter: EvalCounter | None = None, grid: list | None = None):
    """Solve ``xdot = rhs(t, x)`` from ``t0`` to ``t1`` (which may be earlier).

    Returns ``(x(t1), counter)``.  When ``grid`` is a list, ``(t, h, x)``
    of every accepted step (start time, signed step, start state) is
    appended to it.
    """
    if t0 == t1:
        raise ValueError("empty time span")
    counter = EvalCounter() if counter is None else counter
    x = np.asarray(x0)
    if x.dtype != object:
        x = x.astype(float)
    _check_finite(x, t0)
    f = _Rhs(rhs, counter, counter.rhs_evaluations + cfg.max_evals)
    if cfg.adaptive:
        x = _adaptive(f, x, t0, t1, cfg, counter, grid)
    else:
        x = _fixed(f, x, t0, t1, cfg, counter, grid)
    return x, counter


def integrate_dense(rhs, x0, times, cfg: IntegratorConfig, counter: EvalCounter | None = None,
                    grid: list | None = None):
    """States at every entry of ``times`` (``times[0]`` is the initial time)."""
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])) and any(b >= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly monotone")
    counter = EvalCounter() if counter is None else counter
    x = np.asarray(x0)
    if x.dtype != object:
        x = x.astype(float)
    out = [x]
    for a, b in zip(times, times[1:]):
        x, _ = integrate(rhs, x, a, b, cfg, counter, grid)
        out.append(x)
    return out, counter
