"""Limited-memory BFGS with an Armijo-Wolfe line search and box projection."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class OptimizationError(RuntimeError):
    """Raised by callers that treat a failed optimization as fatal."""


@dataclass(frozen=True)
class OptimizerConfig:
    memory: int = 10
    max_iters: int = 100
    grad_tol: float = 1e-8
    f_tol: float = 0.0
    c1: float = 1e-4
    c2: float = 0.9
    lower: tuple | None = None
    upper: tuple | None = None
    max_line_search: int = 40

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")


@dataclass(frozen=True)
class LineSearchRecord:
    """Data of one accepted step, enough to re-check the Armijo condition."""

    iteration: int
    alpha: float
    f_before: float
    f_after: float
    directional: float  # g . (x_new - x)
    c1: float

    @property
    def armijo(self) -> bool:
        return self.f_after <= self.f_before + self.c1 * self.directional


@dataclass
class OptimizeResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    status: str  # converged | f_tol | max_iters | line_search_failed | stalled | stopped
    losses: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    evaluations: int = 0

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "f_tol")


def _project(x, lo, hi):
    if lo is not None:
        x = np.maximum(x, lo)
    if hi is not None:
        x = np.minimum(x, hi)
    return x


def _projected_gradient(x, g, lo, hi):
    pg = g.copy()
    if lo is not None:
        pg[(x <= lo) & (g > 0)] = 0.0
    if hi is not None:
        pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def minimize(fun: Callable, x0, cfg: OptimizerConfig = OptimizerConfig(),
             callback: Callable | None = None) -> OptimizeResult:
    """Minimize ``fun(x) -> (f, grad)``.

    ``callback(iteration, x, f)`` runs after every accepted iterate and may
    return ``True`` to stop early.
    """
    lo = None if cfg.lower is None else np.asarray(cfg.lower, dtype=float)
    hi = None if cfg.upper is None else np.asarray(cfg.upper, dtype=float)
    x = _project(np.asarray(x0, dtype=float).copy(), lo, hi)
    f, g = fun(x)
    g = np.asarray(g, dtype=float)
    evals = 1
    res = OptimizeResult(x, float(f), g, 0, "max_iters", [float(f)], [x.copy()], [], evals)
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        res.status = "line_search_failed"
        return res
    mem: deque = deque(maxlen=cfg.memory)
    for it in range(cfg.max_iters + 1):
        pg = _projected_gradient(x, g, lo, hi)
        if np.max(np.abs(pg), initial=0.0) <= cfg.grad_tol:
            res.status = "converged"
            break
        if it == cfg.max_iters:
            res.status = "max_iters"
            break
        # two-loop recursion on the free variables
        free = pg != 0.0
        q = np.where(free, g, 0.0)
        alphas = []
        for s, y, rho in reversed(mem):
            a = rho * (s @ q)
            alphas.append(a)
            q = q - a * y
        if mem:
            s, y, _ = mem[-1]
            q = q * ((s @ y) / (y @ y))
        else:
            q = q / max(1.0, np.linalg.norm(q))
        for (s, y, rho), a in zip(mem, reversed(alphas)):
            b = rho * (y @ q)
            q = q + (a - b) * s
        p = -np.where(free, q, 0.0)
        slope = g @ p
        if not slope < 0:
            # not a descent direction; restart from steepest descent
            mem.clear()
            p = -pg / max(1.0, np.linalg.norm(pg))
            slope = g @ p

        alpha, a_lo, a_hi = 1.0, 0.0, math.inf
        best = None
        for _ in range(cfg.max_line_search):
            xn = _project(x + alpha * p, lo, hi)
            fn, gn = fun(xn)
            gn = np.asarray(gn, dtype=float)
            evals += 1
            d = g @ (xn - x)
            ok = math.isfinite(fn) and np.all(np.isfinite(gn))
            if not ok or fn > f + cfg.c1 * d:
                a_hi = alpha
                alpha = 0.5 * (a_lo + a_hi)
                continue
            if best is None or fn < best[1]:
                best = (xn, fn, gn, alpha, d)
            clipped = not np.array_equal(xn, x + alpha * p)
            if clipped or gn @ p >= cfg.c2 * slope:
                best = (xn, fn, gn, alpha, d)
                break
            a_lo = alpha
            alpha = 2.0 * alpha if a_hi == math.inf else 0.5 * (a_lo + a_hi)
        if best is None:
            res.status = "line_search_failed"
            break
        xn, fn, gn, alpha, d = best
        if not fn < f:
            # the step is within rounding of f: no further progress possible
            res.status = "stalled"
            break
        res.steps.append(LineSearchRecord(it, alpha, float(f), float(fn), float(d), cfg.c1))
        s, y = xn - x, gn - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
        f_prev = f
        x, f, g = xn, float(fn), gn
        res.iterations = it + 1
        res.losses.append(f)
        res.iterates.append(x.copy())
        if callback is not None and callback(it + 1, x, f):
            res.status = "stopped"
            break
        if cfg.f_tol > 0 and f_prev - f <= cfg.f_tol * max(abs(f_prev), abs(f), 1e-300):
            res.status = "f_tol"
            break
    res.x, res.f, res.grad, res.evaluations = x, f, g, evals
    return res
