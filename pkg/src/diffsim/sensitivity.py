"""Gradients of ODE solutions with respect to model parameters.

Four engines share one request type:

* :func:`grad_fd` -- symmetric finite differences, two solves per parameter;
* :func:`grad_reverse_ad` -- every scalar operation of the solve recorded on
  a tape and swept backwards;
* :func:`grad_coupled` -- the state augmented with its parameter
  sensitivities ``S = dx/dtheta``, integrated forward;
* :func:`grad_adjoint` -- forward solve, then a backward solve of the state,
  costate ``a`` and parameter accumulator ``g``.

Counting convention: ``rhs_evaluations`` counts calls of the (possibly
augmented) right-hand side made by the integrator.  Each such call runs the
dynamics once, carrying all tangent directions in a single pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ad import Tape, value
from .integrate import (
    TABLEAUS,
    EvalCounter,
    IntegratorConfig,
    _lincomb,
    integrate,
    integrate_dense,
)
from .system import ParametricSystem, controls_at


@dataclass(frozen=True)
class LossTarget:
    """``L = sum_i cost(i, x(t_i))`` over sample times ``times`` (first entry may be ``t0``)."""

    times: tuple
    cost: Callable  # (i, x) -> scalar, generic over the scalar tower
    cost_grad: Callable  # (i, x: float array) -> dcost/dx

    @classmethod
    def squared_error(cls, times, refs, weights=None) -> LossTarget:
        refs = [np.asarray(r, dtype=float) for r in refs]
        w = None if weights is None else np.asarray(weights, dtype=float)

        def cost(i, x):
            d = x - refs[i]
            return np.sum(d * d) if w is None else np.sum(w * d * d)

        def cost_grad(i, x):
            d = np.asarray(x, dtype=float) - refs[i]
            return 2.0 * d if w is None else 2.0 * w * d

        return cls(tuple(float(t) for t in times), cost, cost_grad)


@dataclass
class GradientRequest:
    system: ParametricSystem
    theta: np.ndarray
    x0: np.ndarray
    t0: float
    t1: float
    cfg: IntegratorConfig = field(default_factory=IntegratorConfig)
    controls: object = None  # sequence or callable of time
    target: LossTarget | None = None  # None -> Jacobian of x(t1)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.theta.shape != (self.system.ntheta,):
            raise ValueError(f"theta must have {self.system.ntheta} entries")
        if self.x0.shape != (self.system.nx,):
            raise ValueError(f"x0 must have {self.system.nx} entries")
        if self.target is not None:
            lo, hi = min(self.t0, self.t1), max(self.t0, self.t1)
            if any(t < lo - 1e-12 or t > hi + 1e-12 for t in self.target.times):
                raise ValueError("sample times outside the integration span")


@dataclass
class GradientReport:
    method: str
    counters: EvalCounter
    jacobian: np.ndarray | None = None
    gradient: np.ndarray | None = None
    loss: float | None = None
    augmented_dim: int = 0

    @property
    def value(self) -> np.ndarray:
        return self.jacobian if self.jacobian is not None else self.gradient


def jac_dynamics(system: ParametricSystem, theta, x, t=0.0, u=()):
    """``(df/dx, df/dtheta)`` of the ODE right-hand side from one tangent sweep."""
    fx, fth, _ = system.jacobians(theta, x, controls_at(u, t) if u is not None else ())
    return fx, fth


def _sample_times(req: GradientRequest):
    times = list(req.target.times)
    grid = sorted(set([req.t0] + times + [req.t1]), reverse=req.t1 < req.t0)
    return grid


def _solve(req: GradientRequest, theta, counter):
    """x(t1) or the loss, plain float solve."""
    sys_ = req.system

    def f(t, x):
        return sys_.rhs(theta, x, controls_at(req.controls, t))

    if req.target is None:
        x, _ = integrate(f, req.x0, req.t0, req.t1, req.cfg, counter)
        return x
    grid = _sample_times(req)
    xs, _ = integrate_dense(f, req.x0, grid, req.cfg, counter)
    at = dict(zip(grid, xs))
    return sum(float(req.target.cost(i, at[t])) for i, t in enumerate(req.target.times))


def grad_fd(req: GradientRequest, h: float | None = None) -> GradientReport:
    """Central differences with ``h_d = h * max(1, |theta_d|)`` (default ``h = 1e-5``)."""
    base = 1e-5 if h is None else h
    if not base > 0:
        raise ValueError("h must be positive")
    counter = EvalCounter()
    cols = []
    for d in range(len(req.theta)):
        hd = base * max(1.0, abs(req.theta[d]))
        tp = req.theta.copy()
        tm = req.theta.copy()
        tp[d] += hd
        tm[d] -= hd
        cols.append((np.asarray(_solve(req, tp, counter)) - np.asarray(_solve(req, tm, counter))) / (2 * hd))
    if req.target is None:
        J = np.array(cols).T.reshape(req.system.nx, len(req.theta))
        return GradientReport("fd", counter, jacobian=J, augmented_dim=req.system.nx)
    g = np.array(cols, dtype=float).reshape(len(req.theta))
    loss = _solve(req, req.theta, EvalCounter())
    return GradientReport("fd", counter, gradient=g, loss=loss, augmented_dim=req.system.nx)


def grad_reverse_ad(req: GradientRequest, tape_limit: int = 50_000_000) -> GradientReport:
    """Tape the whole fixed-step solve and sweep it backwards."""
    if req.cfg.adaptive:
        raise ValueError("reverse-mode AD requires a fixed-step method")
    sys_ = req.system
    tape = Tape(limit=tape_limit)
    th = tape.vars(req.theta)
    counter = EvalCounter()

    def f(t, x):
        return sys_.rhs_generic(th, x, controls_at(req.controls, t))

    x0 = np.array(list(req.x0), dtype=object)
    if req.target is None:
        x, _ = integrate(f, x0, req.t0, req.t1, req.cfg, counter)
        J = tape.jacobian(list(x), th)
        counter.tape_variables = tape.peak
        return GradientReport("reverse_ad", counter, jacobian=J, augmented_dim=sys_.nx)
    grid = _sample_times(req)
    xs, _ = integrate_dense(f, x0, grid, req.cfg, counter)
    at = dict(zip(grid, xs))
    loss = 0.0
    for i, t in enumerate(req.target.times):
        loss = loss + req.target.cost(i, at[t])
    g = tape.gradient(loss, th)
    counter.tape_variables = tape.peak
    return GradientReport("reverse_ad", counter, gradient=g, loss=value(loss), augmented_dim=sys_.nx)


def grad_coupled(req: GradientRequest) -> GradientReport:
    """Integrate ``[x, S]`` with ``dS/dt = f_x S + f_theta``, ``S(t0) = 0``."""
    sys_ = req.system
    nx, nt = sys_.nx, sys_.ntheta
    theta = req.theta

    def f(t, s):
        x = s[:nx]
        S = s[nx:].reshape(nt, nx)  # row k = dx/dtheta_k
        fx, dS = sys_.rhs_tangent(theta, x, controls_at(req.controls, t), S, theta_dirs=True, k0=0)
        return np.concatenate([fx, dS.ravel()])

    s0 = np.concatenate([req.x0, np.zeros(nx * nt)])
    counter = EvalCounter()
    dim = nx * (1 + nt)
    if req.target is None:
        s, _ = integrate(f, s0, req.t0, req.t1, req.cfg, counter)
        J = s[nx:].reshape(nt, nx).T
        return GradientReport("coupled", counter, jacobian=J, augmented_dim=dim)
    grid = _sample_times(req)
    ss, _ = integrate_dense(f, s0, grid, req.cfg, counter)
    at = dict(zip(grid, ss))
    g = np.zeros(nt)
    loss = 0.0
    for i, t in enumerate(req.target.times):
        s = at[t]
        x = s[:nx]
        S = s[nx:].reshape(nt, nx)
        loss += float(req.target.cost(i, x))
        g += S @ req.target.cost_grad(i, x)
    return GradientReport("coupled", counter, gradient=g, loss=loss, augmented_dim=dim)


def grad_adjoint(req: GradientRequest) -> GradientReport:
    """Loss gradient from a forward solve followed by a backward solve of ``[a, g]``.

    The costate obeys ``da/dt = -a f_x`` and the accumulator
    ``dg/dt = -a f_theta``; ``a`` jumps by ``dcost/dx`` at every sample time
    and ``dL/dtheta = g(t0)``.  Only the states at sample times are kept from
    the forward solve.  The backward solve visits the segments between
    samples in reverse; each segment is re-solved forward from its stored
    start state to recover ``x``, then ``a`` and ``g`` advance backwards with
    the adjoint partner of the forward Runge-Kutta scheme.  The result is the
    exact derivative of the discrete forward solution.
    """
    if req.target is None:
        raise ValueError("the adjoint method computes loss gradients; give a LossTarget")
    sys_ = req.system
    nx, nt = sys_.nx, sys_.ntheta
    theta = req.theta
    counter = EvalCounter()

    def f(t, x):
        return sys_.rhs(theta, x, controls_at(req.controls, t))

    grid = _sample_times(req)
    xs, _ = integrate_dense(f, req.x0, grid, req.cfg, counter)
    at = dict(zip(grid, xs))
    cost_at: dict = {}
    for i, t in enumerate(req.target.times):
        cost_at.setdefault(t, []).append(i)
    loss = sum(float(req.target.cost(i, at[t])) for i, t in enumerate(req.target.times))

    C, A, B = TABLEAUS[req.cfg.method]
    s = len(C)
    # stages that influence the step result, and the later live stages reading each one
    live = [False] * s
    users: list = [[] for _ in range(s)]
    for i in range(s - 1, -1, -1):
        users[i] = [j for j in range(i + 1, s) if live[j] and A[j][i] != 0.0]
        live[i] = B[i] != 0.0 or bool(users[i])

    a = np.zeros(nx)
    g = np.zeros(nt)
    for i in cost_at.get(grid[-1], ()):
        a = a + req.target.cost_grad(i, at[grid[-1]])
    for k in range(len(grid) - 1, 0, -1):
        t_start = grid[k - 1]
        # re-solve the segment, keeping the start state of every step
        steps: list = []
        integrate(f, at[t_start], t_start, grid[k], req.cfg, counter, steps)
        for t, h, x0 in reversed(steps):
            ks = [None] * s
            jac = [None] * s
            for i in range(s):
                if not live[i]:
                    continue
                Y = x0 if i == 0 else x0 + h * _lincomb(A[i], ks)
                fv, fx, fth, _ = sys_.value_and_jacobians(theta, Y, controls_at(req.controls, t + C[i] * h))
                counter.rhs_evaluations += 1
                ks[i] = fv
                jac[i] = (fx, fth)
            w = [None] * s
            a_new = a.copy()
            for i in range(s - 1, -1, -1):
                if not live[i]:
                    continue
                nu = (h * B[i]) * a
                for j in users[i]:
                    nu = nu + (h * A[j][i]) * w[j]
                fx, fth = jac[i]
                w[i] = nu @ fx
                a_new += w[i]
                g += nu @ fth
            a = a_new
        for i in cost_at.get(t_start, ()):
            a = a + req.target.cost_grad(i, at[t_start])
    return GradientReport("adjoint", counter, gradient=g, loss=loss, augmented_dim=2 * nx + nt)


ENGINES = {
    "fd": grad_fd,
    "reverse_ad": grad_reverse_ad,
    "coupled": grad_coupled,
    "adjoint": grad_adjoint,
}
