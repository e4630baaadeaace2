"""iLQR trajectory optimization, receding-horizon MPC and adaptive MPC.

The controller plans on the flat state ``x = [q, qd]`` of a
:class:`ParametricSystem`; costs are written on observations.  For the
cartpole family an observation is ``(p, pd, sin q_i, cos q_i ..., qd_i ...,
qdd_i ...)`` over the revolute joints, with accelerations recomputed from the
dynamics at the control being held.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .integrate import TABLEAUS, DivergenceError, IntegrationError, IntegratorConfig, _lincomb, integrate
from .model import Model, ModelError, ParameterBinding
from .optimize import OptimizeResult, OptimizerConfig, minimize
from .system import ParametricSystem

CONTROL_DT = 0.01


# ---------------------------------------------------------------- observations

def _check_cartpole(m: Model) -> int:
    jt = [j.kind for j in m.joints]
    if not jt or jt[0] != "prismatic" or any(t != "revolute" for t in jt[1:]):
        raise ValueError("observations need a cartpole topology: one prismatic joint then revolute joints")
    return len(jt) - 1


def observation_size(n_poles: int) -> int:
    return 2 + 4 * n_poles


def observe(m: Model, x, qdd) -> np.ndarray:
    """Observation of state ``x = [q, qd]`` with joint accelerations ``qdd``."""
    n = _check_cartpole(m)
    x = np.asarray(x, dtype=float)
    nq = n + 1
    q, qd = x[:nq], x[nq:]
    sc = np.empty(2 * n)
    sc[0::2] = np.sin(q[1:])
    sc[1::2] = np.cos(q[1:])
    return np.concatenate([[q[0], qd[0]], sc, qd[1:], np.asarray(qdd, dtype=float)[1:]])


def state_from_observation(obs, n_poles: int) -> np.ndarray:
    """Recover ``[q, qd]`` (angles in ``(-pi, pi]``) from an observation."""
    obs = np.asarray(obs, dtype=float)
    ang = np.arctan2(obs[2:2 + 2 * n_poles:2], obs[3:3 + 2 * n_poles:2])
    w = obs[2 + 2 * n_poles:2 + 3 * n_poles]
    return np.concatenate([[obs[0]], ang, [obs[1]], w])


def upright_goal(n_poles: int) -> np.ndarray:
    g = np.zeros(observation_size(n_poles))
    g[3:3 + 2 * n_poles:2] = 1.0
    return g


# ----------------------------------------------------------------- cost specs

@dataclass(frozen=True)
class CostSpec:
    """Diagonal weights of ``J = sum(e'Qe + u'Ru) + e_H'S e_H`` with ``e = goal - obs``.

    ``observation`` is ``"cartpole"`` for the observation above or
    ``"state"`` to put the cost on the flat state directly.
    """

    Q: tuple
    R: tuple
    S: tuple
    goal: tuple
    observation: str = "cartpole"

    def __post_init__(self):
        if not (len(self.Q) == len(self.S) == len(self.goal)):
            raise ValueError("Q, S and goal must have the observation size")
        if min(self.Q, default=0.0) < 0 or min(self.S, default=0.0) < 0:
            raise ValueError("Q and S entries must be non-negative")
        if not self.R or min(self.R) <= 0:
            raise ValueError("R entries must be positive")
        if self.observation not in ("cartpole", "state"):
            raise ValueError(f"unknown observation kind {self.observation!r}")

    @classmethod
    def cartpole_default(cls, n_poles: int, pose=1.0, rate=0.1, control=1e-3, terminal=10.0) -> CostSpec:
        """Weight ``pose`` on position and angle terms, ``rate`` on velocities and accelerations."""
        Q = np.full(observation_size(n_poles), rate)
        Q[0] = pose
        Q[2:2 + 2 * n_poles] = pose
        return cls(tuple(Q), (control,), tuple(terminal * Q), tuple(upright_goal(n_poles)))


def cost(observations, controls, spec: CostSpec) -> float:
    """Trajectory cost from ``H + 1`` observations and ``H`` controls."""
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    U = np.asarray(controls, dtype=float).reshape(len(obs) - 1, -1)
    H = len(U)
    if H < 1:
        raise ValueError("need at least one control")
    if obs.shape[1] != len(spec.Q) or U.shape[1] != len(spec.R):
        raise ValueError("dimension mismatch between trajectory and cost spec")
    Q, R, S, goal = (np.asarray(v, dtype=float) for v in (spec.Q, spec.R, spec.S, spec.goal))
    e = goal - obs
    return float(np.sum(e[:H] ** 2 * Q) + np.sum(U ** 2 * R) + np.sum(e[H] ** 2 * S))


@dataclass(frozen=True)
class ControlBounds:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("bounds need matching lengths")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("lower bound exceeds upper bound")

    @classmethod
    def unbounded(cls, nu: int) -> ControlBounds:
        return cls((-math.inf,) * nu, (math.inf,) * nu)

    @classmethod
    def symmetric(cls, limit: float, nu: int = 1) -> ControlBounds:
        return cls((-limit,) * nu, (limit,) * nu)

    def clamp(self, u) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)


# ------------------------------------------------------------ discrete steps

def step(system: ParametricSystem, theta, x, u, dt: float, method: str = "rk4",
         substeps: int = 1) -> np.ndarray:
    """One control interval of length ``dt`` with the control held constant."""
    C, A, B = TABLEAUS[method]
    h = dt / substeps
    x = np.asarray(x, dtype=float)
    for _ in range(substeps):
        ks = []
        for i in range(len(C)):
            xi = x if i == 0 else x + h * _lincomb(A[i], ks)
            ks.append(system.rhs(theta, xi, u))
        x = x + h * _lincomb(B, ks)
    return x


def _step_tangent(system, theta, x, u, dt, method, substeps, dX, dU, theta_dirs=False):
    """One control interval carrying tangent directions ``dX`` (K, nx), ``dU`` (K, nu).

    Returns ``(x_next, dx_next, f0, df0)`` where ``f0, df0`` belong to the very first stage.
    """
    C, A, B = TABLEAUS[method]
    h = dt / substeps
    x = np.asarray(x, dtype=float)
    first = None
    for _ in range(substeps):
        ks, dks = [], []
        for i in range(len(C)):
            if i == 0:
                xi, dxi = x, dX
            else:
                xi = x + h * _lincomb(A[i], ks)
                dxi = dX + h * _lincomb(A[i], dks)
            f, df = system.rhs_tangent(theta, xi, u, dxi, dU, theta_dirs=theta_dirs, k0=0)
            ks.append(f)
            dks.append(df)
        if first is None:
            first = (ks[0], dks[0])
        x, dX = x + h * _lincomb(B, ks), dX + h * _lincomb(B, dks)
    return x, dX, first[0], first[1]


def linearize(system: ParametricSystem, theta, x, u, dt: float, method: str = "rk4", substeps: int = 1):
    """``(A, B)``: Jacobians of the one-step map from forward tangent sweeps."""
    return _linearize(system, theta, x, u, dt, method, substeps)[:2]


def _linearize(system, theta, x, u, dt, method, substeps):
    nx, nu = system.nx, system.nu
    K = nx + nu
    dX = np.zeros((K, nx))
    dX[:nx] = np.eye(nx)
    dU = np.zeros((K, nu))
    dU[nx:] = np.eye(nu)
    xn, dxn, f0, df0 = _step_tangent(system, theta, x, u, dt, method, substeps, dX, dU)
    J = dxn.T
    return J[:, :nx], J[:, nx:], xn, f0, df0.T


class _Observer:
    """Observation value and Jacobians ``(o, O_x, O_u)`` for a planning system."""

    def __init__(self, system: ParametricSystem, kind: str):
        self.system = system
        self.kind = kind
        if kind == "cartpole":
            self.n = _check_cartpole(system.model)

    def size(self):
        return self.system.nx if self.kind == "state" else observation_size(self.n)

    def value(self, theta, x, u):
        if self.kind == "state":
            return np.asarray(x, dtype=float)
        f = self.system.rhs(theta, x, u)
        return observe(self.system.model, x, f[self.system.nq:])

    def angle_curvature(self, x, e, W):
        """Second-order part of ``e'We`` from the curvature of sin and cos (state Hessian)."""
        H = np.zeros((self.system.nx, self.system.nx))
        if self.kind == "state":
            return H
        for i in range(self.n):
            qi = x[1 + i]
            s_, c_ = 2 + 2 * i, 3 + 2 * i
            H[1 + i, 1 + i] = 2.0 * (W[s_] * e[s_] * math.sin(qi) + W[c_] * e[c_] * math.cos(qi))
        return H

    def jac(self, theta, x, u, f=None, dfdz=None):
        """``dfdz`` is ``(nx, nx + nu)``: the rhs Jacobian at ``(x, u)`` if already known."""
        s = self.system
        nx, nu = s.nx, s.nu
        if self.kind == "state":
            return np.asarray(x, dtype=float), np.eye(nx), np.zeros((nx, nu))
        if dfdz is None:
            K = nx + nu
            dX = np.zeros((K, nx))
            dX[:nx] = np.eye(nx)
            dU = np.zeros((K, nu))
            dU[nx:] = np.eye(nu)
            f, df = s.rhs_tangent(theta, x, u, dX, dU)
            dfdz = df.T
        n, nq = self.n, s.nq
        o = observe(s.model, x, f[nq:])
        Oz = np.zeros((len(o), nx + nu))
        Oz[0, 0] = 1.0
        Oz[1, nq] = 1.0
        for i in range(n):
            qi = x[1 + i]
            Oz[2 + 2 * i, 1 + i] = math.cos(qi)
            Oz[3 + 2 * i, 1 + i] = -math.sin(qi)
            Oz[2 + 2 * n + i, nq + 1 + i] = 1.0
        Oz[2 + 3 * n:] = dfdz[nq + 1:]
        return o, Oz[:, :nx], Oz[:, nx:]


# ----------------------------------------------------------------------- iLQR

@dataclass
class ILQRResult:
    controls: np.ndarray  # (H, nu)
    states: np.ndarray  # (H + 1, nx)
    costs: list  # accepted cost after every iteration, first entry is the initial rollout
    iterations: int
    status: str  # converged | max_iters | regularization_overflow
    gains: list = field(default_factory=list)


@dataclass(frozen=True)
class ILQRConfig:
    dt: float = CONTROL_DT
    method: str = "rk4"
    substeps: int = 1  # integrator steps per control interval
    max_iters: int = 100
    tol: float = 1e-8  # relative cost improvement that counts as converged
    mu0: float = 0.0
    mu_min: float = 1e-6
    mu_max: float = 1e10
    line_search: tuple = (1.0, 0.5, 0.25, 0.1, 0.05, 0.01, 0.001)


class _Problem:
    def __init__(self, system, theta, x0, spec: CostSpec, bounds: ControlBounds, cfg: ILQRConfig):
        self.system = system
        self.theta = np.asarray(theta, dtype=float)
        self.x0 = np.asarray(x0, dtype=float)
        self.spec = spec
        self.bounds = bounds
        self.cfg = cfg
        self.obs = _Observer(system, spec.observation)
        if self.obs.size() != len(spec.Q):
            raise ValueError("cost spec does not match the observation size")
        if len(spec.R) != system.nu or len(bounds.lower) != system.nu:
            raise ValueError("cost spec or bounds do not match the control size")
        self.Q = np.asarray(spec.Q, dtype=float)
        self.R = np.asarray(spec.R, dtype=float)
        self.S = np.asarray(spec.S, dtype=float)
        self.goal = np.asarray(spec.goal, dtype=float)
        self.zero_u = np.zeros(system.nu)

    def rollout(self, U, X_ref=None, k=None, K=None, alpha=1.0):
        """Forward pass; with gains it applies ``u = U + alpha k + K (x - X_ref)`` clamped."""
        H = len(U)
        X = np.empty((H + 1, self.system.nx))
        Un = np.empty_like(U)
        X[0] = self.x0
        J = 0.0
        for t in range(H):
            u = U[t] if k is None else U[t] + alpha * k[t] + K[t] @ (X[t] - X_ref[t])
            u = self.bounds.clamp(u)
            Un[t] = u
            e = self.goal - self.obs.value(self.theta, X[t], u)
            J += float(e @ (self.Q * e) + u @ (self.R * u))
            X[t + 1] = step(self.system, self.theta, X[t], u, self.cfg.dt, self.cfg.method, self.cfg.substeps)
            if not np.all(np.isfinite(X[t + 1])):
                return Un, X, math.inf
        e = self.goal - self.obs.value(self.theta, X[H], self.zero_u)
        J += float(e @ (self.S * e))
        return Un, X, J if math.isfinite(J) else math.inf

    def derivatives(self, U, X):
        """Dynamics Jacobians and cost expansions along a rollout.

        The cost Hessian is Gauss-Newton except for the sin/cos terms, whose
        exact curvature is kept so that the hanging state is not mistaken for
        a minimum.
        """
        H = len(U)
        out = []
        for t in range(H):
            A, B, _, f0, dfdz = _linearize(self.system, self.theta, X[t], U[t], self.cfg.dt, self.cfg.method,
                                              self.cfg.substeps)
            o, Ox, Ou = self.obs.jac(self.theta, X[t], U[t], f0, dfdz)
            e = self.goal - o
            QOx, QOu = self.Q[:, None] * Ox, self.Q[:, None] * Ou
            lx = -2.0 * (QOx.T @ e)
            lu = -2.0 * (QOu.T @ e) + 2.0 * self.R * U[t]
            lxx = 2.0 * Ox.T @ QOx + self.obs.angle_curvature(X[t], e, self.Q)
            luu = 2.0 * Ou.T @ QOu + 2.0 * np.diag(self.R)
            lux = 2.0 * Ou.T @ QOx
            out.append((A, B, lx, lu, lxx, luu, lux))
        o, Ox, _ = self.obs.jac(self.theta, X[H], self.zero_u)
        e = self.goal - o
        SOx = self.S[:, None] * Ox
        return out, (-2.0 * (SOx.T @ e), 2.0 * Ox.T @ SOx + self.obs.angle_curvature(X[H], e, self.S))

    def backward(self, derivs, terminal, mu):
        Vx, Vxx = terminal
        ks, Ks = [], []
        expected = 0.0
        for A, B, lx, lu, lxx, luu, lux in reversed(derivs):
            Qx = lx + A.T @ Vx
            Qu = lu + B.T @ Vx
            Qxx = lxx + A.T @ Vxx @ A
            Quu = luu + B.T @ Vxx @ B
            Qux = lux + B.T @ Vxx @ A
            Quu_reg = Quu + mu * np.eye(len(Qu))
            try:
                L = np.linalg.cholesky(Quu_reg)
            except np.linalg.LinAlgError:
                return None
            k = -np.linalg.solve(L.T, np.linalg.solve(L, Qu))
            K = -np.linalg.solve(L.T, np.linalg.solve(L, Qux))
            Vx = Qx + K.T @ Quu @ k + K.T @ Qu + Qux.T @ k
            Vxx = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
            Vxx = 0.5 * (Vxx + Vxx.T)
            expected += float(k @ Qu)
            ks.append(k)
            Ks.append(K)
        return ks[::-1], Ks[::-1], expected


def ilqr(system: ParametricSystem, theta, x0, u_init, spec: CostSpec, bounds: ControlBounds,
         cfg: ILQRConfig = ILQRConfig()) -> ILQRResult:
    """Iterative LQR with Levenberg regularization, line search and control clamping.

    The cost curve only records accepted iterates, so it never increases.
    """
    prob = _Problem(system, theta, x0, spec, bounds, cfg)
    U0 = np.atleast_2d(np.asarray(u_init, dtype=float).reshape(len(u_init), -1))
    if len(U0) < 1:
        raise ValueError("horizon must be at least one step")
    U, X, J = prob.rollout(U0)
    if not math.isfinite(J):
        raise DivergenceError("initial rollout is not finite")
    costs = [J]
    mu = cfg.mu0
    status = "max_iters"
    gains: list = []
    it = 0
    derivs = None
    while it < cfg.max_iters:
        if derivs is None:
            derivs = prob.derivatives(U, X)
        bw = prob.backward(*derivs, mu)
        if bw is None:
            mu = max(cfg.mu_min, 10.0 * mu)
            if mu > cfg.mu_max:
                status = "regularization_overflow"
                break
            continue
        ks, Ks, expected = bw
        if max(float(np.max(np.abs(k), initial=0.0)) for k in ks) <= 1e-12 * (1.0 + float(np.max(np.abs(U)))):
            status = "converged"
            break
        accepted = False
        for alpha in cfg.line_search:
            Un, Xn, Jn = prob.rollout(U, X, ks, Ks, alpha)
            if Jn < J:
                accepted = True
                break
        it += 1
        if not accepted:
            mu = max(cfg.mu_min, 10.0 * mu)
            if mu > cfg.mu_max:
                status = "regularization_overflow"
                break
            continue
        gains = Ks
        improvement = J - Jn
        U, X, J = Un, Xn, Jn
        derivs = None
        costs.append(J)
        mu = 0.0 if mu <= cfg.mu_min else mu / 10.0
        if improvement <= cfg.tol * max(abs(J), 1e-300):
            status = "converged"
            break
    return ILQRResult(U, X, costs, it, status, gains)


# ------------------------------------------------------------------------ MPC

class MPCController:
    """Receding-horizon iLQR warm-started from the previous plan shifted by one step."""

    def __init__(self, system: ParametricSystem, spec: CostSpec, bounds: ControlBounds, H: int,
                 cfg: ILQRConfig = ILQRConfig(max_iters=10)):
        if H < 1:
            raise ValueError("horizon must be at least one step")
        self.system = system
        self.spec = spec
        self.bounds = bounds
        self.H = H
        self.cfg = cfg
        self.plan = None
        self.last: ILQRResult | None = None

    def reset(self):
        self.plan = None
        self.last = None

    def warm_start(self) -> np.ndarray:
        if self.plan is None:
            return np.zeros((self.H, self.system.nu))
        return np.vstack([self.plan[1:], self.plan[-1:]])

    def __call__(self, x, theta) -> np.ndarray:
        res = ilqr(self.system, theta, x, self.warm_start(), self.spec, self.bounds, self.cfg)
        self.plan = res.controls
        self.last = res
        return self.bounds.clamp(res.controls[0])


def mpc_step(x, system: ParametricSystem, theta, spec: CostSpec, bounds: ControlBounds, H: int,
             warm=None, cfg: ILQRConfig = ILQRConfig(max_iters=10)):
    """First control of an ``H``-step iLQR plan, plus the plan for the next warm start.

    ``warm`` is the previous plan; it is shifted by one step before use.
    """
    ctrl = MPCController(system, spec, bounds, H, cfg)
    if warm is not None:
        ctrl.plan = np.asarray(warm, dtype=float).reshape(H, -1)
    u = ctrl(x, theta)
    return u, ctrl.plan


# ---------------------------------------------------------- model fitting

@dataclass(frozen=True)
class Transition:
    x: tuple  # observation at t
    u: tuple
    x_next: tuple  # observation at t + dt

    def __post_init__(self):
        if len(self.x) != len(self.x_next):
            raise ValueError("observations of one transition must have equal size")


class ReplayBuffer:
    """Append-only transition store; once ``capacity`` is reached new items are dropped."""

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.transitions: list[Transition] = []

    def add(self, tr: Transition) -> bool:
        if self.capacity is not None and len(self.transitions) >= self.capacity:
            return False
        self.transitions.append(tr)
        return True

    def extend(self, other) -> None:
        for tr in other:
            self.add(tr)

    def __len__(self):
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)


def _prediction(system, theta, tr, dt, method, substeps, with_grad):
    """Predicted next observation and, optionally, its Jacobian w.r.t. theta."""
    n = _check_cartpole(system.model)
    x = state_from_observation(tr.x, n)
    u = np.asarray(tr.u, dtype=float)
    if not with_grad:
        xn = step(system, theta, x, u, dt, method, substeps)
        return observe(system.model, xn, system.qdd(theta, xn[:system.nq], xn[system.nq:], u)), None
    nt = system.ntheta
    dX = np.zeros((nt, system.nx))
    dU = np.zeros((nt, system.nu))
    xn, S, _, _ = _step_tangent(system, theta, x, u, dt, method, substeps, dX, dU, theta_dirs=True)
    f, df = system.rhs_tangent(theta, xn, u, S, dU, theta_dirs=True, k0=0)
    obs = observe(system.model, xn, f[system.nq:])
    # d obs / d theta, rows follow the observation layout
    G = np.zeros((len(obs), nt))
    nq = system.nq
    G[0] = S[:, 0]
    G[1] = S[:, nq]
    for i in range(n):
        G[2 + 2 * i] = math.cos(xn[1 + i]) * S[:, 1 + i]
        G[3 + 2 * i] = -math.sin(xn[1 + i]) * S[:, 1 + i]
        G[2 + 2 * n + i] = S[:, nq + 1 + i]
    G[2 + 3 * n:] = df[:, nq + 1:].T
    return obs, G


def prediction_loss(system: ParametricSystem, theta, transitions, dt: float = CONTROL_DT,
                    method: str = "rk4", substeps: int = 1, with_grad: bool = True):
    """``sum ||obs(step(x_t, u_t; theta)) - x_{t+1}||^2`` and its gradient."""
    theta = np.asarray(theta, dtype=float)
    L = 0.0
    g = np.zeros(system.ntheta)
    for tr in transitions:
        try:
            pred, G = _prediction(system, theta, tr, dt, method, substeps, with_grad)
        except (ArithmeticError, ModelError):
            return math.inf, np.full(system.ntheta, math.nan)
        r = pred - np.asarray(tr.x_next, dtype=float)
        L += float(r @ r)
        if with_grad:
            g += 2.0 * (G.T @ r)
    if not math.isfinite(L):
        return math.inf, np.full(system.ntheta, math.nan)
    return L, g


def mean_prediction_error(system, theta, transitions, dt=CONTROL_DT, method="rk4", substeps=1) -> float:
    """Root-mean-square one-step observation error."""
    trs = list(transitions)
    if not trs:
        return math.nan
    L, _ = prediction_loss(system, theta, trs, dt, method, substeps, with_grad=False)
    return math.sqrt(L / (len(trs) * len(trs[0].x_next)))


def mass_lower_bounds(binding: ParameterBinding, floor: float = 1e-3) -> tuple:
    """Lower bounds keeping every bound mass at least ``floor``; other entries are free."""
    lo = [-math.inf] * binding.arity
    for sel, idx, scale, power in binding.entries:
        if sel.kind == "mass" and scale > 0 and power == 1:
            lo[idx] = max(lo[idx], floor / scale)
    return tuple(lo)


@dataclass
class FitResult:
    theta: np.ndarray
    loss: float
    iterations: int
    status: str
    losses: list


def fit_model(buffer, m: Model, binding: ParameterBinding, theta0, opt: OptimizerConfig = OptimizerConfig(max_iters=25),
              u_map=(0,), dt: float = CONTROL_DT, method: str = "rk4", substeps: int = 1,
              engine: str = "coupled",
              system: ParametricSystem | None = None) -> FitResult:
    """L-BFGS on the one-step prediction loss of the stored transitions.

    Without explicit lower bounds in ``opt`` the bound masses are kept
    positive.  ``engine`` is ``"coupled"`` (one-step forward sensitivities) or ``"fd"``.
    """
    trs = list(buffer)
    if not trs:
        raise ValueError("replay buffer is empty")
    sys_ = system if system is not None else ParametricSystem(m, binding, u_map)
    if engine == "coupled":
        def fun(th):
            return prediction_loss(sys_, th, trs, dt, method, substeps)
    elif engine == "fd":
        def fun(th):
            L, _ = prediction_loss(sys_, th, trs, dt, method, substeps, with_grad=False)
            g = np.empty_like(th)
            for d in range(len(th)):
                h = 1e-6 * max(1.0, abs(th[d]))
                tp, tm = th.copy(), th.copy()
                tp[d] += h
                tm[d] -= h
                g[d] = (prediction_loss(sys_, tp, trs, dt, method, substeps, False)[0]
                        - prediction_loss(sys_, tm, trs, dt, method, substeps, False)[0]) / (2 * h)
            return L, g
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if opt.lower is None:
        opt = replace(opt, lower=mass_lower_bounds(sys_.binding))
    res: OptimizeResult = minimize(fun, np.asarray(theta0, dtype=float), opt)
    return FitResult(res.x, res.f, res.iterations, res.status, res.losses)


# ------------------------------------------------------------- environment

class ReferenceEnvironment:
    """Stand-in for the real system: the engine with parameters the controller never sees.

    It integrates with its own method and internal step, clamps controls and
    reports observations.  Everything is deterministic given the seed.
    """

    def __init__(self, model: Model, u_map=(0,), bounds: ControlBounds | None = None,
                 cfg: IntegratorConfig = IntegratorConfig("dopri45", dt=0.0025, abs_tol=1e-9, rel_tol=1e-9,
                                                          max_step=0.0025),
                 control_dt: float = CONTROL_DT, perturbation: float = 0.05, seed: int = 0):
        self.n = _check_cartpole(model)
        self._system = ParametricSystem(model, None, u_map)
        self.bounds = bounds if bounds is not None else ControlBounds.unbounded(len(u_map))
        self.cfg = cfg
        self.control_dt = control_dt
        self.perturbation = perturbation
        self.rng = np.random.default_rng(seed)
        self.t = 0.0
        self.x = np.zeros(self._system.nx)
        self.u = np.zeros(self._system.nu)

    @property
    def nu(self):
        return self._system.nu

    def _obs(self):
        s = self._system
        qdd = s.qdd((), self.x[:s.nq], self.x[s.nq:], self.u)
        return observe(s.model, self.x, qdd)

    def reset(self) -> np.ndarray:
        """Hanging rest plus a seeded perturbation of every pole angle."""
        s = self._system
        self.x = np.zeros(s.nx)
        self.x[1] = math.pi
        self.x[1:1 + self.n] += self.rng.uniform(-self.perturbation, self.perturbation, self.n)
        self.u = np.zeros(s.nu)
        self.t = 0.0
        return self._obs()

    def step(self, u) -> np.ndarray:
        u = self.bounds.clamp(np.atleast_1d(np.asarray(u, dtype=float)))
        s = self._system

        def f(t, x):
            return s.rhs((), x, u)

        self.x, _ = integrate(f, self.x, self.t, self.t + self.control_dt, self.cfg)
        self.t += self.control_dt
        self.u = u
        return self._obs()

    @property
    def state(self) -> np.ndarray:
        return self.x.copy()


# ------------------------------------------------------------- adaptive MPC

@dataclass
class AdaptiveMPCResult:
    episode_costs: list
    theta_history: list  # theta0 followed by every fitted theta
    fit_iterations: list
    fit_status: list
    fit_losses: list  # loss curve of every fit
    buffers: list  # stored transitions per episode
    heldout: list  # held-out transitions per episode
    heldout_errors: list  # after each episode's closing fit, on all held-out transitions
    log: list  # (t, episode, u, obs) per step
    success: list  # swing-up flag per episode
    diverged: bool = False

    @property
    def first_success(self) -> int | None:
        for e, ok in enumerate(self.success):
            if ok:
                return e + 1
        return None


def swung_up(observations, n_poles: int, last: int = 10, threshold: float = 0.95) -> bool:
    """Every pole has ``cos q >= threshold`` over the final ``last`` observations."""
    obs = np.asarray(observations, dtype=float)
    if len(obs) < last:
        return False
    tail = obs[-last:]
    return bool(np.all(tail[:, 3:3 + 2 * n_poles:2] >= threshold))


def _stored(t: int, per_episode: int | None, T: int) -> bool:
    """Spread ``per_episode`` stored transitions evenly over ``T`` steps; the rest is held out."""
    if per_episode is None or per_episode >= T:
        return True
    return (t * per_episode) // T != ((t + 1) * per_episode) // T


def adaptive_mpc(env: ReferenceEnvironment, m: Model, binding: ParameterBinding, theta0, spec: CostSpec,
                 bounds: ControlBounds, M: int, T: int, H: int, warmup_fit_every: int | None = 50,
                 u_map=(0,), ilqr_cfg: ILQRConfig = ILQRConfig(max_iters=10),
                 fit_opt: OptimizerConfig = OptimizerConfig(max_iters=25, f_tol=1e-6),
                 per_episode: int | None = 100, engine: str = "coupled",
                 stop_on_success: bool = False) -> AdaptiveMPCResult:
    """Alternate MPC episodes against ``env`` with refits of the model parameters.

    A fit runs after every episode and, during the first episode, also every
    ``warmup_fit_every`` steps.  At most ``per_episode`` transitions of each
    episode enter the replay buffer; the others are kept for validation.
    """
    if min(M, T, H) < 1:
        raise ValueError("M, T and H must be at least 1")
    n = _check_cartpole(m)
    system = ParametricSystem(m, binding, u_map)
    theta = np.asarray(theta0, dtype=float).copy()
    ctrl = MPCController(system, spec, bounds, H, ilqr_cfg)
    buffer = ReplayBuffer()
    res = AdaptiveMPCResult([], [theta.copy()], [], [], [], [], [], [], [], [])

    def refit():
        nonlocal theta
        fr = fit_model(buffer, m, binding, theta, fit_opt, u_map, ilqr_cfg.dt, ilqr_cfg.method,
                       ilqr_cfg.substeps, engine, system)
        if np.all(np.isfinite(fr.theta)):
            theta = fr.theta.copy()
        res.theta_history.append(theta.copy())
        res.fit_iterations.append(fr.iterations)
        res.fit_status.append(fr.status)
        res.fit_losses.append(fr.losses)

    episode_thetas = []
    for ep in range(M):
        obs = env.reset()
        ctrl.reset()
        stored, held = [], []
        observations = [obs]
        controls = []
        try:
            for t in range(T):
                x = state_from_observation(obs, n)
                u = ctrl(x, theta)
                nxt = env.step(u)
                u = env.u
                tr = Transition(tuple(obs), tuple(u), tuple(nxt))
                (stored if _stored(t, per_episode, T) else held).append(tr)
                if _stored(t, per_episode, T):
                    buffer.add(tr)
                res.log.append((round((t + 1) * env.control_dt, 12), ep + 1, u.copy(), nxt.copy()))
                controls.append(u.copy())
                observations.append(nxt)
                obs = nxt
                if ep == 0 and warmup_fit_every and (t + 1) % warmup_fit_every == 0 and t + 1 < T:
                    refit()
        except (IntegrationError, ArithmeticError):
            res.diverged = True
        res.buffers.append(stored)
        res.heldout.append(held)
        if controls:
            res.episode_costs.append(cost(observations, controls, spec))
        res.success.append(not res.diverged and swung_up(observations, n))
        if res.diverged:
            break
        refit()
        episode_thetas.append(theta.copy())
        if stop_on_success and res.success[-1]:
            break
    all_held = [tr for h in res.heldout for tr in h]
    res.heldout_errors = [mean_prediction_error(system, th, all_held, ilqr_cfg.dt, ilqr_cfg.method,
                                                ilqr_cfg.substeps)
                          for th in episode_thetas]
    return res
