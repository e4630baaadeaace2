"""Parameter estimation from trajectories and serial-arm design by L-BFGS."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ad import Tape
from .dynamics import forward_kinematics
from .integrate import IntegrationError, IntegratorConfig, integrate_dense
from .model import DHParams, model_from_dh
from .optimize import OptimizeResult, OptimizerConfig, minimize
from .sensitivity import ENGINES, GradientReport, GradientRequest, LossTarget
from .system import ParametricSystem, controls_at


@dataclass
class ReferenceTrajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), nx)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if len(self.times) == 0:
            raise ValueError("empty reference trajectory")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("reference times must be strictly increasing")
        if self.states.shape[0] != len(self.times):
            raise ValueError("one state per time sample required")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i}" for i in range(self.states.shape[1])])
        for t, x in zip(self.times, self.states):
            w.writerow([format_float(t)] + [format_float(v) for v in x])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> ReferenceTrajectory:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:1] != ["t"]:
            raise ValueError("reference CSV needs a header starting with 't'")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        if data.size == 0:
            raise ValueError("reference CSV has no samples")
        return cls(data[:, 0], data[:, 1:])

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> ReferenceTrajectory:
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def format_float(v) -> str:
    """Fixed 15-significant-digit text, stable across platforms."""
    v = float(v)
    if v == 0.0:
        return "0"
    return f"{v:.15g}"


def simulate(system: ParametricSystem, theta, x0, times, cfg: IntegratorConfig, controls=None):
    def f(t, x):
        return system.rhs(theta, x, controls_at(controls, t))

    xs, _ = integrate_dense(f, x0, times, cfg)
    return ReferenceTrajectory(times, np.array(xs))


def _target(ref: ReferenceTrajectory) -> LossTarget:
    # first sample is the initial state and does not contribute
    return LossTarget.squared_error(ref.times[1:], ref.states[1:])


def trajectory_loss(system: ParametricSystem, theta, ref: ReferenceTrajectory,
                    cfg: IntegratorConfig, controls=None) -> float:
    """Sum of squared state errors over every sample after the first."""
    if ref.states.shape[1] != system.nx:
        raise ValueError(f"reference states have {ref.states.shape[1]} entries, system has {system.nx}")
    sim = simulate(system, theta, ref.states[0], ref.times, cfg, controls)
    d = sim.states[1:] - ref.states[1:]
    return float(np.sum(d * d))


@dataclass
class EstimationResult:
    theta: np.ndarray
    losses: list
    reports: list = field(default_factory=list)
    optimizer: OptimizeResult | None = None


def estimate_parameters(system: ParametricSystem, theta0, ref: ReferenceTrajectory,
                        method: str = "coupled", opt: OptimizerConfig = OptimizerConfig(),
                        cfg: IntegratorConfig | None = None, controls=None) -> EstimationResult:
    """Fit ``theta`` so the simulated trajectory from ``ref.states[0]`` matches ``ref``.

    ``method`` picks the gradient engine (``fd``, ``reverse_ad``, ``coupled``
    or ``adjoint``).  Integration errors at trial points count as infinite
    loss so the line search backs off.
    """
    if method not in ENGINES:
        raise ValueError(f"unknown gradient engine {method!r}")
    if cfg is None:
        cfg = IntegratorConfig("rk4", dt=float(np.min(np.diff(ref.times))) if len(ref.times) > 1 else 0.01)
    if ref.states.shape[1] != system.nx:
        raise ValueError(f"reference states have {ref.states.shape[1]} entries, system has {system.nx}")
    target = _target(ref)
    reports: list[GradientReport] = []

    def fun(theta):
        req = GradientRequest(system, theta, ref.states[0], float(ref.times[0]), float(ref.times[-1]),
                              cfg, controls, target)
        try:
            rep = ENGINES[method](req)
        except (IntegrationError, ArithmeticError, ValueError):
            return math.inf, np.full(len(theta), np.nan)
        reports.append(rep)
        return rep.loss, rep.gradient

    res = minimize(fun, np.asarray(theta0, dtype=float), opt)
    return EstimationResult(res.x, res.losses, reports, res)


# -- arm design ---------------------------------------------------------------

def end_effector_positions(dh: DHParams, q_traj) -> list:
    m = model_from_dh(dh)
    return [forward_kinematics(m, list(q))[-1].position for q in q_traj]


def design_loss(dh: DHParams, q_traj, p_traj):
    """Sum of squared end-effector position errors (generic over scalars)."""
    loss = 0.0
    for p, target in zip(end_effector_positions(dh, q_traj), p_traj):
        for k in range(3):
            e = p[k] - float(target[k])
            loss = loss + e * e
    return loss


@dataclass
class DesignResult:
    dh: DHParams
    losses: list
    history: list  # flat design vectors per iterate
    optimizer: OptimizeResult

    def rms_error(self, q_traj, p_traj) -> float:
        pts = np.array([[float(c) for c in p] for p in end_effector_positions(self.dh, q_traj)])
        return float(np.sqrt(np.mean(np.sum((pts - np.asarray(p_traj)) ** 2, axis=1))))


def design_arm(dh0: DHParams, q_traj, p_traj, opt: OptimizerConfig = OptimizerConfig(),
               free=None) -> DesignResult:
    """Fit the DH design scalars (d, a, alpha per joint) to an end-effector path.

    ``free`` optionally masks which entries of the flat design vector
    (laid out as in :meth:`DHParams.flat`) may change.
    """
    q_traj = np.atleast_2d(np.asarray(q_traj, dtype=float))
    p_traj = np.atleast_2d(np.asarray(p_traj, dtype=float))
    if len(q_traj) != len(p_traj):
        raise ValueError("joint and task trajectories differ in length")
    if q_traj.shape[1] != dh0.n:
        raise ValueError(f"joint trajectory has {q_traj.shape[1]} columns, arm has {dh0.n} joints")
    base = dh0.flat()
    mask = np.ones(len(base), dtype=bool) if free is None else np.asarray(free, dtype=bool)
    idx = np.flatnonzero(mask)

    def full(z):
        x = base.copy()
        x[idx] = z
        return x

    def fun(z):
        tape = Tape()
        zv = tape.vars(z)
        x = list(full(np.zeros(len(z))))
        for k, i in enumerate(idx):
            x[i] = zv[k]
        loss = design_loss(DHParams.from_flat(x), q_traj, p_traj)
        return float(loss.val if hasattr(loss, "val") else loss), tape.gradient(loss, zv)

    res = minimize(fun, base[idx], opt)
    final = DHParams.from_flat(full(res.x))
    return DesignResult(final, res.losses, [full(z) for z in res.iterates], res)
