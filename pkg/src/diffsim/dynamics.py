"""Rigid-body dynamics written once for every scalar type of the tower.

State vectors are ordered ``x = [q, qd]``.  Joint coordinates are zero in
the configuration stored in the model file.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .ad import Dual, Var, value
from .model import Model, ParameterBinding, apply_parameters
from .spatial import (
    MOTION_ZERO,
    ZERO3,
    ArticulatedInertia,
    SpatialMotion,
    SpatialTransform,
    axis_angle_matrix,
    cross_force,
    cross_motion,
    dot,
    inertia_apply,
    inverse_transform_motion,
    mmul,
    mvec,
    quat_from_axis_angle,
    transform_compose,
    transform_force,
    vadd,
    vscale,
)


class DynamicsError(ArithmeticError):
    """Non-physical model (e.g. singular articulated inertia)."""


class State(NamedTuple):
    q: Sequence
    qd: Sequence


class FramePose(NamedTuple):
    position: tuple
    orientation: tuple


def _check(m: Model, *vecs):
    for v in vecs:
        if len(v) != m.dof:
            raise ValueError(f"expected {m.dof} joint values, got {len(v)}")


def joint_transform(joint, qi) -> SpatialTransform:
    """Pose of the child body in the joint frame."""
    if joint.kind == "revolute":
        return SpatialTransform(quat_from_axis_angle(joint.axis, qi), ZERO3,
                                axis_angle_matrix(joint.axis, qi))
    if joint.kind == "prismatic":
        return SpatialTransform(trans=vscale(qi, joint.axis))
    return SpatialTransform()


def _link_pose(joint, qi):
    """Pose of the child body in its parent body, as a matrix-only transform."""
    Rt = joint.parent_to_joint.E
    pt = joint.offset
    if joint.kind == "revolute":
        return SpatialTransform(None, pt, mmul(Rt, axis_angle_matrix(joint.axis, qi)))
    if joint.kind == "prismatic":
        return SpatialTransform(None, vadd(pt, mvec(Rt, vscale(qi, joint.axis))), Rt)
    return SpatialTransform(None, pt, Rt)


def motion_subspace(joint) -> SpatialMotion:
    if joint.kind == "revolute":
        return SpatialMotion(tuple(joint.axis), ZERO3)
    if joint.kind == "prismatic":
        return SpatialMotion(ZERO3, tuple(joint.axis))
    return MOTION_ZERO


def forward_kinematics(m: Model, q) -> list[FramePose]:
    """World pose of every body frame; the last entry is the end effector."""
    _check(m, q)
    poses: list[SpatialTransform] = []
    for i, j in enumerate(m.joints):
        k = m.qidx[i]
        local = transform_compose(j.parent_to_joint, joint_transform(j, q[k] if k >= 0 else 0.0))
        poses.append(local if j.parent < 0 else transform_compose(poses[j.parent], local))
    return [FramePose(p.trans, p.rot) for p in poses]


def _base_acc(m: Model, gravity):
    g = m.gravity if gravity is None else gravity
    return SpatialMotion(ZERO3, (-g[0], -g[1], -g[2]))


class _Counter:
    """Body-recursion steps taken by the generic algorithms."""

    calls = 0
    body_steps = 0


counter = _Counter()


def aba(m: Model, q, qd, tau, gravity=None) -> list:
    """Articulated-body forward dynamics, O(n) in the number of bodies."""
    _check(m, q, qd, tau)
    n = len(m.bodies)
    joints, qidx = m.joints, m.qidx
    X = [None] * n
    S = [None] * n
    v = [None] * n
    c = [None] * n
    IA = [None] * n
    pA = [None] * n
    counter.calls += 1
    counter.body_steps += 3 * n
    for i in range(n):
        j = joints[i]
        k = qidx[i]
        X[i] = Xi = _link_pose(j, q[k] if k >= 0 else 0.0)
        vp = v[j.parent] if j.parent >= 0 else MOTION_ZERO
        vi = inverse_transform_motion(Xi, vp)
        if k >= 0:
            S[i] = Si = motion_subspace(j)
            vJ = Si.scale(qd[k])
            vi = vi + vJ
            c[i] = cross_motion(vi, vJ)
        else:
            c[i] = MOTION_ZERO
        v[i] = vi
        I = m.bodies[i].inertia
        IA[i] = ArticulatedInertia.from_rigid(I)
        pA[i] = cross_force(vi, inertia_apply(I, vi))

    U = [None] * n
    D = [None] * n
    u = [None] * n
    for i in range(n - 1, -1, -1):
        j = joints[i]
        k = qidx[i]
        if k >= 0:
            Ui = IA[i].apply(S[i])
            Di = S[i].dot(Ui)
            if not abs(value(Di)) > 1e-300:
                raise DynamicsError(f"singular articulated inertia at body {i}")
            ui = tau[k] - S[i].dot(pA[i])
            U[i], D[i], u[i] = Ui, Di, ui
            if j.parent >= 0:
                inv = 1.0 / Di
                Ia = IA[i].minus_outer(Ui, inv)
                pa = pA[i] + Ia.apply(c[i]) + Ui.scale(ui * inv)
        else:
            Ia = IA[i]
            pa = pA[i]
        if j.parent >= 0:
            p = j.parent
            IA[p] = IA[p] + Ia.to_target(X[i])
            pA[p] = pA[p] + transform_force(X[i], pa)

    a = [None] * n
    qdd = [0.0] * m.dof
    a0 = _base_acc(m, gravity)
    for i in range(n):
        j = joints[i]
        k = qidx[i]
        ap = a[j.parent] if j.parent >= 0 else a0
        ai = inverse_transform_motion(X[i], ap) + c[i]
        if k >= 0:
            qk = (u[i] - ai.dot(U[i])) / D[i]
            qdd[k] = qk
            ai = ai + S[i].scale(qk)
        a[i] = ai
    return qdd


def rnea(m: Model, q, qd, qdd, gravity=None) -> list:
    """Inverse dynamics: tau = H(q) qdd + C(q, qd) + G(q)."""
    _check(m, q, qd, qdd)
    n = len(m.bodies)
    X = [None] * n
    f = [None] * n
    v = [None] * n
    a = [None] * n
    a0 = _base_acc(m, gravity)
    for i, j in enumerate(m.joints):
        k = m.qidx[i]
        X[i] = Xi = _link_pose(j, q[k] if k >= 0 else 0.0)
        vp = v[j.parent] if j.parent >= 0 else MOTION_ZERO
        ap = a[j.parent] if j.parent >= 0 else a0
        vi = inverse_transform_motion(Xi, vp)
        ai = inverse_transform_motion(Xi, ap)
        if k >= 0:
            Si = motion_subspace(j)
            vJ = Si.scale(qd[k])
            vi = vi + vJ
            ai = ai + Si.scale(qdd[k]) + cross_motion(vi, vJ)
        v[i], a[i] = vi, ai
        I = m.bodies[i].inertia
        f[i] = inertia_apply(I, ai) + cross_force(vi, inertia_apply(I, vi))
    tau = [0.0] * m.dof
    for i in range(n - 1, -1, -1):
        j = m.joints[i]
        k = m.qidx[i]
        if k >= 0:
            tau[k] = motion_subspace(j).dot(f[i])
        if j.parent >= 0:
            f[j.parent] = f[j.parent] + transform_force(X[i], f[i])
    return tau


def bias_forces(m: Model, q, qd) -> list:
    """C(q, qd) + G(q)."""
    return rnea(m, q, qd, [0.0] * m.dof)


def gravity_forces(m: Model, q) -> list:
    return rnea(m, q, [0.0] * m.dof, [0.0] * m.dof)


def mass_matrix(m: Model, q) -> np.ndarray:
    """H(q) column by column from unit accelerations with velocity and gravity removed."""
    n = m.dof
    zero = [0.0] * n
    H = np.empty((n, n), dtype=object)
    for c in range(n):
        e = [0.0] * n
        e[c] = 1.0
        H[:, c] = rnea(m, q, zero, e, gravity=ZERO3)
    if all(type(h) is not Dual and type(h) is not Var for h in H.ravel()):
        return H.astype(float)
    return H


def body_velocities(m: Model, q, qd) -> list[SpatialMotion]:
    n = len(m.bodies)
    v = [None] * n
    for i, j in enumerate(m.joints):
        k = m.qidx[i]
        Xi = _link_pose(j, q[k] if k >= 0 else 0.0)
        vp = v[j.parent] if j.parent >= 0 else MOTION_ZERO
        vi = inverse_transform_motion(Xi, vp)
        if k >= 0:
            vi = vi + motion_subspace(j).scale(qd[k])
        v[i] = vi
    return v


def total_energy(m: Model, q, qd):
    """Kinetic plus gravitational potential energy (datum at the world origin)."""
    _check(m, q, qd)
    kinetic = 0.0
    for vi, b in zip(body_velocities(m, q, qd), m.bodies):
        kinetic = kinetic + 0.5 * vi.dot(inertia_apply(b.inertia, vi))
    potential = 0.0
    for pose, b in zip(forward_kinematics(m, q), m.bodies):
        com_w = vadd(pose.position, SpatialTransform(pose.orientation).apply_point(b.com))
        potential = potential - b.mass * dot(m.gravity, com_w)
    return kinetic + potential


def generalized_forces(dof: int, u_map: Sequence[int], u) -> list:
    tau = [0.0] * dof
    for slot, ui in zip(u_map, u):
        tau[slot] = tau[slot] + ui
    return tau


def ode_rhs(m: Model, binding: ParameterBinding | None, theta, u_map, t, x, u=()):
    """xdot = [qd, aba(q, qd, tau)] with controls scattered into ``u_map`` slots.

    ``u`` may be a sequence or a callable of time.
    """
    if binding is not None and binding.entries:
        m = apply_parameters(m, binding, theta)
    n = m.dof
    q, qd = list(x[:n]), list(x[n:])
    uu = u(t) if callable(u) else u
    qdd = aba(m, q, qd, generalized_forces(n, u_map, uu))
    out = qd + qdd
    if all(type(o) is not Dual and type(o) is not Var for o in out):
        return np.array(out, dtype=float)
    return np.array(out, dtype=object)
