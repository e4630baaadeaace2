"""Spatial vector algebra, angular part first.

Vectors are 3-tuples and 3x3 matrices are row-major 9-tuples so that the
same code runs on floats, :class:`~diffsim.ad.Dual` and
:class:`~diffsim.ad.Var` scalars.

A :class:`SpatialTransform` is the pose of a *source* frame inside a
*target* frame: a point ``p`` given in source coordinates sits at
``R(rot) @ p + trans`` in target coordinates.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .ad import cos, sin, sqrt

ZERO3 = (0.0, 0.0, 0.0)
EYE3 = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)


# -- 3-vectors ---------------------------------------------------------------

def vadd(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def vsub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def vscale(s, a):
    return (s * a[0], s * a[1], s * a[2])


def vneg(a):
    return (-a[0], -a[1], -a[2])


def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def cross(a, b):
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


# -- 3x3 matrices (row-major 9-tuples) --------------------------------------

def mvec(M, v):
    return (M[0] * v[0] + M[1] * v[1] + M[2] * v[2],
            M[3] * v[0] + M[4] * v[1] + M[5] * v[2],
            M[6] * v[0] + M[7] * v[1] + M[8] * v[2])


def mTvec(M, v):
    return (M[0] * v[0] + M[3] * v[1] + M[6] * v[2],
            M[1] * v[0] + M[4] * v[1] + M[7] * v[2],
            M[2] * v[0] + M[5] * v[1] + M[8] * v[2])


def mmul(A, B):
    return (A[0] * B[0] + A[1] * B[3] + A[2] * B[6],
            A[0] * B[1] + A[1] * B[4] + A[2] * B[7],
            A[0] * B[2] + A[1] * B[5] + A[2] * B[8],
            A[3] * B[0] + A[4] * B[3] + A[5] * B[6],
            A[3] * B[1] + A[4] * B[4] + A[5] * B[7],
            A[3] * B[2] + A[4] * B[5] + A[5] * B[8],
            A[6] * B[0] + A[7] * B[3] + A[8] * B[6],
            A[6] * B[1] + A[7] * B[4] + A[8] * B[7],
            A[6] * B[2] + A[7] * B[5] + A[8] * B[8])


def mT(A):
    return (A[0], A[3], A[6], A[1], A[4], A[7], A[2], A[5], A[8])


def madd(A, B):
    return tuple(a + b for a, b in zip(A, B))


def msub(A, B):
    return tuple(a - b for a, b in zip(A, B))


def mscale(s, A):
    return tuple(s * a for a in A)


def outer(a, b):
    return (a[0] * b[0], a[0] * b[1], a[0] * b[2],
            a[1] * b[0], a[1] * b[1], a[1] * b[2],
            a[2] * b[0], a[2] * b[1], a[2] * b[2])


def skew(p):
    return (0.0, -p[2], p[1], p[2], 0.0, -p[0], -p[1], p[0], 0.0)


def skew_left(p, M):
    """skew(p) @ M: each column is p x column."""
    c0 = cross(p, (M[0], M[3], M[6]))
    c1 = cross(p, (M[1], M[4], M[7]))
    c2 = cross(p, (M[2], M[5], M[8]))
    return (c0[0], c1[0], c2[0], c0[1], c1[1], c2[1], c0[2], c1[2], c2[2])


def skew_right(M, p):
    """M @ skew(p): row i is (row_i x p)."""
    r0 = cross((M[0], M[1], M[2]), p)
    r1 = cross((M[3], M[4], M[5]), p)
    r2 = cross((M[6], M[7], M[8]), p)
    return r0 + r1 + r2


def rotate_sandwich(R, M):
    """R @ M @ R.T"""
    return mmul(mmul(R, M), mT(R))


# -- quaternions (w, x, y, z) ---------------------------------------------

QUAT_IDENTITY = (1.0, 0.0, 0.0, 0.0)


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw)


def quat_conj(q):
    return (q[0], -q[1], -q[2], -q[3])


def quat_normalize(q):
    n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return (q[0] / n, q[1] / n, q[2] / n, q[3] / n)


def quat_from_axis_angle(axis, angle):
    h = 0.5 * angle
    s = sin(h)
    return (cos(h), s * axis[0], s * axis[1], s * axis[2])


def quat_to_matrix(q):
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return (1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy),
            2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx),
            2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy))


def axis_angle_matrix(axis, angle):
    """Rodrigues rotation matrix; axis must be unit length."""
    c = cos(angle)
    s = sin(angle)
    t = 1.0 - c
    x, y, z = axis
    return (t * x * x + c, t * x * y - s * z, t * x * z + s * y,
            t * x * y + s * z, t * y * y + c, t * y * z - s * x,
            t * x * z - s * y, t * y * z + s * x, t * z * z + c)


def matrix_to_quat(R) -> tuple:
    """Float-only conversion (Shepperd's method)."""
    m = np.asarray([float(r) for r in R]).reshape(3, 3)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        v = [0.0, 0.0, 0.0]
        v[i] = 0.25 * s
        v[j] = (m[j, i] + m[i, j]) / s
        v[k] = (m[k, i] + m[i, k]) / s
        q = ((m[k, j] - m[j, k]) / s, v[0], v[1], v[2])
    q = np.asarray(q)
    if q[0] < 0:
        q = -q
    return tuple(float(c) for c in q / np.linalg.norm(q))


# -- spatial types ------------------------------------------------------------

class SpatialMotion(NamedTuple):
    angular: tuple
    linear: tuple

    def __add__(self, o):
        return SpatialMotion(vadd(self.angular, o.angular), vadd(self.linear, o.linear))

    def __sub__(self, o):
        return SpatialMotion(vsub(self.angular, o.angular), vsub(self.linear, o.linear))

    def scale(self, s):
        return SpatialMotion(vscale(s, self.angular), vscale(s, self.linear))

    def dot(self, f: SpatialForce):
        return dot(self.angular, f.moment) + dot(self.linear, f.force)

    def as_array(self):
        return np.array([float(c) for c in self.angular + self.linear])


class SpatialForce(NamedTuple):
    moment: tuple
    force: tuple

    def __add__(self, o):
        return SpatialForce(vadd(self.moment, o.moment), vadd(self.force, o.force))

    def __sub__(self, o):
        return SpatialForce(vsub(self.moment, o.moment), vsub(self.force, o.force))

    def scale(self, s):
        return SpatialForce(vscale(s, self.moment), vscale(s, self.force))

    def as_array(self):
        return np.array([float(c) for c in self.moment + self.force])


MOTION_ZERO = SpatialMotion(ZERO3, ZERO3)
FORCE_ZERO = SpatialForce(ZERO3, ZERO3)


class SpatialTransform:
    """Rigid transform with a unit-quaternion rotation.

    The rotation matrix is derived once on first use.  Construct with
    ``matrix=`` to skip the quaternion-to-matrix conversion in hot loops.
    """

    __slots__ = ("rot", "trans", "_E")

    def __init__(self, rot=QUAT_IDENTITY, trans=ZERO3, matrix=None):
        self.rot = rot
        self.trans = trans
        self._E = matrix

    @property
    def E(self):
        if self._E is None:
            self._E = quat_to_matrix(self.rot)
        return self._E

    def __repr__(self):
        return f"SpatialTransform(rot={self.rot}, trans={self.trans})"

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def rotation(cls, axis, angle):
        return cls(quat_from_axis_angle(axis, angle), ZERO3)

    @classmethod
    def translation(cls, r):
        return cls(QUAT_IDENTITY, r)

    def inverse(self):
        qi = quat_conj(self.rot)
        Et = mT(self.E)
        return SpatialTransform(qi, vneg(mvec(Et, self.trans)), Et)

    def apply_point(self, p):
        return vadd(mvec(self.E, p), self.trans)

    def __matmul__(self, other):
        return transform_compose(self, other)


def transform_compose(a: SpatialTransform, b: SpatialTransform) -> SpatialTransform:
    """Pose of b's source frame in a's target frame (applies b, then a)."""
    rot = quat_normalize(quat_mul(a.rot, b.rot))
    trans = vadd(mvec(a.E, b.trans), a.trans)
    return SpatialTransform(rot, trans)


def transform_motion(X: SpatialTransform, v: SpatialMotion) -> SpatialMotion:
    """Re-express a motion vector from X's source frame in its target frame."""
    w = mvec(X.E, v.angular)
    lin = vadd(mvec(X.E, v.linear), cross(X.trans, w))
    return SpatialMotion(w, lin)


def transform_force(X: SpatialTransform, f: SpatialForce) -> SpatialForce:
    """Force counterpart of :func:`transform_motion`."""
    fo = mvec(X.E, f.force)
    n = vadd(mvec(X.E, f.moment), cross(X.trans, fo))
    return SpatialForce(n, fo)


def inverse_transform_motion(X: SpatialTransform, v: SpatialMotion) -> SpatialMotion:
    """Motion from X's target frame into its source frame."""
    lin = vadd(v.linear, cross(v.angular, X.trans))
    return SpatialMotion(mTvec(X.E, v.angular), mTvec(X.E, lin))


def inverse_transform_force(X: SpatialTransform, f: SpatialForce) -> SpatialForce:
    n = vsub(f.moment, cross(X.trans, f.force))
    return SpatialForce(mTvec(X.E, n), mTvec(X.E, f.force))


def cross_motion(v: SpatialMotion, m: SpatialMotion) -> SpatialMotion:
    w = v.angular
    return SpatialMotion(cross(w, m.angular),
                         vadd(cross(w, m.linear), cross(v.linear, m.angular)))


def cross_force(v: SpatialMotion, f: SpatialForce) -> SpatialForce:
    w = v.angular
    return SpatialForce(vadd(cross(w, f.moment), cross(v.linear, f.force)),
                        cross(w, f.force))


class SpatialInertia(NamedTuple):
    """Rigid-body inertia; ``rot_inertia`` is about the body-frame origin."""

    mass: object
    com: tuple
    rot_inertia: tuple

    @classmethod
    def from_com(cls, mass, com, inertia_com):
        """Build from the rotational inertia about the centre of mass."""
        c = tuple(com)
        shift = msub(mscale(dot(c, c), EYE3), outer(c, c))
        return cls(mass, c, madd(tuple(inertia_com), mscale(mass, shift)))

    def inertia_about_com(self):
        c = self.com
        shift = msub(mscale(dot(c, c), EYE3), outer(c, c))
        return msub(self.rot_inertia, mscale(self.mass, shift))

    def as_matrix(self) -> np.ndarray:
        m = float(self.mass)
        h = np.array([float(c) for c in self.com]) * m
        out = np.zeros((6, 6))
        out[:3, :3] = np.array([float(c) for c in self.rot_inertia]).reshape(3, 3)
        out[:3, 3:] = np.array(skew(h), dtype=float).reshape(3, 3)
        out[3:, :3] = out[:3, 3:].T
        out[3:, 3:] = m * np.eye(3)
        return out


def inertia_apply(I: SpatialInertia, v: SpatialMotion) -> SpatialForce:
    """Momentum of a body with inertia I moving with spatial velocity v."""
    h = vscale(I.mass, I.com)
    n = vadd(mvec(I.rot_inertia, v.angular), cross(h, v.linear))
    f = vsub(vscale(I.mass, v.linear), cross(h, v.angular))
    return SpatialForce(n, f)


class ArticulatedInertia(NamedTuple):
    """Symmetric 6x6 operator in 3x3 blocks ``[[A, B], [B.T, C]]``."""

    A: tuple
    B: tuple
    C: tuple

    @classmethod
    def from_rigid(cls, I: SpatialInertia):
        h = vscale(I.mass, I.com)
        m = I.mass
        return cls(I.rot_inertia, skew(h), (m, 0.0, 0.0, 0.0, m, 0.0, 0.0, 0.0, m))

    def apply(self, v: SpatialMotion) -> SpatialForce:
        n = vadd(mvec(self.A, v.angular), mvec(self.B, v.linear))
        f = vadd(mTvec(self.B, v.angular), mvec(self.C, v.linear))
        return SpatialForce(n, f)

    def __add__(self, o):
        return ArticulatedInertia(madd(self.A, o.A), madd(self.B, o.B), madd(self.C, o.C))

    def minus_outer(self, U: SpatialForce, s):
        """self - s * U U^T"""
        n, f = U.moment, U.force
        return ArticulatedInertia(msub(self.A, mscale(s, outer(n, n))),
                                  msub(self.B, mscale(s, outer(n, f))),
                                  msub(self.C, mscale(s, outer(f, f))))

    def to_target(self, X: SpatialTransform):
        """Re-express an inertia given in X's source frame in its target frame."""
        R = X.E
        p = X.trans
        A = rotate_sandwich(R, self.A)
        B = rotate_sandwich(R, self.B)
        C = rotate_sandwich(R, self.C)
        BP = skew_right(B, p)
        PC = skew_left(p, C)
        # A - B px + px B^T - px C px, and px B^T == -(B px)^T
        A2 = msub(msub(msub(A, BP), mT(BP)), skew_right(PC, p))
        return ArticulatedInertia(A2, madd(B, PC), C)

    def as_matrix(self) -> np.ndarray:
        out = np.zeros((6, 6))
        out[:3, :3] = np.array([float(c) for c in self.A]).reshape(3, 3)
        out[:3, 3:] = np.array([float(c) for c in self.B]).reshape(3, 3)
        out[3:, :3] = out[:3, 3:].T
        out[3:, 3:] = np.array([float(c) for c in self.C]).reshape(3, 3)
        return out


def motion_matrix(X: SpatialTransform) -> np.ndarray:
    """Dense 6x6 motion transform (source -> target), floats only."""
    E = np.array([float(c) for c in X.E]).reshape(3, 3)
    P = np.array(skew([float(c) for c in X.trans]), dtype=float).reshape(3, 3)
    out = np.zeros((6, 6))
    out[:3, :3] = E
    out[3:, 3:] = E
    out[3:, :3] = P @ E
    return out


def force_matrix(X: SpatialTransform) -> np.ndarray:
    E = np.array([float(c) for c in X.E]).reshape(3, 3)
    P = np.array(skew([float(c) for c in X.trans]), dtype=float).reshape(3, 3)
    out = np.zeros((6, 6))
    out[:3, :3] = E
    out[3:, 3:] = E
    out[:3, 3:] = P @ E
    return out
