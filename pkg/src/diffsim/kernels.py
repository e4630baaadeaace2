"""Float64 articulated-body kernels with forward-mode tangents.

:func:`aba_tangent` evaluates joint accelerations together with their
directional derivatives along ``K`` tangent directions in one pass (a dual
number sweep carrying ``K`` derivative slots).  Directions can seed the
joint positions, velocities, generalized forces and the model parameters
(joint offsets and body inertias).

Two implementations share that contract: an explicit-loop kernel compiled
with numba, and a batched numpy version used when numba is disabled with
``DIFFSIM_DISABLE_NUMBA=1``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ._jit import HAVE_NUMBA, njit
from .ad import Dual, value
from .model import Model, ParameterBinding, apply_parameters

JTYPE = {"revolute": 0, "prismatic": 1, "fixed": 2}


class Packed(NamedTuple):
    """Array form of a float model."""

    parent: np.ndarray  # (n,) int64
    jtype: np.ndarray  # (n,) int64
    qidx: np.ndarray  # (n,) int64
    axis: np.ndarray  # (n, 3)
    Rt: np.ndarray  # (n, 3, 3) joint-frame rotation in the parent frame
    pt: np.ndarray  # (n, 3) joint-frame origin in the parent frame
    I6: np.ndarray  # (n, 6, 6) spatial inertia about the body origin
    grav: np.ndarray  # (3,)
    nq: int


def _inertia6(I) -> np.ndarray:
    m = I.mass
    h = [m * c for c in I.com]
    out = np.zeros((6, 6))
    out[:3, :3] = np.reshape([value(c) for c in I.rot_inertia], (3, 3))
    hx = np.array([[0.0, -value(h[2]), value(h[1])],
                   [value(h[2]), 0.0, -value(h[0])],
                   [-value(h[1]), value(h[0]), 0.0]])
    out[:3, 3:] = hx
    out[3:, :3] = hx.T
    out[3:, 3:] = value(m) * np.eye(3)
    return out


def _inertia6_tangent(I) -> np.ndarray:
    def d(x):
        return x.der if type(x) is Dual else 0.0

    m = I.mass
    h = [m * c for c in I.com]
    out = np.zeros((6, 6))
    out[:3, :3] = np.reshape([d(c) for c in I.rot_inertia], (3, 3))
    hx = np.array([[0.0, -d(h[2]), d(h[1])],
                   [d(h[2]), 0.0, -d(h[0])],
                   [-d(h[1]), d(h[0]), 0.0]])
    out[:3, 3:] = hx
    out[3:, :3] = hx.T
    out[3:, 3:] = d(m) * np.eye(3)
    return out


def pack(m: Model) -> Packed:
    n = len(m.bodies)
    parent = np.array([j.parent for j in m.joints], dtype=np.int64)
    jtype = np.array([JTYPE[j.kind] for j in m.joints], dtype=np.int64)
    qidx = np.array(m.qidx, dtype=np.int64)
    axis = np.array([[value(c) for c in j.axis] for j in m.joints], dtype=float).reshape(n, 3)
    Rt = np.array([[value(c) for c in j.parent_to_joint.E] for j in m.joints], dtype=float).reshape(n, 3, 3)
    pt = np.array([[value(c) for c in j.offset] for j in m.joints], dtype=float).reshape(n, 3)
    I6 = np.array([_inertia6(b.inertia) for b in m.bodies]).reshape(n, 6, 6)
    grav = np.array([value(g) for g in m.gravity], dtype=float)
    return Packed(parent, jtype, qidx, axis, Rt, pt, I6, grav, m.dof)


def model_tangents(m: Model, binding: ParameterBinding, theta) -> tuple[np.ndarray, np.ndarray]:
    """d(pt)/d(theta) and d(I6)/d(theta), one dual sweep per parameter."""
    n = len(m.bodies)
    k = binding.arity
    dpt = np.zeros((k, n, 3))
    dI6 = np.zeros((k, n, 6, 6))
    theta = [float(t) for t in theta]
    touched_b = [set() for _ in range(k)]
    touched_j = [set() for _ in range(k)]
    for sel, idx, *_ in binding.entries:
        (touched_j if sel.kind == "length" else touched_b)[idx].add(sel.target)
    for p in range(k):
        seeded = [Dual(t, 1.0 if i == p else 0.0) for i, t in enumerate(theta)]
        md = apply_parameters(m, binding, seeded)
        for j in touched_j[p]:
            dpt[p, j] = [c.der if type(c) is Dual else 0.0 for c in md.joints[j].offset]
        for b in touched_b[p]:
            dI6[p, b] = _inertia6_tangent(md.bodies[b].inertia)
    return dpt, dI6


# -- explicit-loop kernel (numba) -------------------------------------------

@njit(cache=True)
def _mm(A, B, out):
    for r in range(6):
        for s in range(6):
            acc = 0.0
            for t in range(6):
                acc += A[r, t] * B[t, s]
            out[r, s] = acc


@njit(cache=True)
def _mtm_acc(A, B, out):
    """out += A.T @ B"""
    for r in range(6):
        for s in range(6):
            acc = 0.0
            for t in range(6):
                acc += A[t, r] * B[t, s]
            out[r, s] += acc


@njit(cache=True)
def _mv(A, x, out):
    for r in range(6):
        acc = 0.0
        for t in range(6):
            acc += A[r, t] * x[t]
        out[r] = acc


@njit(cache=True)
def _mtv_acc(A, x, out):
    for r in range(6):
        acc = 0.0
        for t in range(6):
            acc += A[t, r] * x[t]
        out[r] += acc


@njit(cache=True)
def _crm(v, w, out):
    """out = v x w (motion cross product)"""
    out[0] = v[1] * w[2] - v[2] * w[1]
    out[1] = v[2] * w[0] - v[0] * w[2]
    out[2] = v[0] * w[1] - v[1] * w[0]
    out[3] = v[1] * w[5] - v[2] * w[4] + v[4] * w[2] - v[5] * w[1]
    out[4] = v[2] * w[3] - v[0] * w[5] + v[5] * w[0] - v[3] * w[2]
    out[5] = v[0] * w[4] - v[1] * w[3] + v[3] * w[1] - v[4] * w[0]


@njit(cache=True)
def _crf(v, f, out):
    """out = v x* f (force cross product)"""
    out[0] = v[1] * f[2] - v[2] * f[1] + v[4] * f[5] - v[5] * f[4]
    out[1] = v[2] * f[0] - v[0] * f[2] + v[5] * f[3] - v[3] * f[5]
    out[2] = v[0] * f[1] - v[1] * f[0] + v[3] * f[4] - v[4] * f[3]
    out[3] = v[1] * f[5] - v[2] * f[4]
    out[4] = v[2] * f[3] - v[0] * f[5]
    out[5] = v[0] * f[4] - v[1] * f[3]


@njit(cache=True)
def _tree_and_joint(Rt, pt, axis, jt, qk):
    """Xtree, XJ and dXJ/dq as dense 6x6 motion transforms."""
    Xt = np.zeros((6, 6))
    XJ = np.zeros((6, 6))
    dXJ = np.zeros((6, 6))
    for r in range(3):
        for s in range(3):
            Xt[r, s] = Rt[s, r]
            Xt[r + 3, s + 3] = Rt[s, r]
    # lower-left block: -E skew(p), E = Rt^T
    px, py, pz = pt[0], pt[1], pt[2]
    for r in range(3):
        e0, e1, e2 = Rt[0, r], Rt[1, r], Rt[2, r]
        Xt[r + 3, 0] = -(e1 * pz - e2 * py)
        Xt[r + 3, 1] = -(e2 * px - e0 * pz)
        Xt[r + 3, 2] = -(e0 * py - e1 * px)
    ax, ay, az = axis[0], axis[1], axis[2]
    if jt == 0:
        c = np.cos(qk)
        s = np.sin(qk)
        t = 1.0 - c
        # E_J = R_J^T with R_J the Rodrigues matrix
        R = np.empty((3, 3))
        R[0, 0] = t * ax * ax + c
        R[0, 1] = t * ax * ay - s * az
        R[0, 2] = t * ax * az + s * ay
        R[1, 0] = t * ax * ay + s * az
        R[1, 1] = t * ay * ay + c
        R[1, 2] = t * ay * az - s * ax
        R[2, 0] = t * ax * az - s * ay
        R[2, 1] = t * ay * az + s * ax
        R[2, 2] = t * az * az + c
        A = np.array([[0.0, -az, ay], [az, 0.0, -ax], [-ay, ax, 0.0]])
        for r in range(3):
            for s2 in range(3):
                XJ[r, s2] = R[s2, r]
                XJ[r + 3, s2 + 3] = R[s2, r]
                acc = 0.0
                for u in range(3):
                    acc += R[u, r] * A[u, s2]
                dXJ[r, s2] = -acc
                dXJ[r + 3, s2 + 3] = -acc
    elif jt == 1:
        for r in range(6):
            XJ[r, r] = 1.0
        XJ[3, 1] = az * qk
        XJ[3, 2] = -ay * qk
        XJ[4, 0] = -az * qk
        XJ[4, 2] = ax * qk
        XJ[5, 0] = ay * qk
        XJ[5, 1] = -ax * qk
        dXJ[3, 1] = az
        dXJ[3, 2] = -ay
        dXJ[4, 0] = -az
        dXJ[4, 2] = ax
        dXJ[5, 0] = ay
        dXJ[5, 1] = -ax
    else:
        for r in range(6):
            XJ[r, r] = 1.0
    return Xt, XJ, dXJ


@njit(cache=True)
def aba_tangent_loops(parent, jtype, qidx, axis, Rt, pt, I6, grav,
                      q, qd, tau, dq, dqd, dtau, dpt, dI6, k0):
    n = parent.shape[0]
    K = dq.shape[0]
    Km = dpt.shape[0]
    nq = q.shape[0]
    Xup = np.zeros((n, 6, 6))
    dX = np.zeros((n, K, 6, 6))
    hasdX = np.zeros((n, K), dtype=np.bool_)
    S = np.zeros((n, 6))
    v = np.zeros((n, 6))
    dv = np.zeros((n, K, 6))
    c = np.zeros((n, 6))
    dc = np.zeros((n, K, 6))
    IA = np.zeros((n, 6, 6))
    dIA = np.zeros((n, K, 6, 6))
    pA = np.zeros((n, 6))
    dpA = np.zeros((n, K, 6))
    tmp = np.zeros(6)
    tmp2 = np.zeros(6)
    vJ = np.zeros(6)
    dvJ = np.zeros(6)
    Iv = np.zeros(6)
    M6 = np.zeros((6, 6))
    dXt = np.zeros((6, 6))

    for i in range(n):
        jt = jtype[i]
        k = qidx[i]
        qk = q[k] if jt != 2 else 0.0
        Xt, XJ, dXJ = _tree_and_joint(Rt[i], pt[i], axis[i], jt, qk)
        _mm(XJ, Xt, Xup[i])
        if jt != 2:
            _mm(dXJ, Xt, M6)
        for kk in range(K):
            if jt != 2 and dq[kk, k] != 0.0:
                s = dq[kk, k]
                for r in range(6):
                    for t in range(6):
                        dX[i, kk, r, t] += s * M6[r, t]
                hasdX[i, kk] = True
            mdir = kk - k0
            if 0 <= mdir < Km:
                d0, d1, d2 = dpt[mdir, i, 0], dpt[mdir, i, 1], dpt[mdir, i, 2]
                if d0 != 0.0 or d1 != 0.0 or d2 != 0.0:
                    dXt[:, :] = 0.0
                    for r in range(3):
                        e0, e1, e2 = Rt[i, 0, r], Rt[i, 1, r], Rt[i, 2, r]
                        dXt[r + 3, 0] = -(e1 * d2 - e2 * d1)
                        dXt[r + 3, 1] = -(e2 * d0 - e0 * d2)
                        dXt[r + 3, 2] = -(e0 * d1 - e1 * d0)
                    _mm(XJ, dXt, M6)
                    for r in range(6):
                        for t in range(6):
                            dX[i, kk, r, t] += M6[r, t]
                    hasdX[i, kk] = True
                    if jt != 2:
                        _mm(dXJ, Xt, M6)

        p = parent[i]
        if p >= 0:
            _mv(Xup[i], v[p], v[i])
            for kk in range(K):
                _mv(Xup[i], dv[p, kk], dv[i, kk])
                if hasdX[i, kk]:
                    _mv(dX[i, kk], v[p], tmp)
                    for r in range(6):
                        dv[i, kk, r] += tmp[r]
        if jt == 0:
            for r in range(3):
                S[i, r] = axis[i, r]
        elif jt == 1:
            for r in range(3):
                S[i, r + 3] = axis[i, r]
        if jt != 2:
            for r in range(6):
                vJ[r] = S[i, r] * qd[k]
                v[i, r] += vJ[r]
            _crm(v[i], vJ, c[i])
            for kk in range(K):
                for r in range(6):
                    dvJ[r] = S[i, r] * dqd[kk, k]
                    dv[i, kk, r] += dvJ[r]
                _crm(dv[i, kk], vJ, tmp)
                _crm(v[i], dvJ, tmp2)
                for r in range(6):
                    dc[i, kk, r] = tmp[r] + tmp2[r]

        IA[i] = I6[i]
        _mv(I6[i], v[i], Iv)
        _crf(v[i], Iv, pA[i])
        for kk in range(K):
            mdir = kk - k0
            # d(pA) = dv x* Iv + v x* (dI v + I dv)
            _crf(dv[i, kk], Iv, dpA[i, kk])
            _mv(I6[i], dv[i, kk], tmp)
            if 0 <= mdir < Km:
                dIA[i, kk] = dI6[mdir, i]
                _mv(dI6[mdir, i], v[i], tmp2)
                for r in range(6):
                    tmp[r] += tmp2[r]
            _crf(v[i], tmp, tmp2)
            for r in range(6):
                dpA[i, kk, r] += tmp2[r]

    U = np.zeros((n, 6))
    dU = np.zeros((n, K, 6))
    D = np.zeros(n)
    dD = np.zeros((n, K))
    u = np.zeros(n)
    du = np.zeros((n, K))
    Ia = np.zeros((6, 6))
    dIa = np.zeros((6, 6))
    pa = np.zeros(6)
    dpa = np.zeros(6)
    T = np.zeros((6, 6))
    T1 = np.zeros((6, 6))
    for i in range(n - 1, -1, -1):
        jt = jtype[i]
        k = qidx[i]
        p = parent[i]
        if jt != 2:
            _mv(IA[i], S[i], U[i])
            Di = 0.0
            si = 0.0
            for r in range(6):
                Di += S[i, r] * U[i, r]
                si += S[i, r] * pA[i, r]
            if not abs(Di) > 1e-300:
                raise ArithmeticError("singular articulated inertia")
            D[i] = Di
            u[i] = tau[k] - si
            for kk in range(K):
                _mv(dIA[i, kk], S[i], dU[i, kk])
                a1 = 0.0
                a2 = 0.0
                for r in range(6):
                    a1 += S[i, r] * dU[i, kk, r]
                    a2 += S[i, r] * dpA[i, kk, r]
                dD[i, kk] = a1
                du[i, kk] = dtau[kk, k] - a2
        if p < 0:
            continue
        if jt != 2:
            invD = 1.0 / D[i]
            for r in range(6):
                for t in range(6):
                    Ia[r, t] = IA[i, r, t] - U[i, r] * U[i, t] * invD
            _mv(Ia, c[i], pa)
            for r in range(6):
                pa[r] += pA[i, r] + U[i, r] * u[i] * invD
        else:
            invD = 0.0
            Ia[:, :] = IA[i]
            pa[:] = pA[i]
        _mm(Ia, Xup[i], T)
        _mtm_acc(Xup[i], T, IA[p])
        _mtv_acc(Xup[i], pa, pA[p])
        for kk in range(K):
            if jt != 2:
                f = dD[i, kk] * invD * invD
                for r in range(6):
                    for t in range(6):
                        dIa[r, t] = (dIA[i, kk, r, t]
                                     - (dU[i, kk, r] * U[i, t] + U[i, r] * dU[i, kk, t]) * invD
                                     + U[i, r] * U[i, t] * f)
                _mv(dIa, c[i], dpa)
                _mv(Ia, dc[i, kk], tmp)
                for r in range(6):
                    dpa[r] += (dpA[i, kk, r] + tmp[r] + dU[i, kk, r] * u[i] * invD
                               + U[i, r] * du[i, kk] * invD - U[i, r] * u[i] * f)
            else:
                dIa[:, :] = dIA[i, kk]
                dpa[:] = dpA[i, kk]
            # d(X^T Ia X) = dX^T T + X^T (dIa X + Ia dX)
            _mm(dIa, Xup[i], T1)
            if hasdX[i, kk]:
                _mm(Ia, dX[i, kk], M6)
                for r in range(6):
                    for t in range(6):
                        T1[r, t] += M6[r, t]
                _mtm_acc(dX[i, kk], T, dIA[p, kk])
                _mtv_acc(dX[i, kk], pa, dpA[p, kk])
            _mtm_acc(Xup[i], T1, dIA[p, kk])
            _mtv_acc(Xup[i], dpa, dpA[p, kk])

    a = np.zeros((n, 6))
    da = np.zeros((n, K, 6))
    qdd = np.zeros(nq)
    dqdd = np.zeros((K, nq))
    a0 = np.zeros(6)
    a0[3] = -grav[0]
    a0[4] = -grav[1]
    a0[5] = -grav[2]
    for i in range(n):
        jt = jtype[i]
        k = qidx[i]
        p = parent[i]
        if p >= 0:
            _mv(Xup[i], a[p], a[i])
        else:
            _mv(Xup[i], a0, a[i])
        for r in range(6):
            a[i, r] += c[i, r]
        for kk in range(K):
            if p >= 0:
                _mv(Xup[i], da[p, kk], da[i, kk])
                if hasdX[i, kk]:
                    _mv(dX[i, kk], a[p], tmp)
                    for r in range(6):
                        da[i, kk, r] += tmp[r]
            elif hasdX[i, kk]:
                _mv(dX[i, kk], a0, da[i, kk])
            for r in range(6):
                da[i, kk, r] += dc[i, kk, r]
        if jt != 2:
            ua = 0.0
            for r in range(6):
                ua += U[i, r] * a[i, r]
            qk = (u[i] - ua) / D[i]
            qdd[k] = qk
            for kk in range(K):
                s1 = 0.0
                for r in range(6):
                    s1 += dU[i, kk, r] * a[i, r] + U[i, r] * da[i, kk, r]
                dqk = (du[i, kk] - s1 - qk * dD[i, kk]) / D[i]
                dqdd[kk, k] = dqk
                for r in range(6):
                    da[i, kk, r] += S[i, r] * dqk
            for r in range(6):
                a[i, r] += S[i, r] * qk
    return qdd, dqdd


# -- batched numpy kernel ----------------------------------------------------

def _skew_np(w):
    """(..., 3) -> (..., 3, 3)"""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def _crm_np(v):
    """(..., 6) -> (..., 6, 6) motion cross-product matrix."""
    out = np.zeros(v.shape[:-1] + (6, 6))
    W = _skew_np(v[..., :3])
    out[..., :3, :3] = W
    out[..., 3:, 3:] = W
    out[..., 3:, :3] = _skew_np(v[..., 3:])
    return out


def _crf_np(v):
    return -np.swapaxes(_crm_np(v), -1, -2)


def aba_tangent_numpy(parent, jtype, qidx, axis, Rt, pt, I6, grav,
                      q, qd, tau, dq, dqd, dtau, dpt, dI6, k0):
    n = parent.shape[0]
    K = dq.shape[0]
    Km = dpt.shape[0]
    nq = q.shape[0]
    msl = slice(k0, k0 + Km)
    Xup = [None] * n
    dX = [None] * n
    S = np.zeros((n, 6))
    v = np.zeros((n, 6))
    dv = np.zeros((n, K, 6))
    c = np.zeros((n, 6))
    dc = np.zeros((n, K, 6))
    IA = I6.copy()
    dIA = np.zeros((n, K, 6, 6))
    pA = np.zeros((n, 6))
    dpA = np.zeros((n, K, 6))
    eye6 = np.eye(6)
    for i in range(n):
        jt, k, p = jtype[i], qidx[i], parent[i]
        E = Rt[i].T
        Xt = np.zeros((6, 6))
        Xt[:3, :3] = E
        Xt[3:, 3:] = E
        Xt[3:, :3] = -E @ _skew_np(pt[i])
        A = _skew_np(axis[i])
        if jt == 0:
            ca, sa = np.cos(q[k]), np.sin(q[k])
            Rj = np.eye(3) * ca + sa * A + (1 - ca) * np.outer(axis[i], axis[i])
            XJ = np.zeros((6, 6))
            XJ[:3, :3] = Rj.T
            XJ[3:, 3:] = Rj.T
            dXJ = np.zeros((6, 6))
            dXJ[:3, :3] = -Rj.T @ A
            dXJ[3:, 3:] = -Rj.T @ A
            S[i, :3] = axis[i]
        elif jt == 1:
            XJ = eye6.copy()
            XJ[3:, :3] = -A * q[k]
            dXJ = np.zeros((6, 6))
            dXJ[3:, :3] = -A
            S[i, 3:] = axis[i]
        else:
            XJ = eye6
            dXJ = np.zeros((6, 6))
        Xup[i] = XJ @ Xt
        d = np.zeros((K, 6, 6))
        if jt != 2:
            d += dq[:, k, None, None] * (dXJ @ Xt)
        if Km:
            dXt = np.zeros((Km, 6, 6))
            dXt[:, 3:, :3] = -E @ _skew_np(dpt[:, i])
            d[msl] += XJ @ dXt
        dX[i] = d
        if p >= 0:
            v[i] = Xup[i] @ v[p]
            dv[i] = dv[p] @ Xup[i].T + d @ v[p]
        if jt != 2:
            vJ = S[i] * qd[k]
            dvJ = dqd[:, k, None] * S[i]
            v[i] += vJ
            dv[i] += dvJ
            c[i] = _crm_np(v[i]) @ vJ
            dc[i] = -(dv[i] @ _crm_np(vJ).T) + dvJ @ _crm_np(v[i]).T
        Iv = I6[i] @ v[i]
        pA[i] = _crf_np(v[i]) @ Iv
        dIA[i, msl] = dI6[:, i]
        dIv = dv[i] @ I6[i].T + dIA[i] @ v[i]
        dpA[i] = np.einsum("kij,j->ki", _crf_np(dv[i]), Iv) + dIv @ _crf_np(v[i]).T

    U = np.zeros((n, 6))
    dU = np.zeros((n, K, 6))
    D = np.zeros(n)
    dD = np.zeros((n, K))
    u = np.zeros(n)
    du = np.zeros((n, K))
    for i in range(n - 1, -1, -1):
        jt, k, p = jtype[i], qidx[i], parent[i]
        if jt != 2:
            U[i] = IA[i] @ S[i]
            D[i] = S[i] @ U[i]
            if not abs(D[i]) > 1e-300:
                raise ArithmeticError("singular articulated inertia")
            u[i] = tau[k] - S[i] @ pA[i]
            dU[i] = dIA[i] @ S[i]
            dD[i] = dU[i] @ S[i]
            du[i] = dtau[:, k] - dpA[i] @ S[i]
        if p < 0:
            continue
        if jt != 2:
            invD = 1.0 / D[i]
            Ia = IA[i] - np.outer(U[i], U[i]) * invD
            pa = pA[i] + Ia @ c[i] + U[i] * u[i] * invD
            f = dD[i] * invD * invD
            UU = np.outer(U[i], U[i])
            dUU = dU[i][:, :, None] * U[i][None, None, :]
            dIa = dIA[i] - (dUU + np.swapaxes(dUU, 1, 2)) * invD + UU[None] * f[:, None, None]
            dpa = (dpA[i] + dIa @ c[i] + dc[i] @ Ia.T + dU[i] * u[i] * invD
                   + U[i][None] * (du[i] * invD - u[i] * f)[:, None])
        else:
            Ia, pa = IA[i], pA[i]
            dIa, dpa = dIA[i], dpA[i]
        X = Xup[i]
        T = Ia @ X
        IA[p] += X.T @ T
        pA[p] += X.T @ pa
        d = dX[i]
        dIA[p] += np.swapaxes(d, 1, 2) @ T + X.T @ (dIa @ X + Ia @ d)
        dpA[p] += np.einsum("kji,j->ki", d, pa) + dpa @ X

    a = np.zeros((n, 6))
    da = np.zeros((n, K, 6))
    qdd = np.zeros(nq)
    dqdd = np.zeros((K, nq))
    a0 = np.concatenate([np.zeros(3), -grav])
    for i in range(n):
        jt, k, p = jtype[i], qidx[i], parent[i]
        X = Xup[i]
        ap = a[p] if p >= 0 else a0
        a[i] = X @ ap + c[i]
        da[i] = dX[i] @ ap + dc[i]
        if p >= 0:
            da[i] += da[p] @ X.T
        if jt != 2:
            qk = (u[i] - U[i] @ a[i]) / D[i]
            dqk = (du[i] - dU[i] @ a[i] - da[i] @ U[i] - qk * dD[i]) / D[i]
            qdd[k] = qk
            dqdd[:, k] = dqk
            a[i] += S[i] * qk
            da[i] += dqk[:, None] * S[i]
    return qdd, dqdd


_kernel = aba_tangent_loops if HAVE_NUMBA else aba_tangent_numpy

_EMPTY_PT = np.zeros((0, 0, 3))
_EMPTY_I6 = np.zeros((0, 0, 6, 6))


def aba_tangent(P: Packed, q, qd, tau, dq, dqd, dtau, dpt=None, dI6=None, k0=0, kernel=None):
    """Accelerations and their derivatives along ``K`` tangent directions.

    ``dq``, ``dqd``, ``dtau`` have shape ``(K, nq)``; ``dpt``/``dI6`` carry
    model tangents for directions ``k0 .. k0 + Km - 1``.
    """
    if dpt is None:
        dpt = np.zeros((0, len(P.parent), 3))
        dI6 = np.zeros((0, len(P.parent), 6, 6))
    fn = kernel or _kernel
    return fn(P.parent, P.jtype, P.qidx, P.axis, P.Rt, P.pt, P.I6, P.grav,
              np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(qd, dtype=float),
              np.ascontiguousarray(tau, dtype=float),
              np.ascontiguousarray(dq, dtype=float), np.ascontiguousarray(dqd, dtype=float),
              np.ascontiguousarray(dtau, dtype=float), dpt, dI6, k0)


def aba(P: Packed, q, qd, tau, kernel=None) -> np.ndarray:
    z = np.zeros((0, P.nq))
    return aba_tangent(P, q, qd, tau, z, z, z, kernel=kernel)[0]
