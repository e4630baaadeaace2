"""Spatial algebra against dense 6x6 matrix oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsim.spatial import (
    ArticulatedInertia,
    SpatialForce,
    SpatialInertia,
    SpatialMotion,
    SpatialTransform,
    axis_angle_matrix,
    cross_force,
    cross_motion,
    force_matrix,
    inertia_apply,
    inverse_transform_force,
    inverse_transform_motion,
    matrix_to_quat,
    motion_matrix,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    transform_compose,
    transform_force,
    transform_motion,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)
quat = st.tuples(finite, finite, finite, finite).filter(lambda q: sum(c * c for c in q) > 1e-2)


def _skew(p):
    return np.array([[0, -p[2], p[1]], [p[2], 0, -p[0]], [-p[1], p[0], 0]], dtype=float)


def _transform(q, p):
    return SpatialTransform(quat_normalize(q), tuple(p))


def _motion_oracle(X):
    # textbook Plucker transform for a pose (R, p) mapping source to target
    R = np.array(quat_to_matrix(X.rot)).reshape(3, 3)
    out = np.zeros((6, 6))
    out[:3, :3] = R
    out[3:, 3:] = R
    out[3:, :3] = _skew(X.trans) @ R
    return out


def _crm(v):
    w, u = np.asarray(v[:3]), np.asarray(v[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = _skew(w)
    out[3:, 3:] = _skew(w)
    out[3:, :3] = _skew(u)
    return out


def _arr(v):
    return np.array(list(v[0]) + list(v[1]), dtype=float)


@settings(max_examples=60, deadline=None)
@given(quat, vec3, vec3, vec3)
def test_motion_transform_matches_matrix(q, p, w, u):
    X = _transform(q, p)
    v = SpatialMotion(w, u)
    np.testing.assert_allclose(_arr(transform_motion(X, v)), _motion_oracle(X) @ _arr(v), atol=1e-12)
    np.testing.assert_allclose(motion_matrix(X), _motion_oracle(X), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(quat, vec3, vec3, vec3)
def test_force_transform_is_dual_of_motion(q, p, n, f):
    X = _transform(q, p)
    F = SpatialForce(n, f)
    expected = np.linalg.inv(_motion_oracle(X)).T @ _arr(F)
    np.testing.assert_allclose(_arr(transform_force(X, F)), expected, atol=1e-10)
    np.testing.assert_allclose(force_matrix(X), np.linalg.inv(_motion_oracle(X)).T, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(quat, vec3, vec3, vec3, vec3, vec3)
def test_power_is_frame_invariant(q, p, w, u, n, f):
    X = _transform(q, p)
    v, F = SpatialMotion(w, u), SpatialForce(n, f)
    assert transform_motion(X, v).dot(transform_force(X, F)) == pytest.approx(v.dot(F), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(quat, vec3, vec3, vec3)
def test_inverse_round_trip(q, p, w, u):
    X = _transform(q, p)
    v = SpatialMotion(w, u)
    back = inverse_transform_motion(X, transform_motion(X, v))
    np.testing.assert_allclose(_arr(back), _arr(v), atol=1e-11)
    back2 = transform_motion(X.inverse(), transform_motion(X, v))
    np.testing.assert_allclose(_arr(back2), _arr(v), atol=1e-11)
    F = SpatialForce(w, u)
    np.testing.assert_allclose(_arr(inverse_transform_force(X, transform_force(X, F))), _arr(F), atol=1e-11)


@settings(max_examples=40, deadline=None)
@given(quat, vec3, quat, vec3, vec3, vec3)
def test_composition_matches_matrix_product(q1, p1, q2, p2, w, u):
    A, B = _transform(q1, p1), _transform(q2, p2)
    AB = transform_compose(A, B)
    np.testing.assert_allclose(_motion_oracle(AB), _motion_oracle(A) @ _motion_oracle(B), atol=1e-10)
    v = SpatialMotion(w, u)
    np.testing.assert_allclose(_arr(transform_motion(AB, v)),
                               _arr(transform_motion(A, transform_motion(B, v))), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, vec3, vec3)
def test_cross_products_match_matrices(w, u, a, b):
    v = SpatialMotion(w, u)
    m = SpatialMotion(a, b)
    np.testing.assert_allclose(_arr(cross_motion(v, m)), _crm(_arr(v)) @ _arr(m), atol=1e-12)
    F = SpatialForce(a, b)
    np.testing.assert_allclose(_arr(cross_force(v, F)), -_crm(_arr(v)).T @ _arr(F), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(vec3, finite)
def test_rotation_matrices_agree(axis, angle):
    a = np.asarray(axis)
    if np.linalg.norm(a) < 1e-3:
        return
    a = tuple(a / np.linalg.norm(a))
    R1 = np.array(axis_angle_matrix(a, angle)).reshape(3, 3)
    R2 = np.array(quat_to_matrix(quat_from_axis_angle(a, angle))).reshape(3, 3)
    np.testing.assert_allclose(R1, R2, atol=1e-12)
    np.testing.assert_allclose(R1 @ R1.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R1) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(quat, quat)
def test_quaternion_product_is_matrix_product(q1, q2):
    a, b = quat_normalize(q1), quat_normalize(q2)
    lhs = np.array(quat_to_matrix(quat_mul(a, b))).reshape(3, 3)
    rhs = np.array(quat_to_matrix(a)).reshape(3, 3) @ np.array(quat_to_matrix(b)).reshape(3, 3)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    back = np.array(quat_to_matrix(matrix_to_quat(quat_to_matrix(a)))).reshape(3, 3)
    np.testing.assert_allclose(back, np.array(quat_to_matrix(a)).reshape(3, 3), atol=1e-10)


def test_inertia_matrix_and_parallel_axis():
    m, c = 2.0, (0.1, -0.2, 0.3)
    Ic = (0.3, 0.01, 0.0, 0.01, 0.2, 0.02, 0.0, 0.02, 0.25)
    I = SpatialInertia.from_com(m, c, Ic)
    M = I.as_matrix()
    # textbook form [[Ic - m cx cx, m cx], [-m cx, m 1]]
    C = _skew(c)
    oracle = np.block([[np.reshape(Ic, (3, 3)) - m * C @ C, m * C], [-m * C, m * np.eye(3)]])
    np.testing.assert_allclose(M, oracle, atol=1e-14)
    np.testing.assert_allclose(np.reshape(I.inertia_about_com(), (3, 3)), np.reshape(Ic, (3, 3)), atol=1e-14)
    v = SpatialMotion((0.3, -1.0, 0.5), (1.0, 2.0, -0.7))
    np.testing.assert_allclose(_arr(inertia_apply(I, v)), M @ _arr(v), atol=1e-13)
    assert np.all(np.linalg.eigvalsh(M) > 0)


def test_articulated_inertia_transform(rng):
    m, c = 1.5, (0.2, 0.1, -0.1)
    I = SpatialInertia.from_com(m, c, (0.1, 0, 0, 0, 0.2, 0, 0, 0, 0.15))
    X = _transform(tuple(rng.normal(size=4)), tuple(rng.normal(size=3)))
    IA = ArticulatedInertia.from_rigid(I)
    np.testing.assert_allclose(IA.as_matrix(), I.as_matrix(), atol=1e-14)
    # inertia maps motion to force: I_target = Xf I Xm^{-1}
    Xm = _motion_oracle(X)
    expected = np.linalg.inv(Xm).T @ I.as_matrix() @ np.linalg.inv(Xm)
    np.testing.assert_allclose(IA.to_target(X).as_matrix(), expected, atol=1e-12)
    U = SpatialForce((0.1, 0.2, 0.3), (0.4, -0.5, 0.6))
    u = _arr(U)
    np.testing.assert_allclose(IA.minus_outer(U, 0.7).as_matrix(), I.as_matrix() - 0.7 * np.outer(u, u),
                               atol=1e-14)


def test_rotation_about_z_by_quarter_turn():
    X = SpatialTransform.rotation((0.0, 0.0, 1.0), math.pi / 2)
    np.testing.assert_allclose(X.apply_point((1.0, 0.0, 0.0)), (0.0, 1.0, 0.0), atol=1e-15)
    T = SpatialTransform.translation((1.0, 2.0, 3.0))
    np.testing.assert_allclose((T @ X).apply_point((1.0, 0.0, 0.0)), (1.0, 3.0, 3.0), atol=1e-15)
