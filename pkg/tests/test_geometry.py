import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slimmap.geometry import (
    DegenerateDirection,
    Pose,
    angles_from_normal,
    canonical_plane,
    line_from_point_direction,
    line_to_point_direction,
    plane_from_normal_distance,
    plane_to_normal_distance,
    point_line_distance,
    point_plane_distance,
    right_jacobian_inv,
    rot2dof,
    rot2dof_normal,
    skew,
    so3_exp,
    so3_log,
    wrap_angle,
)

from helpers import random_pose

finite = st.floats(-50, 50, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)
small_rot = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


def _unit(v):
    n = np.linalg.norm(v)
    return v / n


@given(small_rot)
def test_exp_log_roundtrip(w):
    if np.linalg.norm(w) >= np.pi - 1e-6:
        return
    assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)


@given(small_rot)
def test_exp_is_rotation(w):
    R = so3_exp(w)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)


def test_log_near_pi_keeps_angle():
    axis = _unit(np.array([1.0, -2.0, 0.5]))
    w = axis * (np.pi - 1e-9)
    v = so3_log(so3_exp(w))
    assert np.isclose(np.linalg.norm(v), np.pi, atol=1e-6)
    assert abs(abs(v @ axis) / np.linalg.norm(v) - 1.0) < 1e-6


def test_skew_matches_cross(rng):
    a, b = rng.normal(size=(2, 3))
    assert np.allclose(skew(a) @ b, np.cross(a, b))


def test_right_jacobian_inverse_by_differences(rng):
    # Log(Exp(w) Exp(d)) ~ w + Jr^{-1}(w) d for small d
    w = rng.normal(size=3)
    Jinv = right_jacobian_inv(w)
    h = 1e-6
    num = np.empty((3, 3))
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        num[:, i] = (so3_log(so3_exp(w) @ so3_exp(d)) - so3_log(so3_exp(w) @ so3_exp(-d))) / (2 * h)
    assert np.allclose(num, Jinv, atol=1e-6)


def test_pose_group_laws(rng):
    a, b, c = (random_pose(rng) for _ in range(3))
    assert np.allclose(((a @ b) @ c).matrix(), (a @ (b @ c)).matrix())
    assert np.allclose((a @ a.inverse()).matrix(), np.eye(4), atol=1e-12)
    p = rng.normal(size=(5, 3))
    assert np.allclose((a @ b).apply(p), a.apply(b.apply(p)))


def test_retract_zero_is_identity(rng):
    a = random_pose(rng)
    assert np.array_equal(a.retract(np.zeros(6)).matrix(), a.matrix())


def test_pose_is_immutable(rng):
    a = random_pose(rng)
    with pytest.raises(ValueError):
        a.translation[0] = 1.0


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_rot2dof_orthonormal_and_normal_column(alpha, beta):
    R = rot2dof(alpha, beta)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.allclose(R[:, 2], rot2dof_normal(alpha, beta))


@given(vec3)
def test_angles_from_normal_roundtrip(v):
    if np.linalg.norm(v) < 1e-3:
        return
    n = _unit(v)
    a, b = angles_from_normal(n)
    assert np.allclose(rot2dof_normal(a, b), n, atol=1e-9)


@given(vec3, vec3)
def test_line_param_roundtrip(d, q):
    if np.linalg.norm(d) < 1e-3:
        return
    n = _unit(d)
    params = line_from_point_direction((n, q))
    n2, q2 = line_to_point_direction(params)
    assert abs(abs(n2 @ n) - 1.0) < 1e-9
    # q lies on the recovered line
    assert point_line_distance(q[None], n2, q2)[0] < 1e-7


@given(vec3, st.floats(-40, 40))
def test_plane_param_roundtrip(v, d):
    if np.linalg.norm(v) < 1e-3:
        return
    n = _unit(v)
    params = plane_from_normal_distance((n, d))
    n2, d2 = plane_to_normal_distance(params)
    assert d2 <= 1e-12
    pt = -d * n  # a point on the original plane
    assert point_plane_distance(pt[None], n2, d2)[0] < 1e-8


def test_canonical_plane_flips_positive_offset():
    n, d = canonical_plane(np.array([0.0, 0.0, 1.0]), 2.0)
    assert d == -2.0 and n[2] == -1.0
    n, d = canonical_plane(np.array([0.0, -1.0, 0.0]), 0.0)
    assert n[1] == 1.0


def test_zero_direction_rejected():
    with pytest.raises(DegenerateDirection):
        line_from_point_direction((np.zeros(3), np.ones(3)))


def test_wrap_angle_range():
    a = wrap_angle(np.array([3 * np.pi, -3 * np.pi, 0.1]))
    assert np.all(a <= np.pi) and np.all(a > -np.pi - 1e-12)
    assert np.isclose(a[2], 0.1)
