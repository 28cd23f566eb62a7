import numpy as np
import pytest

from fd import check_between_factor, check_landmark_factor, check_localization_factor, landmark_factor_errors
from slimmap.geometry import Pose, rot2dof
from slimmap.mapmodel import Kind
from slimmap.optimize.factors import (
    between_residuals,
    huber_cost,
    huber_weights,
    line_residuals,
    plane_residuals,
    prior_residuals,
    rot2dof_derivatives,
)


@pytest.mark.parametrize("kind", [Kind.LINE, Kind.PLANE])
def test_landmark_jacobians_match_differences(rng, kind):
    assert max(check_landmark_factor(rng, kind) for _ in range(50)) < 1e-5


def test_between_jacobians_match_differences(rng):
    assert max(check_between_factor(rng) for _ in range(50)) < 1e-5


def test_localization_jacobian_matches_differences(rng):
    assert max(check_localization_factor(rng) for _ in range(30)) < 1e-5


def test_rot2dof_derivatives_by_differences(rng):
    a, b = rng.uniform(-1, 1, 2)
    dA, dB = rot2dof_derivatives(np.array([a]), np.array([b]))
    h = 1e-6
    assert np.allclose((rot2dof(a + h, b) - rot2dof(a - h, b)) / (2 * h), dA[0], atol=1e-8)
    assert np.allclose((rot2dof(a, b + h) - rot2dof(a, b - h)) / (2 * h), dB[0], atol=1e-8)


def test_plane_residual_is_signed_distance():
    pts = np.array([[[0.0, 0.0, 2.0], [1.0, 0.0, 2.0], [0.0, 1.0, 2.0]]])
    r, _, _ = plane_residuals(np.eye(3)[None], np.zeros((1, 3)), np.zeros((1, 3)), pts)
    assert np.allclose(r, 2.0)


def test_line_residual_zero_on_line():
    pts = np.array([[[1.0, 2.0, -3.0], [1.0, 2.0, 5.0]]])
    r, _, _ = line_residuals(np.eye(3)[None], np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0, 2.0]]), pts)
    assert np.allclose(r, 0.0)


def test_between_and_prior_vanish_at_measurement(rng):
    a = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    b = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    m = a.inverse() @ b
    r, _, _ = between_residuals(a.rotation[None], a.translation[None], b.rotation[None], b.translation[None],
                                m.rotation[None], m.translation[None])
    assert np.allclose(r, 0.0, atol=1e-12)
    r, _ = prior_residuals(a.rotation[None], a.translation[None], a.rotation[None], a.translation[None])
    assert np.allclose(r, 0.0, atol=1e-12)


def test_huber_kernel_continuity():
    k = 0.5
    x = np.array([k - 1e-9, k + 1e-9])
    c = huber_cost(x, k)
    assert abs(c[0] - c[1]) < 1e-7
    assert np.allclose(huber_weights(np.array([0.1, 2.0]), k), [1.0, 0.25])
    assert np.allclose(huber_weights(np.array([5.0]), np.inf), 1.0)


@pytest.mark.parametrize("kind", [Kind.LINE, Kind.PLANE])
def test_batched_difference_check_agrees_with_single(kind):
    single = [check_landmark_factor(np.random.default_rng(i), kind) for i in range(3)]
    batched = [landmark_factor_errors(np.random.default_rng(i), kind, 1)[0] for i in range(3)]
    assert np.allclose(single, batched, rtol=1e-3, atol=1e-12)
