"""Batched residuals and analytic Jacobians.

Pose perturbations are ``[dt, dtheta]`` with ``R <- R exp(dtheta)`` and
``t <- t + dt``. Landmark perturbations are additive on the minimal
parameters ``(alpha, beta, x, y)`` / ``(alpha, beta, d)``.
"""

from __future__ import annotations

import numpy as np

from ..geometry import right_jacobian_inv, rot2dof, skew, so3_log


def rot2dof_derivatives(alpha, beta):
    """Partial derivatives of the 2-DoF rotation w.r.t. alpha and beta."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    z = np.zeros_like(ca)
    dA = np.stack(
        [
            np.stack([z, z, z], axis=-1),
            np.stack([ca * sb, -sa, ca * cb], axis=-1),
            np.stack([-sa * sb, -ca, -sa * cb], axis=-1),
        ],
        axis=-2,
    )
    dB = np.stack(
        [
            np.stack([-sb, z, -cb], axis=-1),
            np.stack([sa * cb, z, -sa * sb], axis=-1),
            np.stack([ca * cb, z, -ca * sb], axis=-1),
        ],
        axis=-2,
    )
    return dA, dB


def _world_points(Rf, tf, pts):
    return np.einsum("nij,nkj->nki", Rf, pts) + tf[:, None, :]


def _pose_point_jacobian(Rf, pts):
    """d p_w / d [dt, dtheta] for every point: shape (n, k, 3, 6)."""
    n, k, _ = pts.shape
    J = np.empty((n, k, 3, 6))
    J[..., :3] = np.eye(3)
    J[..., 3:] = -np.einsum("nij,nkjl->nkil", Rf, skew(pts))
    return J


def line_residuals(Rf, tf, params, pts):
    """Point-to-line residuals of ``pts`` (keyframe frame) against line landmarks.

    Shapes: ``Rf (n,3,3)``, ``tf (n,3)``, ``params (n,4)``, ``pts (n,2,3)``.
    Returns ``r (n,4)``, ``J_pose (n,4,6)``, ``J_lm (n,4,4)``.
    """
    n = len(params)
    pw = _world_points(Rf, tf, pts)
    R = rot2dof(params[:, 0], params[:, 1])
    C = R[:, :, :2]
    r = np.einsum("nij,nki->nkj", C, pw) - params[:, None, 2:4]
    dA, dB = rot2dof_derivatives(params[:, 0], params[:, 1])
    ra = np.einsum("nij,nki->nkj", dA[:, :, :2], pw)
    rb = np.einsum("nij,nki->nkj", dB[:, :, :2], pw)
    Jl = np.zeros((n, 2, 2, 4))
    Jl[..., 0] = ra
    Jl[..., 1] = rb
    Jl[:, :, 0, 2] = -1.0
    Jl[:, :, 1, 3] = -1.0
    Jp = np.einsum("nij,nkil->nkjl", C, _pose_point_jacobian(Rf, pts))
    return r.reshape(n, 4), Jp.reshape(n, 4, 6), Jl.reshape(n, 4, 4)


def plane_residuals(Rf, tf, params, pts):
    """Point-to-plane residuals; ``pts (n,3,3)``. Returns ``r (n,3)``, ``J_pose (n,3,6)``, ``J_lm (n,3,3)``."""
    n = len(params)
    pw = _world_points(Rf, tf, pts)
    R = rot2dof(params[:, 0], params[:, 1])
    nrm = R[:, :, 2]
    r = np.einsum("ni,nki->nk", nrm, pw) + params[:, None, 2]
    dA, dB = rot2dof_derivatives(params[:, 0], params[:, 1])
    Jl = np.empty((n, 3, 3))
    Jl[..., 0] = np.einsum("ni,nki->nk", dA[:, :, 2], pw)
    Jl[..., 1] = np.einsum("ni,nki->nk", dB[:, :, 2], pw)
    Jl[..., 2] = 1.0
    Jp = np.einsum("ni,nkil->nkl", nrm, _pose_point_jacobian(Rf, pts))
    return r, Jp, Jl


def between_residuals(Ra, ta, Rb, tb, Rm, tm):
    """Relative-pose residuals ``[Ra^T (tb - ta) - tm ; Log(Rm^T Ra^T Rb)]``.

    Returns ``r (n,6)``, ``J_a (n,6,6)``, ``J_b (n,6,6)``.
    """
    n = len(Ra)
    RaT = np.swapaxes(Ra, 1, 2)
    local = np.einsum("nij,nj->ni", RaT, tb - ta)
    E = np.swapaxes(Rm, 1, 2) @ RaT @ Rb
    e = so3_log(E)
    Jr = right_jacobian_inv(e)
    r = np.concatenate([local - tm, e], axis=1)
    Ja = np.zeros((n, 6, 6))
    Jb = np.zeros((n, 6, 6))
    Ja[:, :3, :3] = -RaT
    Ja[:, :3, 3:] = skew(local)
    Ja[:, 3:, 3:] = -Jr @ np.swapaxes(Rb, 1, 2) @ Ra
    Jb[:, :3, :3] = RaT
    Jb[:, 3:, 3:] = Jr
    return r, Ja, Jb


def prior_residuals(R, t, Rm, tm):
    """``[t - tm ; Log(Rm^T R)]`` and its Jacobian (n,6,6)."""
    n = len(R)
    e = so3_log(np.swapaxes(Rm, 1, 2) @ R)
    r = np.concatenate([t - tm, e], axis=1)
    J = np.zeros((n, 6, 6))
    J[:, :3, :3] = np.eye(3)
    J[:, 3:, 3:] = right_jacobian_inv(e)
    return r, J


def huber_weights(norms: np.ndarray, k) -> np.ndarray:
    """IRLS weights of the Huber kernel; ``k`` may be an array (inf disables)."""
    norms = np.asarray(norms, dtype=float)
    return np.where(norms <= k, 1.0, k / np.maximum(norms, 1e-300))


def huber_cost(norms: np.ndarray, k) -> np.ndarray:
    norms = np.asarray(norms, dtype=float)
    k = np.broadcast_to(k, norms.shape)
    out = norms**2
    big = norms > k
    out[big] = 2.0 * k[big] * norms[big] - k[big] ** 2
    return out
