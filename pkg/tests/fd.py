"""Central finite-difference checks of the analytic factor Jacobians."""

import numpy as np

from slimmap.geometry import Pose, angles_from_normal, so3_exp
from slimmap.localize import _linearize
from slimmap.mapmodel import Kind
from slimmap.optimize.factors import between_residuals, line_residuals, plane_residuals

H = 1e-6


def _retract(R, t, d):
    return R @ so3_exp(d[3:]), t + d[:3]


def _rel_err(num, ana):
    scale = max(np.abs(ana).max(), np.abs(num).max(), 1.0)
    return float(np.abs(num - ana).max() / scale)


def _batch_rel_err(num, ana):
    """Per-state relative error for stacked ``(n, rows, cols)`` Jacobians."""
    n = len(ana)
    diff = np.abs(num - ana).reshape(n, -1).max(axis=1)
    scale = np.maximum(np.maximum(np.abs(ana).reshape(n, -1).max(axis=1), np.abs(num).reshape(n, -1).max(axis=1)), 1.0)
    return diff / scale


def _unit(i, dim):
    d = np.zeros(dim)
    d[i] = H
    return d


def random_state(rng, kind):
    """Pose, landmark params and observation points near the landmark."""
    R = so3_exp(rng.normal(size=3))
    t = rng.normal(scale=5.0, size=3)
    # keep away from the beta = +-pi/2 chart singularity
    alpha = rng.uniform(-np.pi, np.pi)
    beta = rng.uniform(-1.3, 1.3)
    if kind == Kind.LINE:
        params = np.array([alpha, beta, *rng.normal(scale=3.0, size=2)])
        pts = rng.normal(scale=3.0, size=(2, 3))
    else:
        params = np.array([alpha, beta, rng.normal(scale=5.0)])
        pts = rng.normal(scale=3.0, size=(3, 3))
    return R, t, params, pts


def check_landmark_factor(rng, kind) -> float:
    R, t, params, pts = random_state(rng, kind)
    fn = line_residuals if kind == Kind.LINE else plane_residuals
    _, Jp, Jl = fn(R[None], t[None], params[None], pts[None])

    def res(R_, t_, p_):
        return fn(R_[None], t_[None], p_[None], pts[None])[0][0]

    num_p = np.empty_like(Jp[0])
    for i in range(6):
        d = np.zeros(6)
        d[i] = H
        num_p[:, i] = (res(*_retract(R, t, d), params) - res(*_retract(R, t, -d), params)) / (2 * H)
    num_l = np.empty_like(Jl[0])
    for i in range(len(params)):
        d = np.zeros(len(params))
        d[i] = H
        num_l[:, i] = (res(R, t, params + d) - res(R, t, params - d)) / (2 * H)
    return max(_rel_err(num_p, Jp[0]), _rel_err(num_l, Jl[0]))


def check_between_factor(rng, noise: float = 0.1) -> float:
    """Odometry and loop factors share this residual; ``noise`` sets how far the measurement is from the state."""
    Ra, ta = so3_exp(rng.normal(size=3)), rng.normal(scale=5.0, size=3)
    Rb, tb = so3_exp(rng.normal(size=3)), rng.normal(scale=5.0, size=3)
    rel = Pose(Ra, ta).inverse() @ Pose(Rb, tb)
    Rm = rel.rotation @ so3_exp(rng.normal(scale=noise, size=3))
    tm = rel.translation + rng.normal(scale=noise, size=3)
    _, Ja, Jb = between_residuals(Ra[None], ta[None], Rb[None], tb[None], Rm[None], tm[None])

    def res(Ra_, ta_, Rb_, tb_):
        return between_residuals(Ra_[None], ta_[None], Rb_[None], tb_[None], Rm[None], tm[None])[0][0]

    num_a, num_b = np.empty((6, 6)), np.empty((6, 6))
    for i in range(6):
        d = np.zeros(6)
        d[i] = H
        num_a[:, i] = (res(*_retract(Ra, ta, d), Rb, tb) - res(*_retract(Ra, ta, -d), Rb, tb)) / (2 * H)
        num_b[:, i] = (res(Ra, ta, *_retract(Rb, tb, d)) - res(Ra, ta, *_retract(Rb, tb, -d))) / (2 * H)
    return max(_rel_err(num_a, Ja[0]), _rel_err(num_b, Jb[0]))


def check_localization_factor(rng) -> float:
    """Frame-pose Jacobian of the stacked point-to-landmark residual used in tracking."""
    assoc = {Kind.LINE: ([], []), Kind.PLANE: ([], [])}
    for _ in range(4):
        kind = Kind.LINE if rng.random() < 0.5 else Kind.PLANE
        _, _, params, pts = random_state(rng, kind)
        assoc[kind][0].append(pts)
        assoc[kind][1].append(params)
    pose = Pose(so3_exp(rng.normal(size=3)), rng.normal(scale=5.0, size=3))
    _, J, _ = _linearize(pose, assoc, np.inf)
    num = np.empty_like(J)
    for i in range(6):
        d = np.zeros(6)
        d[i] = H
        rp = _linearize(pose.retract(d), assoc, np.inf)[0]
        rm = _linearize(pose.retract(-d), assoc, np.inf)[0]
        num[:, i] = (rp - rm) / (2 * H)
    return _rel_err(num, J)


def landmark_factor_errors(rng, kind, n: int) -> np.ndarray:
    """Per-state errors of the line or plane Jacobians, all ``n`` states in one batch."""
    states = [random_state(rng, kind) for _ in range(n)]
    R = np.array([st[0] for st in states])
    t = np.array([st[1] for st in states])
    params = np.array([st[2] for st in states])
    pts = np.array([st[3] for st in states])
    fn = line_residuals if kind == Kind.LINE else plane_residuals
    _, Jp, Jl = fn(R, t, params, pts)
    num_p = np.empty_like(Jp)
    for i in range(6):
        d = _unit(i, 6)
        Rp, tp = R @ so3_exp(d[3:]), t + d[:3]
        Rm, tm = R @ so3_exp(-d[3:]), t - d[:3]
        num_p[:, :, i] = (fn(Rp, tp, params, pts)[0] - fn(Rm, tm, params, pts)[0]) / (2 * H)
    num_l = np.empty_like(Jl)
    for i in range(params.shape[1]):
        d = _unit(i, params.shape[1])
        num_l[:, :, i] = (fn(R, t, params + d, pts)[0] - fn(R, t, params - d, pts)[0]) / (2 * H)
    return np.maximum(_batch_rel_err(num_p, Jp), _batch_rel_err(num_l, Jl))


def between_factor_errors(rng, n: int, noise: float = 0.1) -> np.ndarray:
    """Batched version of :func:`check_between_factor`."""
    Ra = np.array([so3_exp(w) for w in rng.normal(size=(n, 3))])
    Rb = np.array([so3_exp(w) for w in rng.normal(size=(n, 3))])
    ta, tb = rng.normal(scale=5.0, size=(n, 3)), rng.normal(scale=5.0, size=(n, 3))
    rel = [Pose(a, x).inverse() @ Pose(b, y) for a, x, b, y in zip(Ra, ta, Rb, tb)]
    Rm = np.array([r.rotation @ so3_exp(w) for r, w in zip(rel, rng.normal(scale=noise, size=(n, 3)))])
    tm = np.array([r.translation for r in rel]) + rng.normal(scale=noise, size=(n, 3))
    _, Ja, Jb = between_residuals(Ra, ta, Rb, tb, Rm, tm)
    num_a, num_b = np.empty_like(Ja), np.empty_like(Jb)
    for i in range(6):
        d = _unit(i, 6)
        Ep, Em = so3_exp(d[3:]), so3_exp(-d[3:])
        num_a[:, :, i] = (between_residuals(Ra @ Ep, ta + d[:3], Rb, tb, Rm, tm)[0]
                          - between_residuals(Ra @ Em, ta - d[:3], Rb, tb, Rm, tm)[0]) / (2 * H)
        num_b[:, :, i] = (between_residuals(Ra, ta, Rb @ Ep, tb + d[:3], Rm, tm)[0]
                          - between_residuals(Ra, ta, Rb @ Em, tb - d[:3], Rm, tm)[0]) / (2 * H)
    return np.maximum(_batch_rel_err(num_a, Ja), _batch_rel_err(num_b, Jb))
