"""Translate between the map model and optimisation problems."""

from __future__ import annotations

import numpy as np

from ..geometry import Pose
from ..mapmodel import SlimMap
from .problem import LandmarkFactor, PoseFactor, Problem, _upper_sqrt

DEFAULT_GAUGE_SIGMA = 1e-3


def recovered_factors(m: SlimMap):
    """Pose factors and landmark factors carried by marginalization output."""
    pfs, lfs = [], []
    for f in m.recovered:
        U = _upper_sqrt(f.info)
        if f.kind == "prior":
            pfs.append(PoseFactor((f.keyframes[0],), f.z, U))
        elif f.kind == "relpose":
            pfs.append(PoseFactor(tuple(f.keyframes), f.z, U))
        else:
            kind = m.landmarks[f.landmark].kind
            lfs.append(LandmarkFactor(f.keyframes[0], f.landmark, kind, np.asarray(f.z), U))
    return pfs, lfs


def observation_factors(m: SlimMap, huber: float | None = 0.1, keyframes=None):
    out = []
    ids = m.keyframe_ids() if keyframes is None else keyframes
    for k in ids:
        for lid, obs in m.keyframes[k].observations:
            out.append(LandmarkFactor(k, lid, obs.kind, obs.points, float(obs.sqrt_info), huber))
    return out


def odometry_factors(m: SlimMap):
    return [PoseFactor((f.a, f.b), f.measurement, f.sqrt_info) for f in m.odometry]


def has_prior(m: SlimMap) -> bool:
    return any(f.kind == "prior" for f in m.recovered)


def gauge_prior(m: SlimMap, sigma: float = DEFAULT_GAUGE_SIGMA) -> PoseFactor:
    """Strong prior holding the oldest keyframe at its current pose."""
    k = m.keyframe_ids()[0]
    return PoseFactor((k,), m.keyframes[k].pose, np.eye(6) / sigma)


def ba_problem(m: SlimMap, huber: float | None = 0.1, gauge_sigma: float = DEFAULT_GAUGE_SIGMA) -> Problem:
    """Bundle-adjustment problem over every keyframe and landmark of ``m``."""
    pfs, lfs = recovered_factors(m)
    pfs = odometry_factors(m) + pfs
    lfs = observation_factors(m, huber) + lfs
    if not has_prior(m):
        pfs.append(gauge_prior(m, gauge_sigma))
    used = {f.landmark for f in lfs}
    return Problem(
        poses={k: kf.pose for k, kf in m.keyframes.items()},
        landmarks={k: lm.params.copy() for k, lm in m.landmarks.items() if k in used},
        kinds={k: lm.kind for k, lm in m.landmarks.items() if k in used},
        pose_factors=pfs,
        lm_factors=lfs,
    )


def apply_solution(m: SlimMap, problem: Problem) -> None:
    for k, pose in problem.poses.items():
        m.keyframes[k].pose = pose
    for k, params in problem.landmarks.items():
        m.landmarks[k].set_params(params)


def loop_sqrt_info(sigma_trans: float = 0.05, sigma_rot: float = np.radians(0.2)) -> np.ndarray:
    return np.diag([1.0 / sigma_trans] * 3 + [1.0 / sigma_rot] * 3)


def pgo_problem(poses: dict, odometry: list, loops: list, fixed=(), loop_huber: float | None = 0.5,
                loop_info: np.ndarray | None = None) -> Problem:
    """Pose graph from odometry factors and ``(base_kf, sub_kf, Pose)`` loops."""
    U = loop_sqrt_info() if loop_info is None else loop_info
    pfs = [PoseFactor((f.a, f.b), f.measurement, f.sqrt_info) for f in odometry]
    pfs += [PoseFactor((a, b), T, U, loop_huber) for a, b, T in loops]
    return Problem(poses=dict(poses), pose_factors=pfs, fixed=set(fixed))


def transform_poses(poses: dict, T: Pose) -> dict:
    return {k: T @ p for k, p in poses.items()}
