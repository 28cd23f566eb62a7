"""Pairwise-consistency pruning of cross-session loop candidates."""

from __future__ import annotations

import numpy as np

from .geometry import Pose, so3_log
from .kernels import max_clique
from .register import LoopCandidate


class MissingOdometry(KeyError):
    pass


def _chain(poses, sessions, a: int, b: int, check_session: bool) -> Pose:
    """Pose of keyframe ``b`` in the frame of keyframe ``a``."""
    if a not in poses or b not in poses:
        raise MissingOdometry(f"no odometry for keyframes {a}, {b}")
    if check_session and sessions is not None and sessions[a] != sessions[b]:
        raise MissingOdometry(f"keyframes {a} and {b} belong to different sessions")
    return poses[a].inverse() @ poses[b]


def pcm_consistency(
    c1: LoopCandidate, c2: LoopCandidate, odom_base, odom_sub, sub_sessions=None
) -> tuple[float, float]:
    """Rotation (rad) and translation (m) norms of the loop-closure error.

    ``odom_base`` / ``odom_sub`` map keyframe ids to poses in their own map
    frames. The pair is processed in a canonical order so the result does not
    depend on argument order.
    """
    if (c2.base_kf, c2.sub_kf) < (c1.base_kf, c1.sub_kf):
        c1, c2 = c2, c1
    base_rel = _chain(odom_base, None, c1.base_kf, c2.base_kf, False)
    sub_rel = _chain(odom_sub, sub_sessions, c2.sub_kf, c1.sub_kf, True)
    dT = c1.T.inverse() @ base_rel @ c2.T @ sub_rel
    return float(np.linalg.norm(so3_log(dT.rotation))), float(np.linalg.norm(dT.translation))


def path_lengths(odom_sub, sub_sessions=None) -> dict:
    """Odometry arc length from the start of each session to every keyframe."""
    out, last = {}, {}
    for k in sorted(odom_sub):
        s = None if sub_sessions is None else sub_sessions[k]
        prev = last.get(s)
        step = 0.0 if prev is None else float(np.linalg.norm(odom_sub[k].translation - odom_sub[prev].translation))
        out[k] = (0.0 if prev is None else out[prev]) + step
        last[s] = k
    return out


def consistency_graph(cands, odom_base, odom_sub, gamma_rot, gamma_trans, sub_sessions=None,
                      growth: tuple = (0.0, 0.0)) -> np.ndarray:
    """Boolean adjacency of mutually consistent candidates.

    ``growth`` = (rad per m, m per m) widens both gates with the sub odometry
    path between the two candidates, since chained odometry error grows with it.
    """
    n = len(cands)
    adj = np.zeros((n, n), dtype=bool)
    arc = path_lengths(odom_sub, sub_sessions) if any(growth) else None
    for i in range(n):
        for j in range(i + 1, n):
            er, et = pcm_consistency(cands[i], cands[j], odom_base, odom_sub, sub_sessions)
            span = 0.0 if arc is None else abs(arc[cands[i].sub_kf] - arc[cands[j].sub_kf])
            adj[i, j] = adj[j, i] = er < gamma_rot + growth[0] * span and et < gamma_trans + growth[1] * span
    return adj


def filter_loops(
    cands: list, odom_base, odom_sub, gamma_rot: float = np.radians(3.0), gamma_trans: float = 1.0, sub_sessions=None,
    growth: tuple = (0.0, 0.0),
) -> list:
    """Largest pairwise-consistent subset of loop candidates, in input order."""
    if len(cands) <= 1:
        return list(cands)
    adj = consistency_graph(cands, odom_base, odom_sub, gamma_rot, gamma_trans, sub_sessions, growth)
    return [cands[i] for i in max_clique(adj)]
