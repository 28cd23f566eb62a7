"""Factor containers and batched linearization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ..geometry import (
    Pose,
    line_from_point_direction,
    line_to_point_direction,
    plane_from_normal_distance,
    plane_to_normal_distance,
    so3_exp,
)
from ..mapmodel import PARAM_DIM, Kind
from .factors import (
    between_residuals,
    huber_cost,
    huber_weights,
    line_residuals,
    plane_residuals,
    prior_residuals,
)


class DisconnectedGraph(RuntimeError):
    pass


@dataclass
class PoseFactor:
    """Prior (one key) or relative-pose (two keys) factor.

    ``huber`` is a threshold in metres applied to the whitened residual norm
    after scaling by ``sqrt_info[0, 0]``; None disables the kernel.
    """

    keys: tuple
    measurement: Pose
    sqrt_info: np.ndarray
    huber: float | None = None


@dataclass
class LandmarkFactor:
    """Point-to-line (2 points) or point-to-plane (3 points) factor.

    ``points`` are in the keyframe frame. ``huber`` (metres) acts on each
    point's residual separately.
    """

    keyframe: int
    landmark: int
    kind: Kind
    points: np.ndarray
    sqrt_info: np.ndarray
    huber: float | None = None


@dataclass
class Problem:
    poses: dict  # keyframe id -> Pose
    landmarks: dict = field(default_factory=dict)  # landmark id -> params
    kinds: dict = field(default_factory=dict)  # landmark id -> Kind
    pose_factors: list = field(default_factory=list)
    lm_factors: list = field(default_factory=list)
    fixed: set = field(default_factory=set)

    def check_connected(self) -> None:
        """Every free pose must reach a fixed pose or a prior."""
        pid = {k: i for i, k in enumerate(sorted(self.poses))}
        lid = {k: len(pid) + i for i, k in enumerate(sorted(self.landmarks))}
        anchor = len(pid) + len(lid)
        a, b = [], []
        for k in self.fixed:
            a.append(pid[k])
            b.append(anchor)
        for f in self.pose_factors:
            if len(f.keys) == 1:
                a.append(pid[f.keys[0]])
                b.append(anchor)
            else:
                a.append(pid[f.keys[0]])
                b.append(pid[f.keys[1]])
        for f in self.lm_factors:
            a.append(pid[f.keyframe])
            b.append(lid[f.landmark])
        n = anchor + 1
        G = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
        _, labels = connected_components(G, directed=False)
        loose = [k for k, i in pid.items() if k not in self.fixed and labels[i] != labels[anchor]]
        if loose:
            raise DisconnectedGraph(f"{len(loose)} poses are not anchored (first: {loose[0]})")


@dataclass
class State:
    R: np.ndarray  # (P,3,3) all poses in sorted-id order
    t: np.ndarray  # (P,3)
    L: np.ndarray  # (M,4) landmark params padded


@dataclass
class Linearization:
    cost: float
    H0: np.ndarray  # pose-only factors, free poses, (6F, 6F)
    g0: np.ndarray
    pose_idx: np.ndarray  # per landmark factor, free-pose index or -1
    lm_idx: np.ndarray
    Jp: np.ndarray  # (nf,4,6) whitened and robust-weighted
    Jl: np.ndarray  # (nf,4,4)
    r: np.ndarray  # (nf,4)


def _upper_sqrt(info: np.ndarray) -> np.ndarray:
    """Upper-triangular U with U^T U = info (a tiny shift keeps PSD input factorable)."""
    info = 0.5 * (info + info.T)
    shift = 1e-12 * max(np.trace(info), 1e-300)
    Lc = np.linalg.cholesky(info + shift * np.eye(len(info)))
    return Lc.T


def canonical_params(kind: Kind, params: np.ndarray) -> np.ndarray:
    """Re-extract minimal parameters from the geometry they describe."""
    if kind == Kind.LINE:
        return np.array(line_from_point_direction(line_to_point_direction(params)))
    return np.array(plane_from_normal_distance(plane_to_normal_distance(params)))


class CompiledProblem:
    """Index arrays and stacked measurements for fast repeated evaluation."""

    def __init__(self, problem: Problem):
        self.problem = problem
        self.pose_ids = sorted(problem.poses)
        pindex = {k: i for i, k in enumerate(self.pose_ids)}
        self.free_ids = [k for k in self.pose_ids if k not in problem.fixed]
        free = {k: i for i, k in enumerate(self.free_ids)}
        self.free_of_pose = np.array([free.get(k, -1) for k in self.pose_ids], dtype=np.int64)
        self.lm_ids = sorted(problem.landmarks)
        lindex = {k: i for i, k in enumerate(self.lm_ids)}
        self.lm_kind = np.array([int(problem.kinds[k]) for k in self.lm_ids], dtype=np.int64)
        self.lm_dim = np.where(self.lm_kind == Kind.LINE, 4, 3).astype(np.int64)

        self.groups = {}
        for kind in (Kind.LINE, Kind.PLANE):
            fs = [(i, f) for i, f in enumerate(problem.lm_factors) if f.kind == kind]
            d = PARAM_DIM[kind]
            if not fs:
                continue
            order = np.array([i for i, _ in fs], dtype=np.int64)
            pose = np.array([pindex[f.keyframe] for _, f in fs], dtype=np.int64)
            lm = np.array([lindex[f.landmark] for _, f in fs], dtype=np.int64)
            pts = np.array([f.points for _, f in fs], dtype=float)
            U = np.array([f.sqrt_info * np.eye(d) if np.ndim(f.sqrt_info) == 0 else f.sqrt_info for _, f in fs])
            k = np.array([np.inf if f.huber is None else f.huber * U_[0, 0] for (_, f), U_ in zip(fs, U)])
            self.groups[kind] = (order, pose, lm, pts, U, k)
        self.n_lmf = len(problem.lm_factors)

        pf = problem.pose_factors
        self.prior = [f for f in pf if len(f.keys) == 1]
        self.between = [f for f in pf if len(f.keys) == 2]
        if self.prior:
            self.pr_idx = np.array([pindex[f.keys[0]] for f in self.prior])
            self.pr_R = np.array([f.measurement.rotation for f in self.prior])
            self.pr_t = np.array([f.measurement.translation for f in self.prior])
            self.pr_U = np.array([f.sqrt_info for f in self.prior])
            self.pr_k = np.array([np.inf if f.huber is None else f.huber * f.sqrt_info[0, 0] for f in self.prior])
        if self.between:
            self.bw_a = np.array([pindex[f.keys[0]] for f in self.between])
            self.bw_b = np.array([pindex[f.keys[1]] for f in self.between])
            self.bw_R = np.array([f.measurement.rotation for f in self.between])
            self.bw_t = np.array([f.measurement.translation for f in self.between])
            self.bw_U = np.array([f.sqrt_info for f in self.between])
            self.bw_k = np.array([np.inf if f.huber is None else f.huber * f.sqrt_info[0, 0] for f in self.between])

    # -- state ------------------------------------------------------------
    def initial_state(self) -> State:
        p = self.problem
        R = np.array([p.poses[k].rotation for k in self.pose_ids]).reshape(-1, 3, 3)
        t = np.array([p.poses[k].translation for k in self.pose_ids]).reshape(-1, 3)
        L = np.zeros((len(self.lm_ids), 4))
        for i, k in enumerate(self.lm_ids):
            L[i, : self.lm_dim[i]] = p.landmarks[k]
        return State(R, t, L)

    def retract(self, s: State, dx: np.ndarray, dl: np.ndarray | None) -> State:
        R, t = s.R.copy(), s.t.copy()
        live = self.free_of_pose >= 0
        if live.any():
            d = dx.reshape(-1, 6)[self.free_of_pose[live]]
            R[live] = R[live] @ so3_exp(d[:, 3:])
            t[live] = t[live] + d[:, :3]
        L = s.L
        if dl is not None and len(L):
            L = L + dl
            for i in range(len(L)):
                dim = self.lm_dim[i]
                L[i, :dim] = canonical_params(Kind(self.lm_kind[i]), L[i, :dim])
                L[i, dim:] = 0.0
        return State(R, t, L)

    def write_back(self, s: State) -> None:
        p = self.problem
        for i, k in enumerate(self.pose_ids):
            p.poses[k] = Pose(s.R[i], s.t[i])
        for i, k in enumerate(self.lm_ids):
            p.landmarks[k] = s.L[i, : self.lm_dim[i]].copy()

    # -- evaluation -------------------------------------------------------
    def _landmark_terms(self, s: State, jac: bool):
        nf = self.n_lmf
        cost = 0.0
        if jac:
            Jp = np.zeros((nf, 4, 6))
            Jl = np.zeros((nf, 4, 4))
            r = np.zeros((nf, 4))
            pose_idx = np.zeros(nf, dtype=np.int64)
            lm_idx = np.zeros(nf, dtype=np.int64)
        for kind, (order, pose, lm, pts, U, k) in self.groups.items():
            d = PARAM_DIM[kind]
            fn = line_residuals if kind == Kind.LINE else plane_residuals
            rr, jp, jl = fn(s.R[pose], s.t[pose], s.L[lm, :d], pts)
            rw = np.einsum("nij,nj->ni", U, rr)
            per = 2 if kind == Kind.LINE else 1
            norms = np.linalg.norm(rw.reshape(len(rw), -1, per), axis=2)
            cost += float(huber_cost(norms, k[:, None]).sum())
            if jac:
                sw = np.sqrt(huber_weights(norms, k[:, None]))
                sw = np.repeat(sw, per, axis=1)
                Jp[order, :d] = sw[:, :, None] * np.einsum("nij,njk->nik", U, jp)
                Jl[order, :d, :d] = sw[:, :, None] * np.einsum("nij,njk->nik", U, jl)
                r[order, :d] = sw * rw
                pose_idx[order] = self.free_of_pose[pose]
                lm_idx[order] = lm
        if jac:
            return cost, (pose_idx, lm_idx, Jp, Jl, r)
        return cost, None

    def _pose_terms(self, s: State, jac: bool):
        n = 6 * len(self.free_ids)
        cost = 0.0
        H = np.zeros((n, n)) if jac else None
        g = np.zeros(n) if jac else None

        def accumulate(rw, blocks, k):
            nonlocal cost
            norms = np.linalg.norm(rw, axis=1)
            cost += float(huber_cost(norms, k).sum())
            if not jac:
                return
            sw = np.sqrt(huber_weights(norms, k))
            rw = sw[:, None] * rw
            scaled = [(idx, sw[:, None, None] * J) for idx, J in blocks]
            for idx, J in scaled:
                fi = self.free_of_pose[idx]
                for f in np.flatnonzero(fi >= 0):
                    a = 6 * fi[f]
                    g[a : a + 6] += J[f].T @ rw[f]
                    for idx2, J2 in scaled:
                        fj = self.free_of_pose[idx2[f]]
                        if fj >= 0:
                            H[a : a + 6, 6 * fj : 6 * fj + 6] += J[f].T @ J2[f]

        if self.prior:
            rr, J = prior_residuals(s.R[self.pr_idx], s.t[self.pr_idx], self.pr_R, self.pr_t)
            rw = np.einsum("nij,nj->ni", self.pr_U, rr)
            Jw = self.pr_U @ J
            accumulate(rw, [(self.pr_idx, Jw)], self.pr_k)
        if self.between:
            a, b = self.bw_a, self.bw_b
            rr, Ja, Jb = between_residuals(s.R[a], s.t[a], s.R[b], s.t[b], self.bw_R, self.bw_t)
            rw = np.einsum("nij,nj->ni", self.bw_U, rr)
            accumulate(rw, [(a, self.bw_U @ Ja), (b, self.bw_U @ Jb)], self.bw_k)
        return cost, H, g

    def cost(self, s: State) -> float:
        c1, _ = self._landmark_terms(s, False)
        c2, _, _ = self._pose_terms(s, False)
        return c1 + c2

    def linearize(self, s: State) -> Linearization:
        c1, lm = self._landmark_terms(s, True)
        c2, H, g = self._pose_terms(s, True)
        return Linearization(c1 + c2, H, g, *lm)
