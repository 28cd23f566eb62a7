"""Initialization-free submap-to-base registration.

Blocks of landmarks around host keyframes are matched through a
compatibility graph built on Grassmannian distances between affine
subspaces; the maximum clique seeds a robust coarse alignment which is then
refined by gated nearest-neighbour association.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, canonical_plane, skew, so3_exp
from .kernels import max_clique
from .mapmodel import Kind, Label, SlimMap
from .vectorize import AssociationGates


class EmptyMap(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class RankDeficient(RuntimeError):
    pass


class NoPairs(RuntimeError):
    pass


@dataclass(frozen=True)
class RegistrationConfig:
    block_spacing: float = 30.0
    block_radius: float = 50.0
    delta: float = 0.1
    max_correspondences: int = 2000
    correspondence_seed: int = 7
    count_ratio: float = 4.0
    huber_coarse: float = 0.5
    huber_refine: float = 0.1
    refine_iterations: int = 20
    refine_tol: float = 1e-6
    min_clique: int = 4
    # dense compatibility graphs (repetitive facades) make the exact search blow up
    clique_max_steps: int | None = 200_000
    min_inliers: int = 6
    refine_radius: float = 25.0  # sub landmarks farther from the host carry more drift
    cluster_angle_deg: float = 5.0
    cluster_distance: float = 0.2
    rank_cond: float = 1e8
    gates: AssociationGates = AssociationGates()
    # on a failed refinement, retry the coarse fit without each clique member in turn
    leave_one_out: bool = False
    # refinement restarts from the coarse pose yawed by these offsets about the sub host;
    # the start gathering the most associations wins (drifted blocks bias the coarse yaw)
    refine_yaw_deg: tuple = (0.0, -2.0, 2.0, -4.0, 4.0, -6.0, 6.0)


# ---------------------------------------------------------------------------
# entities and blocks
# ---------------------------------------------------------------------------


@dataclass
class Entity:
    """A line or a (clustered) plane in a block's host frame.

    ``direction`` is the line direction or the plane normal; ``anchor`` is a
    point on the entity (weighted centroid of its members).
    """

    kind: Kind
    label: Label
    direction: np.ndarray
    anchor: np.ndarray
    members: tuple = ()
    radius: float = 0.0

    @property
    def basis(self) -> np.ndarray:
        if self.kind == Kind.LINE:
            return self.direction.reshape(3, 1)
        return plane_basis(self.direction)

    @property
    def foot(self) -> np.ndarray:
        """Orthogonal displacement of the entity from the frame origin."""
        A = self.basis
        return self.anchor - A @ (A.T @ self.anchor)

    def distance(self, p: np.ndarray) -> np.ndarray:
        """Point-to-entity residual: scalar for planes, 3-vector for lines."""
        diff = np.asarray(p) - self.anchor
        along = diff @ self.direction
        if self.kind == Kind.PLANE:
            return along
        return diff - np.multiply.outer(along, self.direction)


@dataclass
class Block:
    host: int
    pose: Pose
    entities: list  # clustered planes followed by lines
    landmarks: list  # unclustered Entities, one per member landmark
    member_ids: list
    _pairwise: np.ndarray | None = field(default=None, repr=False)

    @property
    def pairwise(self) -> np.ndarray:
        if self._pairwise is None:
            self._pairwise = pairwise_distances(self.entities)
        return self._pairwise


def plane_basis(n: np.ndarray) -> np.ndarray:
    """Orthonormal 3x2 basis of the plane with unit normal ``n``."""
    n = np.asarray(n, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    return np.stack([e1, np.cross(n, e1)], axis=1)


def landmark_entity(lm, pose: Pose | None = None) -> Entity:
    """Entity of a landmark, optionally re-expressed in the frame of ``pose``."""
    n = lm.normal
    c = lm.centroid
    if pose is not None:
        Rt = pose.rotation.T
        n = Rt @ n
        c = Rt @ (c - pose.translation)
    return Entity(lm.kind, lm.label, n, c, (lm.id,), lm.radius)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        a, b = self.find(i), self.find(j)
        if a != b:
            self.parent[max(a, b)] = min(a, b)

    def groups(self) -> list:
        out: dict = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return list(out.values())


def cluster_coplanar_planes(planes: list, weights=None, angle_deg: float = 5.0, distance: float = 0.2) -> list:
    """Group plane Entities lying on the same infinite plane.

    Two planes join when their normals are within ``angle_deg`` and their
    offsets (after sign alignment) differ by less than ``distance``. Each group
    becomes one Entity with the weighted mean normal, offset and anchor.
    """
    n = len(planes)
    if n == 0:
        return []
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    normals = np.array([p.direction for p in planes])
    offsets = np.array([-float(p.direction @ p.anchor) for p in planes])
    cos_gate = np.cos(np.radians(angle_deg))
    uf = _UnionFind(n)
    dots = normals @ normals.T
    for i in range(n):
        for j in range(i + 1, n):
            c = dots[i, j]
            if abs(c) < cos_gate:
                continue
            s = 1.0 if c > 0 else -1.0
            if abs(offsets[i] - s * offsets[j]) < distance:
                uf.union(i, j)
    out = []
    for g in uf.groups():
        ref = normals[g[0]]
        signs = np.where(normals[g] @ ref >= 0, 1.0, -1.0)
        wg = w[g]
        nm = (wg[:, None] * signs[:, None] * normals[g]).sum(axis=0)
        nm /= np.linalg.norm(nm)
        d = float((wg * signs * offsets[g]).sum() / wg.sum())
        nm, d = canonical_plane(nm, d)
        anchor = (wg[:, None] * np.array([planes[i].anchor for i in g])).sum(axis=0) / wg.sum()
        anchor = anchor - (anchor @ nm + d) * nm
        members = tuple(m for i in g for m in planes[i].members)
        out.append(Entity(Kind.PLANE, planes[g[0]].label, nm, anchor, members, max(planes[i].radius for i in g)))
    return out


def partition_into_blocks(
    m: SlimMap, block_spacing: float = 30.0, block_radius: float = 50.0, cluster_angle_deg=5.0, cluster_distance=0.2
) -> list:
    """Greedy host selection along the trajectory and landmark gathering."""
    if not m.keyframes:
        raise EmptyMap("map has no keyframes")
    ids = m.keyframe_ids()
    pos = m.positions(ids)
    hosts: list = []
    for k, p in zip(ids, pos):
        if all(np.linalg.norm(p - m.keyframes[h].pose.translation) >= block_spacing for h in hosts):
            hosts.append(k)
    lms = sorted(m.landmarks)
    cents = np.array([m.landmarks[i].centroid for i in lms]).reshape(-1, 3)
    blocks = []
    for h in hosts:
        pose = m.keyframes[h].pose
        if len(lms):
            near = np.linalg.norm(cents - pose.translation, axis=1) < block_radius
        else:
            near = np.zeros(0, dtype=bool)
        members = [lms[i] for i in np.flatnonzero(near)]
        ents = [landmark_entity(m.landmarks[i], pose) for i in members]
        planes = [e for e in ents if e.kind == Kind.PLANE]
        lines = [e for e in ents if e.kind == Kind.LINE]
        weights = [max(len(m.landmarks[e.members[0]].observers), 1) for e in planes]
        clustered = []
        for lab in Label:
            sel = [i for i, e in enumerate(planes) if e.label == lab]
            clustered += cluster_coplanar_planes(
                [planes[i] for i in sel], [weights[i] for i in sel], cluster_angle_deg, cluster_distance
            )
        blocks.append(Block(h, pose, clustered + lines, ents, members))
    return blocks


# ---------------------------------------------------------------------------
# Grassmannian coordinates and distance
# ---------------------------------------------------------------------------


def graff_coordinate(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Embedding of the affine subspace ``span(A) + b`` as a (4, k+1) matrix.

    ``A`` is a 3xk orthonormal basis and ``b`` the displacement of the
    subspace from the origin, orthogonal to ``span(A)``.
    """
    A = np.asarray(A, dtype=float).reshape(3, -1)
    b = np.asarray(b, dtype=float).reshape(3)
    k = A.shape[1]
    s = np.sqrt(b @ b + 1.0)
    Y = np.zeros((4, k + 1))
    Y[:3, :k] = A
    Y[:3, k] = b / s
    Y[3, k] = 1.0 / s
    return Y


GRAFF_RIDGE = 1e-3


def closest_points(A1, p1, A2, p2, ridge: float | None = None):
    """Mutually closest points of two affine subspaces, pulled towards their anchors.

    A small ridge term keeps the points near ``p1`` and ``p2`` when the
    subspaces are nearly parallel, so the result varies continuously with the
    angle instead of jumping to a far-away intersection.
    """
    ridge = GRAFF_RIDGE if ridge is None else ridge
    M = np.concatenate([A1, -A2], axis=1)
    uv = np.linalg.solve(M.T @ M + ridge * np.eye(M.shape[1]), M.T @ (p2 - p1))
    k = A1.shape[1]
    return p1 + A1 @ uv[:k], p2 + A2 @ uv[k:]


def graff_distance(e1: Entity, e2: Entity) -> float:
    """Grassmannian distance between two affine subspaces of equal dimension.

    Both subspaces get Graff coordinates about a shared origin at the
    midpoint of their (ridge-regularised) closest points; the distance is the
    sum of squared principal angles between the two embeddings.
    """
    A1, A2 = e1.basis, e2.basis
    if A1.shape[1] != A2.shape[1]:
        raise DimensionMismatch(f"subspace dimensions {A1.shape[1]} and {A2.shape[1]} differ")
    x1, x2 = closest_points(A1, e1.anchor, A2, e2.anchor)
    o = 0.5 * (x1 + x2)
    b1 = (x1 - o) - A1 @ (A1.T @ (x1 - o))
    b2 = (x2 - o) - A2 @ (A2.T @ (x2 - o))
    sig = np.linalg.svd(graff_coordinate(A1, b1).T @ graff_coordinate(A2, b2), compute_uv=False)
    return float(np.sum(np.arccos(np.clip(sig, 0.0, 1.0)) ** 2))


def mixed_distance(line: Entity, plane: Entity) -> float:
    """Rigid-invariant signature of a line/plane pair.

    Squared angle between line and plane plus ``arctan(gap)^2``, where the
    gap is the separation of their regularised closest points (zero when the
    line pierces the plane near the anchors).
    """
    ang = np.arcsin(min(1.0, abs(float(line.direction @ plane.direction))))
    x1, x2 = closest_points(line.basis, line.anchor, plane.basis, plane.anchor)
    return float(ang**2 + np.arctan(np.linalg.norm(x1 - x2)) ** 2)


def pair_distance(e1: Entity, e2: Entity) -> float:
    if e1.kind == e2.kind:
        return graff_distance(e1, e2)
    if e1.kind == Kind.LINE:
        return mixed_distance(e1, e2)
    return mixed_distance(e2, e1)


def pairwise_distances(entities: list) -> np.ndarray:
    n = len(entities)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = pair_distance(entities[i], entities[j])
    return D


# ---------------------------------------------------------------------------
# correspondences and compatibility
# ---------------------------------------------------------------------------


def candidate_correspondences(base: list, sub: list, cap: int = 2000, seed: int = 7) -> np.ndarray:
    """All (base, sub) index pairs with matching kind and label, capped."""
    pairs = [
        (i, j)
        for i, eb in enumerate(base)
        for j, es in enumerate(sub)
        if eb.kind == es.kind and eb.label == es.label
    ]
    corrs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if len(corrs) > cap:
        rng = np.random.default_rng(seed)
        corrs = corrs[np.sort(rng.choice(len(corrs), cap, replace=False))]
    return corrs


def compatibility_graph(corrs: np.ndarray, D_base: np.ndarray, D_sub: np.ndarray, delta: float) -> np.ndarray:
    """Boolean adjacency: corrs i, j compatible iff their pair distances agree within delta.

    Correspondences sharing a base or a sub entity are never adjacent, which
    keeps every clique one-to-one.
    """
    k, l = corrs[:, 0], corrs[:, 1]
    adj = np.abs(D_base[np.ix_(k, k)] - D_sub[np.ix_(l, l)]) < delta
    adj &= k[:, None] != k[None, :]
    adj &= l[:, None] != l[None, :]
    np.fill_diagonal(adj, False)
    return adj


# ---------------------------------------------------------------------------
# coarse and refined alignment
# ---------------------------------------------------------------------------


def _huber_weights(e: np.ndarray, k: float) -> np.ndarray:
    a = np.abs(e)
    return np.where(a <= k, 1.0, k / np.maximum(a, 1e-300))


def _huber_cost(e: np.ndarray, k: float) -> float:
    a = np.abs(e)
    return float(np.sum(np.where(a <= k, a**2, 2.0 * k * a - k**2)))


def _rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class _PointToEntity:
    """Stacked point-to-line / point-to-plane residuals of points mapped by T."""

    def __init__(self, pts, dirs, anchors, is_line, groups):
        self.pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        self.dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
        self.anchors = np.asarray(anchors, dtype=float).reshape(-1, 3)
        self.is_line = np.asarray(is_line, dtype=bool)
        self.groups = np.asarray(groups, dtype=np.int64)  # robust-kernel grouping per point

    def evaluate(self, T: Pose):
        q = T.apply(self.pts)
        diff = q - self.anchors
        proj = np.einsum("ij,ij->i", diff, self.dirs)
        # lines: 3-row perpendicular residual; planes: 1 row (padded to 3)
        r = np.where(self.is_line[:, None], diff - proj[:, None] * self.dirs, 0.0)
        r[~self.is_line, 0] = proj[~self.is_line]
        dq = np.concatenate([np.broadcast_to(np.eye(3), (len(q), 3, 3)), -T.rotation @ skew(self.pts)], axis=2)
        P = np.eye(3) - np.einsum("ni,nj->nij", self.dirs, self.dirs)
        J = np.where(self.is_line[:, None, None], P @ dq, 0.0)
        J[~self.is_line, 0, :] = np.einsum("ni,nij->nj", self.dirs[~self.is_line], dq[~self.is_line])
        return r, J

    def group_norms(self, r: np.ndarray) -> np.ndarray:
        sq = np.zeros(self.groups.max() + 1 if len(self.groups) else 0)
        np.add.at(sq, self.groups, np.einsum("ij,ij->i", r, r))
        return np.sqrt(sq)

    def cost(self, T: Pose, k: float) -> float:
        r, _ = self.evaluate(T)
        return _huber_cost(self.group_norms(r), k)

    def normal_equations(self, T: Pose, k: float):
        r, J = self.evaluate(T)
        norms = self.group_norms(r)
        w = _huber_weights(norms, k)[self.groups]
        H = np.einsum("n,nri,nrj->ij", w, J, J)
        g = np.einsum("n,nri,nr->i", w, J, r)
        return H, g, _huber_cost(norms, k)


def _lm_pose(problem: _PointToEntity, T: Pose, k: float, iters: int = 50, tol: float = 1e-10):
    lam = 1e-4
    H, g, cost = problem.normal_equations(T, k)
    for _ in range(iters):
        A = H + lam * np.diag(np.diag(H)) + 1e-12 * np.eye(6)
        try:
            step = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            break
        cand = T.retract(step)
        c_new = problem.cost(cand, k)
        if c_new <= cost:
            rel = (cost - c_new) / max(cost, 1e-300)
            T = cand
            H, g, cost = problem.normal_equations(T, k)
            lam *= 0.5
            if rel < tol or np.linalg.norm(step) < 1e-12:
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    return T, cost, H


def _coarse_problem(base: list, sub: list, inliers) -> _PointToEntity:
    pts, dirs, anchors, is_line, groups = [], [], [], [], []
    for g, (k, l) in enumerate(inliers):
        eb, es = base[k], sub[l]
        # the foot alone leaves parallel planes without yaw leverage; the anchor lies on the same entity
        for p in (es.foot, es.anchor):
            pts.append(p)
            dirs.append(eb.direction)
            anchors.append(eb.foot)
            is_line.append(eb.kind == Kind.LINE)
            groups.append(g)
    return _PointToEntity(pts, dirs, anchors, is_line, groups)


def coarse_register(base: list, sub: list, inliers, huber: float = 0.5, rank_cond: float = 1e8) -> Pose:
    """Robust hybrid point-to-line / point-to-plane alignment.

    ``base`` and ``sub`` are Entity lists; ``inliers`` pairs their indices.
    Minimises the Huber cost over the transform mapping sub coordinates into
    base coordinates, starting from identity and from a set of yaw seeds.
    """
    inliers = np.asarray(inliers, dtype=np.int64).reshape(-1, 2)
    if len(inliers) < 3:
        raise RankDeficient("need at least three correspondences")
    prob = _coarse_problem(base, sub, inliers)
    starts = [Pose.identity()] + [Pose(_rot_z(y), np.zeros(3)) for y in np.radians(np.arange(45, 360, 45))]
    best = None
    for T0 in starts:
        # translation seeded by linear least squares at the seed rotation
        r, J = prob.evaluate(T0)
        Jt = J[:, :, :3].reshape(-1, 3)
        dt, *_ = np.linalg.lstsq(Jt, -r.reshape(-1), rcond=None)
        T0 = Pose(T0.rotation, T0.translation + dt)
        T, cost, H = _lm_pose(prob, T0, huber)
        if best is None or cost < best[1] - 1e-12:
            best = (T, cost, H)
    T, _, H = best
    ev = np.linalg.eigvalsh(H)
    if ev[0] <= 0 or ev[-1] / ev[0] > rank_cond:
        raise RankDeficient(f"alignment information is rank deficient (eigenvalues {ev[0]:.3g}..{ev[-1]:.3g})")
    return T


def _sample_points(e: Entity) -> np.ndarray:
    h = 0.5 * min(max(e.radius, 1.0), 5.0)
    if e.kind == Kind.LINE:
        return np.stack([e.anchor + h * e.direction, e.anchor - h * e.direction])
    B = plane_basis(e.direction)
    return np.stack([e.anchor, e.anchor + h * B[:, 0], e.anchor + h * B[:, 1]])


def associate_entities(base: list, sub: list, T: Pose, gates: AssociationGates, tree=None) -> list:
    """Gated nearest-centroid pairs (base index, sub index) for sub mapped by T."""
    if not base or not sub:
        return []
    if tree is None:
        tree = cKDTree(np.array([e.anchor for e in base]))
    cos_gate = np.cos(np.radians(gates.angle_deg))
    pairs = []
    for j, es in enumerate(sub):
        c = T.apply(es.anchor)
        v = T.rotation @ es.direction
        best, best_d = None, np.inf
        for i in tree.query_ball_point(c, gates.radius):
            eb = base[i]
            if eb.kind != es.kind or eb.label != es.label:
                continue
            if abs(float(v @ eb.direction)) < cos_gate:
                continue
            off = eb.distance(c)
            if eb.kind == Kind.PLANE:
                if abs(off) >= gates.plane_distance:
                    continue
            elif np.linalg.norm(off) >= gates.line_distance:
                continue
            d = float(np.linalg.norm(c - eb.anchor))
            if d < best_d:
                best, best_d = i, d
        if best is not None:
            pairs.append((best, j))
    return pairs


def refine_register(
    base: list, sub: list, T_init: Pose, gates: AssociationGates = AssociationGates(),
    huber: float = 0.1, max_iter: int = 20, tol: float = 1e-6,
):
    """Iterated gated association and robust point-to-landmark minimisation.

    ``base`` and ``sub`` are unclustered landmark Entities in their block
    frames. Returns ``(T, pairs)``.
    """
    tree = cKDTree(np.array([e.anchor for e in base])) if base else None
    T = T_init
    pairs: list = []
    samples = [_sample_points(e) for e in sub]
    for _ in range(max_iter):
        pairs = associate_entities(base, sub, T, gates, tree)
        if len(pairs) < 3:
            raise NoPairs(f"only {len(pairs)} associations")
        pts, dirs, anchors, is_line, groups = [], [], [], [], []
        for g, (i, j) in enumerate(pairs):
            for p in samples[j]:
                pts.append(p)
                dirs.append(base[i].direction)
                anchors.append(base[i].anchor)
                is_line.append(base[i].kind == Kind.LINE)
                groups.append(g)
        prob = _PointToEntity(pts, dirs, anchors, is_line, groups)
        H, g, _ = prob.normal_equations(T, huber)
        try:
            step = np.linalg.solve(H + 1e-9 * np.eye(6), -g)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient("refinement system is singular") from exc
        T = T.retract(step)
        if np.linalg.norm(step) < tol:
            break
    return T, pairs


# ---------------------------------------------------------------------------
# block-pair driver
# ---------------------------------------------------------------------------


@dataclass
class LoopCandidate:
    base_kf: int
    sub_kf: int
    T: Pose  # pose of the sub host keyframe in the base host frame
    inlier_count: int


def refine_multistart(base: list, sub: list, T0: Pose, cfg: RegistrationConfig = RegistrationConfig()):
    """Refine from ``T0`` yawed by each of ``cfg.refine_yaw_deg``; ``(T, pairs)`` with most pairs, or None."""
    best = None
    for yaw in cfg.refine_yaw_deg:
        start = T0 @ Pose(so3_exp(np.array([0.0, 0.0, np.radians(yaw)])), np.zeros(3))
        try:
            T, pairs = refine_register(base, sub, start, cfg.gates, cfg.huber_refine, cfg.refine_iterations, cfg.refine_tol)
        except (RankDeficient, NoPairs):
            continue
        if len(pairs) >= cfg.min_inliers and (best is None or len(pairs) > len(best[1])):
            best = (T, pairs)
    return best


def _coarse_then_refine(bb: Block, sb: Block, inliers, near: list, cfg: RegistrationConfig):
    try:
        T0 = coarse_register(bb.entities, sb.entities, inliers, cfg.huber_coarse, cfg.rank_cond)
    except RankDeficient:
        return None
    return refine_multistart(bb.landmarks, near, T0, cfg)


def register_block_pair(bb: Block, sb: Block, cfg: RegistrationConfig = RegistrationConfig()):
    """Full pipeline for one block pair; returns a LoopCandidate or None."""
    corrs = candidate_correspondences(bb.entities, sb.entities, cfg.max_correspondences, cfg.correspondence_seed)
    if len(corrs) < cfg.min_clique:
        return None
    adj = compatibility_graph(corrs, bb.pairwise, sb.pairwise, cfg.delta)
    clique = max_clique(adj, max_steps=cfg.clique_max_steps)
    if len(clique) < cfg.min_clique:
        return None
    near = [e for e in sb.landmarks if np.linalg.norm(e.anchor) < cfg.refine_radius]
    best = _coarse_then_refine(bb, sb, corrs[clique], near, cfg)
    if best is None and cfg.leave_one_out and len(clique) > cfg.min_clique:
        trials = (_coarse_then_refine(bb, sb, np.delete(corrs[clique], i, axis=0), near, cfg) for i in range(len(clique)))
        best = max(filter(None, trials), key=lambda tp: len(tp[1]), default=None)
    if best is None:
        return None
    T, pairs = best
    return LoopCandidate(bb.host, sb.host, T, len(pairs))


def register_blocks(base: SlimMap, sub: SlimMap, cfg: RegistrationConfig = RegistrationConfig(), threads: int = 1):
    """Candidate relative poses between every gated pair of base and sub blocks."""
    bblocks = partition_into_blocks(base, cfg.block_spacing, cfg.block_radius, cfg.cluster_angle_deg, cfg.cluster_distance)
    sblocks = partition_into_blocks(sub, cfg.block_spacing, cfg.block_radius, cfg.cluster_angle_deg, cfg.cluster_distance)
    jobs = []
    for bb in bblocks:
        for sb in sblocks:
            nb, ns = len(bb.member_ids), len(sb.member_ids)
            if nb == 0 or ns == 0 or not (1.0 / cfg.count_ratio <= nb / ns <= cfg.count_ratio):
                continue
            jobs.append((bb, sb))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda j: register_block_pair(j[0], j[1], cfg), jobs))
    else:
        results = [register_block_pair(bb, sb, cfg) for bb, sb in jobs]
    return [r for r in results if r is not None]
