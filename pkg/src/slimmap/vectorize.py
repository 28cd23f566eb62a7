"""Point clusters to line/plane observations and landmarks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    Pose,
    canonical_plane,
    line_from_point_direction,
    plane_from_normal_distance,
)
from .mapmodel import Keyframe, Kind, Label, Landmark, Observation, OdometryFactor, SlimMap

DEFAULT_SIGMA = {Label.ROAD: 0.1, Label.BUILDING: 0.2, Label.POLE: 0.3}


class DegenerateCluster(ValueError):
    pass


class DegenerateFit(ValueError):
    pass


@dataclass
class PointCluster:
    points: np.ndarray
    label: Label
    kind: Kind

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.label = Label(self.label)
        self.kind = Kind(self.kind)


@dataclass(frozen=True)
class AssociationGates:
    radius: float = 3.0
    angle_deg: float = 5.0
    plane_distance: float = 0.2
    line_distance: float = 1.0


def pca_decompose(points: np.ndarray):
    """Population-covariance PCA.

    Returns ``(centroid, eigvals, eigvecs)`` with eigenvalues ascending and
    eigenvectors as the columns of a right-handed rotation.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        raise DegenerateCluster("need at least two points")
    centroid = pts.mean(axis=0)
    diff = pts - centroid
    cov = diff.T @ diff / len(pts)
    if not np.all(np.isfinite(cov)):
        raise DegenerateCluster("non-finite covariance")
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] <= 1e-15:
        raise DegenerateCluster("all points coincide")
    vals = np.clip(vals, 0.0, None)
    if np.linalg.det(vecs) < 0:
        vecs[:, 0] = -vecs[:, 0]
    return centroid, vals, vecs


def extract_line_observation(cluster: PointCluster, sigma=None) -> Observation:
    sigma = DEFAULT_SIGMA if sigma is None else sigma
    c, vals, vecs = pca_decompose(cluster.points)
    if vals[2] <= 1e-12:
        raise DegenerateCluster("line cluster has no spread")
    offset = np.sqrt(2.0 * vals[2]) * vecs[:, 2]
    n = len(cluster.points)
    return Observation(
        Kind.LINE,
        np.stack([c + offset, c - offset]),
        np.sqrt(n / 2.0) / sigma[cluster.label],
        n,
    )


def extract_plane_observation(cluster: PointCluster, sigma=None) -> Observation:
    sigma = DEFAULT_SIGMA if sigma is None else sigma
    c, vals, vecs = pca_decompose(cluster.points)
    if vals[1] <= 1e-12:
        raise DegenerateCluster("plane cluster is collinear")
    # in-plane axes: v3 (major) and v2 (minor); v1 is the normal
    v2, v3 = vecs[:, 1], vecs[:, 2]
    a = np.sqrt(vals[2] / 2.0) * v3
    b = np.sqrt(vals[1] / 2.0) * v2
    n = len(cluster.points)
    pts = np.stack([c + np.sqrt(2.0 * vals[2]) * v3, c - a + b, c - a - b])
    return Observation(Kind.PLANE, pts, np.sqrt(n / 3.0) / sigma[cluster.label], n)


def extract_observation(cluster: PointCluster, sigma=None) -> Observation:
    if cluster.kind == Kind.LINE:
        return extract_line_observation(cluster, sigma)
    return extract_plane_observation(cluster, sigma)


def classify_ground(points: np.ndarray, min_vertical: float = 0.95, inlier_dist: float = 0.2):
    """Minimal ground classifier for unlabeled scans.

    Fits the dominant plane through the lowest points and returns a boolean
    mask of points within ``inlier_dist`` of it when its normal is close to
    vertical, otherwise an all-False mask.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        return np.zeros(len(pts), dtype=bool)
    low = pts[pts[:, 2] <= np.quantile(pts[:, 2], 0.3)]
    if len(low) < 3:
        return np.zeros(len(pts), dtype=bool)
    c, _, vecs = pca_decompose(low)
    n = vecs[:, 0]
    if abs(n[2]) < min_vertical:
        return np.zeros(len(pts), dtype=bool)
    return np.abs((pts - c) @ n) < inlier_dist


def observation_frame(obs: Observation, pose: Pose):
    """World-frame points, centroid and direction/normal of an observation."""
    pts = pose.apply(obs.points)
    c = pts.mean(axis=0)
    if obs.kind == Kind.LINE:
        v = pts[0] - pts[1]
    else:
        v = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        raise DegenerateCluster("observation points are degenerate")
    return pts, c, v / norm


def fit_geometry(points: np.ndarray, weights: np.ndarray, kind: Kind):
    """Weighted total least squares fit; returns ``(params, centroid)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    w = np.asarray(weights, dtype=float).reshape(-1)
    c = (w[:, None] * pts).sum(axis=0) / w.sum()
    diff = pts - c
    scatter = (w[:, None] * diff).T @ diff / w.sum()
    vals, vecs = np.linalg.eigh(scatter)
    scale = max(vals[-1], 1e-300)
    if kind == Kind.LINE:
        if vals[-1] <= 1e-18:
            raise DegenerateFit("line fit needs two distinct points")
        return np.array(line_from_point_direction((vecs[:, 2], c))), c
    if vals[1] <= 1e-12 * scale or vals[1] <= 1e-18:
        raise DegenerateFit("plane fit needs non-collinear points")
    n, d = canonical_plane(vecs[:, 0], -float(vecs[:, 0] @ c))
    return np.array(plane_from_normal_distance((n, d))), c


def init_landmark_from_observations(
    obs: list, label: Label = Label.BUILDING, landmark_id: int = 0, extra=None
) -> Landmark:
    """Fit a landmark to ``[(pose, Observation), ...]``.

    ``extra`` may carry additional ``(world_points, weight)`` pairs, e.g. the
    synthesised points of a recovered factor.
    """
    if not obs and not extra:
        raise DegenerateFit("no observations")
    kind = obs[0][1].kind if obs else extra[0][2]
    pts, wts = [], []
    for pose, o in obs:
        pts.append(pose.apply(o.points))
        wts.append(np.full(len(o.points), o.sqrt_info**2))
    for item in extra or ():
        p, w = item[0], item[1]
        pts.append(np.asarray(p, dtype=float).reshape(-1, 3))
        wts.append(np.full(len(pts[-1]), w))
    allp = np.concatenate(pts)
    allw = np.concatenate(wts)
    params, c = fit_geometry(allp, allw, kind)
    lm = Landmark(landmark_id, kind, label, params, c)
    lm.centroid = lm.project(c)
    lm.radius = max(0.5, float(np.max(np.linalg.norm(allp - lm.centroid, axis=1))))
    return lm


def gate_landmark(lm: Landmark, c: np.ndarray, v: np.ndarray, gates: AssociationGates) -> float | None:
    """Centroid distance if ``(c, v)`` passes every gate for ``lm``, else None."""
    dist = float(np.linalg.norm(c - lm.centroid))
    if dist >= gates.radius:
        return None
    if abs(float(v @ lm.normal)) < np.cos(np.radians(gates.angle_deg)):
        return None
    if lm.kind == Kind.PLANE:
        n, d = lm.point_normal()
        if abs(float(c @ n + d)) >= gates.plane_distance:
            return None
    else:
        n, q = lm.point_normal()
        diff = c - q
        if np.linalg.norm(diff - (diff @ n) * n) >= gates.line_distance:
            return None
    return dist


def associate_observation(landmarks, pose: Pose, obs: Observation, gates=AssociationGates(), label=None):
    """Nearest gated landmark id of the same kind (and label, if given), or None."""
    _, c, v = observation_frame(obs, pose)
    best, best_d = None, np.inf
    for lm in landmarks.values() if isinstance(landmarks, dict) else landmarks:
        if lm.kind != obs.kind or (label is not None and lm.label != label):
            continue
        d = gate_landmark(lm, c, v, gates)
        if d is not None and d < best_d:
            best, best_d = lm.id, d
    return best


def odometry_sqrt_info(step_length: float, sigma_rot_per_m: float, sigma_trans_per_m: float,
                       floor: float = 1e-3) -> np.ndarray:
    """Diagonal square-root information of one odometry step from drift rates."""
    st = max(sigma_trans_per_m * step_length, floor)
    sr = max(sigma_rot_per_m * step_length, floor * 1e-1)
    return np.diag([1.0 / st] * 3 + [1.0 / sr] * 3)


def build_submap(
    session: int,
    odometry_poses: list,
    clusters: list,
    *,
    sigma=None,
    gates=AssociationGates(),
    drift=(np.radians(0.05), 0.01),
    first_keyframe_id: int = 0,
    first_landmark_id: int = 0,
) -> SlimMap:
    """Vectorize one session into a submap in its own odometry frame.

    ``clusters[i]`` is the list of PointClusters seen at keyframe ``i``.
    """
    m = SlimMap(sessions=[session])
    refs: dict = {}
    next_lm = first_landmark_id
    prev = None
    for i, (pose, frame) in enumerate(zip(odometry_poses, clusters)):
        kid = first_keyframe_id + i
        kf = Keyframe(kid, pose, session, index=i)
        m.keyframes[kid] = kf
        if prev is not None:
            rel = prev.pose.inverse() @ pose
            step = float(np.linalg.norm(rel.translation))
            m.odometry.append(
                OdometryFactor(prev.id, kid, rel, odometry_sqrt_info(step, drift[0], drift[1]))
            )
        prev = kf
        for cl in frame:
            try:
                obs = extract_observation(cl, sigma)
            except DegenerateCluster:
                continue
            lid = associate_observation(m.landmarks, pose, obs, gates, label=cl.label)
            if lid is None:
                lid = next_lm
                next_lm += 1
                refs[lid] = []
                label = cl.label
            else:
                label = m.landmarks[lid].label
            refs[lid].append((pose, obs))
            kf.observations.append((lid, obs))
            try:
                lm = init_landmark_from_observations(refs[lid], label, lid)
            except DegenerateFit:
                if lid in m.landmarks:
                    continue
                kf.observations.pop()
                refs.pop(lid)
                continue
            lm.observers = (m.landmarks[lid].observers if lid in m.landmarks else set()) | {kid}
            m.landmarks[lid] = lm
    return m
