"""Frame-to-map tracking and global relocalization against a landmark map.

Tracking uses nothing but landmark kind, label and geometry, so a map read
back from a localization-only archive tracks exactly like the full map.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose, line_to_point_direction, plane_to_normal_distance, so3_exp
from .mapmodel import Keyframe, Kind, SlimMap
from .optimize.factors import huber_weights, line_residuals, plane_residuals
from .register import RegistrationConfig, register_blocks
from .vectorize import DegenerateCluster, DegenerateFit, extract_observation, init_landmark_from_observations


class TrackingLost(RuntimeError):
    pass


class NoMatch(RuntimeError):
    pass


@dataclass(frozen=True)
class TrackingGates:
    """Two association passes: a loose one at the prior, a tight one after the first solve."""

    loose_angle_deg: float = 15.0
    loose_distance: float = 2.0
    tight_angle_deg: float = 5.0
    tight_distance: float = 0.5
    huber: float = 0.1
    inlier_distance: float = 0.3
    min_inliers: int = 6
    max_mean_residual: float = 1.0
    max_iterations: int = 10
    locality_margin: float = 2.0  # observation centroid must lie within landmark radius + this


class LandmarkIndex:
    """Landmark geometry packed into arrays for vectorized gating."""

    def __init__(self, landmarks):
        lms = sorted(landmarks.values() if isinstance(landmarks, dict) else landmarks, key=lambda l: l.id)
        self.ids = {Kind.LINE: [], Kind.PLANE: []}
        self.labels = {Kind.LINE: [], Kind.PLANE: []}
        self.params = {Kind.LINE: [], Kind.PLANE: []}
        self.centroid = {Kind.LINE: [], Kind.PLANE: []}
        self.radius = {Kind.LINE: [], Kind.PLANE: []}
        for lm in lms:
            self.ids[lm.kind].append(lm.id)
            self.labels[lm.kind].append(int(lm.label))
            self.params[lm.kind].append(lm.params)
            self.centroid[lm.kind].append(lm.centroid)
            self.radius[lm.kind].append(lm.radius)
        for k in (Kind.LINE, Kind.PLANE):
            self.ids[k] = np.array(self.ids[k], dtype=np.int64)
            self.labels[k] = np.array(self.labels[k], dtype=np.int64)
            self.params[k] = np.array(self.params[k], dtype=float).reshape(-1, 4 if k == Kind.LINE else 3)
            self.centroid[k] = np.array(self.centroid[k], dtype=float).reshape(-1, 3)
            # a radius of zero means the extent is unknown and disables the locality gate
            self.radius[k] = np.array(self.radius[k], dtype=float)
        lines = [line_to_point_direction(p) for p in self.params[Kind.LINE]]
        self.line_dir = np.array([l[0] for l in lines]).reshape(-1, 3)
        self.line_pt = np.array([l[1] for l in lines]).reshape(-1, 3)
        planes = [plane_to_normal_distance(p) for p in self.params[Kind.PLANE]]
        self.plane_n = np.array([p[0] for p in planes]).reshape(-1, 3)
        self.plane_d = np.array([p[1] for p in planes], dtype=float)

    def __len__(self) -> int:
        return len(self.ids[Kind.LINE]) + len(self.ids[Kind.PLANE])

    def nearest(self, kind: Kind, label: int, pts: np.ndarray, angle_deg: float, max_dist: float,
                margin: float = np.inf) -> int:
        """Row of the closest gated landmark for world points ``pts``, or -1.

        Only landmarks whose extent (radius plus ``margin``) reaches the
        centroid of ``pts`` are candidates.
        """
        cos_gate = np.cos(np.radians(angle_deg))
        if kind == Kind.LINE:
            if not len(self.line_dir):
                return -1
            v = pts[0] - pts[1]
            v = v / np.linalg.norm(v)
            diff = pts[:, None, :] - self.line_pt[None]  # (k, M, 3)
            along = np.einsum("kmi,mi->km", diff, self.line_dir)
            perp = diff - along[..., None] * self.line_dir[None]
            dist = np.linalg.norm(perp, axis=2).mean(axis=0)
            ang = np.abs(self.line_dir @ v)
        else:
            if not len(self.plane_n):
                return -1
            v = np.cross(pts[1] - pts[0], pts[2] - pts[0])
            v = v / np.linalg.norm(v)
            dist = np.abs(pts @ self.plane_n.T + self.plane_d).mean(axis=0)
            ang = np.abs(self.plane_n @ v)
        ok = (self.labels[kind] == label) & (ang >= cos_gate) & (dist < max_dist)
        gap = np.linalg.norm(self.centroid[kind] - pts.mean(axis=0), axis=1)
        rad = self.radius[kind]
        ok &= (rad <= 0) | (gap < rad + margin)
        if not ok.any():
            return -1
        dist = np.where(ok, dist, np.inf)
        return int(np.argmin(dist))


@dataclass
class LocalizerState:
    pose: Pose
    index: LandmarkIndex
    gates: TrackingGates = TrackingGates()
    sigma: dict | None = None
    last_inliers: int = 0
    last_residual: float = 0.0
    last_seconds: float = 0.0
    history: list = field(default_factory=list)

    @classmethod
    def from_map(cls, m: SlimMap, pose: Pose, gates: TrackingGates = TrackingGates()) -> "LocalizerState":
        return cls(pose, LandmarkIndex(m.landmarks), gates)


def _associate(index: LandmarkIndex, pose: Pose, frame: list, angle: float, dist: float, margin: float = np.inf) -> dict:
    out = {Kind.LINE: ([], []), Kind.PLANE: ([], [])}
    for label, obs in frame:
        row = index.nearest(obs.kind, label, pose.apply(obs.points), angle, dist, margin)
        if row >= 0:
            out[obs.kind][0].append(obs.points)
            out[obs.kind][1].append(index.params[obs.kind][row])
    return out


def _linearize(pose: Pose, assoc: dict, huber: float):
    """Stacked residuals, Jacobians and per-point distances of the association."""
    rs, Js, ds = [], [], []
    for kind, (pts, params) in assoc.items():
        if not pts:
            continue
        pts = np.array(pts)
        params = np.array(params)
        n = len(pts)
        Rf = np.broadcast_to(pose.rotation, (n, 3, 3))
        tf = np.broadcast_to(pose.translation, (n, 3))
        fn = line_residuals if kind == Kind.LINE else plane_residuals
        r, Jp, _ = fn(Rf, tf, params, pts)
        d = np.linalg.norm(r.reshape(n, -1, 2), axis=2) if kind == Kind.LINE else np.abs(r)
        w = np.sqrt(huber_weights(np.linalg.norm(r, axis=1), huber))
        rs.append((w[:, None] * r).ravel())
        Js.append((w[:, None, None] * Jp).reshape(-1, 6))
        ds.append(d.mean(axis=1))
    if not rs:
        return np.zeros(0), np.zeros((0, 6)), np.zeros(0)
    return np.concatenate(rs), np.concatenate(Js), np.concatenate(ds)


def _retract(pose: Pose, dx: np.ndarray) -> Pose:
    return Pose(pose.rotation @ so3_exp(dx[3:]), pose.translation + dx[:3])


def solve_pose(pose: Pose, assoc: dict, huber: float, iterations: int = 10) -> tuple:
    """Levenberg-Marquardt over one pose; returns ``(pose, costs)`` with non-increasing costs."""
    r, J, _ = _linearize(pose, assoc, huber)
    cost = 0.5 * float(r @ r)
    costs = [cost]
    lam = 1e-4
    for _ in range(iterations):
        if not len(r):
            break
        H = J.T @ J
        g = J.T @ r
        dx = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-9), g)
        cand = _retract(pose, dx)
        r2, J2, _ = _linearize(cand, assoc, huber)
        c2 = 0.5 * float(r2 @ r2)
        if c2 <= cost:
            pose, r, J, cost = cand, r2, J2, c2
            costs.append(cost)
            lam = max(lam / 10.0, 1e-9)
            if np.linalg.norm(dx) < 1e-10:
                break
        else:
            lam *= 10.0
    return pose, costs


def frame_observations(clusters: list, sigma=None) -> list:
    """``(label, Observation)`` for every usable cluster of a frame."""
    out = []
    for cl in clusters:
        try:
            out.append((int(cl.label), extract_observation(cl, sigma)))
        except DegenerateCluster:
            continue
    return out


def track_frame(state: LocalizerState, clusters: list) -> Pose:
    """Register one frame to the map starting from the previous pose."""
    t0 = time.perf_counter()
    g = state.gates
    frame = frame_observations(clusters, state.sigma)
    assoc = _associate(state.index, state.pose, frame, g.loose_angle_deg, g.loose_distance, g.locality_margin)
    pose, _ = solve_pose(state.pose, assoc, max(g.huber, g.loose_distance / 2.0), g.max_iterations)
    assoc = _associate(state.index, pose, frame, g.tight_angle_deg, g.tight_distance, g.locality_margin)
    pose, _ = solve_pose(pose, assoc, g.huber, g.max_iterations)
    _, _, d = _linearize(pose, assoc, np.inf)
    inliers = int(np.sum(d < g.inlier_distance))
    mean = float(d.mean()) if len(d) else np.inf
    state.last_seconds = time.perf_counter() - t0
    state.last_inliers, state.last_residual = inliers, mean
    if inliers < g.min_inliers or mean > g.max_mean_residual or not np.all(np.isfinite(pose.translation)):
        raise TrackingLost(f"{inliers} inliers, mean residual {mean:.3f} m")
    state.pose = pose
    state.history.append(pose)
    return pose


RELOCALIZE_BLOCK_RADIUS = 35.0  # about the sensor range: map blocks the size of one scan


def relocalize(m: SlimMap, clusters: list, config=None, sigma=None) -> Pose:
    """Global pose of a frame by block registration against the whole map."""
    frame = SlimMap(sessions=[-1])
    kid = m.next_keyframe_id()
    kf = Keyframe(kid, Pose.identity(), -1, 0)
    next_lm = m.next_landmark_id()
    for label, obs in frame_observations(clusters, sigma):
        try:
            lm = init_landmark_from_observations([(kf.pose, obs)], label, next_lm)
        except DegenerateFit:
            continue
        frame.landmarks[next_lm] = lm
        kf.observations.append((next_lm, obs))
        next_lm += 1
    frame.keyframes[kid] = kf
    frame.rebuild_observers()
    # a single frame sees far fewer landmarks than a map block, so the
    # landmark-count balance check used between maps does not apply, and its
    # small cliques are worth a leave-one-out retry
    cfg = config or RegistrationConfig(count_ratio=np.inf, block_radius=RELOCALIZE_BLOCK_RADIUS, leave_one_out=True)
    cands = register_blocks(m, frame, cfg)
    if not cands:
        raise NoMatch("no block of the map matches the frame")
    best = max(cands, key=lambda c: c.inlier_count)
    if best.inlier_count < 3:
        raise NoMatch(f"only {best.inlier_count} inliers")
    return m.keyframes[best.base_kf].pose @ best.T


def pose_line(stamp: float, pose: Pose) -> str:
    """``timestamp tx ty tz qx qy qz qw`` with a scalar-last unit quaternion."""
    q = Rotation.from_matrix(pose.rotation).as_quat()
    vals = [stamp, *pose.translation, *q]
    return " ".join(f"{v:.9f}" for v in vals)
