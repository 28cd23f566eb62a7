"""Deterministic synthetic city and multi-session drive simulator.

The world is a square road grid with flat road tiles, box buildings whose
facades are split into panels, and vertical poles along the sidewalks. A
landmark is seen from a keyframe when its centre is within sensor range (and,
for facades, the sensor is on the outer side); its points are sampled over
the whole patch and perturbed by isotropic Gaussian noise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .binio import FormatError, Reader, Writer
from .geometry import Pose, so3_exp
from .mapmodel import Kind, Label
from .vectorize import PointCluster


class TooFewPoses(ValueError):
    pass


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    extent: float = 80.0  # side of the square road grid, metres
    grid_spacing: float = 40.0
    road_width: float = 10.0
    tile_size: float = 10.0
    building_size: tuple = (9.0, 14.0)
    building_height: tuple = (8.0, 16.0)
    building_yaw_deg: tuple = (30.0, 60.0)
    building_ring: int = 1  # city blocks added outside the grid on every side
    panel_width: float = 12.0
    pole_density: float = 3.0  # poles per 100 m of road
    pole_height: float = 6.0
    sessions: int = 10
    keyframe_spacing: float = 5.0
    sigma_obs: float = 0.05
    drift_rot_deg_per_m: float = 0.05
    drift_trans_per_m: float = 0.01
    sensor_range: float = 30.0
    sensor_height: float = 1.8
    point_density: float = 0.5  # points per square metre of patch
    min_points: int = 24
    max_points: int = 120
    frame_yaw_deg: float = 20.0
    frame_shift: float = 50.0
    turn_radius: float = 6.0
    buildings: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown world keys: {sorted(unknown)}")
        vals = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        spec = cls(**vals)
        spec.validate()
        return spec

    def validate(self) -> None:
        for name in ("sigma_obs", "drift_rot_deg_per_m", "drift_trans_per_m"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("extent", "grid_spacing", "keyframe_spacing", "sensor_range"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrueLandmark:
    id: int
    kind: Kind
    label: Label
    center: np.ndarray
    normal: np.ndarray  # plane normal (outward for facades) or line direction
    axes: np.ndarray  # (2, 3) in-plane half-extent vectors; (1, 3) half-length vector for lines

    @property
    def area(self) -> float:
        if self.kind == Kind.LINE:
            return 2.0 * float(np.linalg.norm(self.axes[0]))
        return 4.0 * float(np.linalg.norm(self.axes[0]) * np.linalg.norm(self.axes[1]))

    def distance(self, pts: np.ndarray) -> np.ndarray:
        diff = np.asarray(pts) - self.center
        if self.kind == Kind.PLANE:
            return np.abs(diff @ self.normal)
        along = diff @ self.normal
        return np.linalg.norm(diff - np.outer(along, self.normal), axis=1)


@dataclass
class World:
    spec: WorldSpec
    landmarks: list
    road_length: float

    def digest(self) -> str:
        h = hashlib.sha256()
        for lm in self.landmarks:
            h.update(np.array([lm.id, lm.kind, lm.label], dtype=np.int64).tobytes())
            h.update(np.concatenate([lm.center, lm.normal, lm.axes.ravel()]).tobytes())
        return h.hexdigest()


@dataclass
class SessionData:
    session: int
    truth: list  # true keyframe poses (world frame)
    odometry: list  # drifting odometry poses in the session frame
    clusters: list  # per keyframe: list of PointCluster
    sources: list  # per keyframe: true landmark id of each cluster
    frame: Pose = field(default_factory=Pose.identity)  # world <- session frame


# ---------------------------------------------------------------------------
# world
# ---------------------------------------------------------------------------


def _rz(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _grid_lines(spec: WorldSpec) -> np.ndarray:
    n = int(round(spec.extent / spec.grid_spacing))
    return np.arange(n + 1) * spec.grid_spacing


def generate_world(spec: WorldSpec) -> World:
    """Road tiles, building facade panels and poles, reproducible from ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    lines = _grid_lines(spec)
    lms: list = []

    def add(kind, label, center, normal, axes):
        lms.append(TrueLandmark(len(lms), kind, label, np.asarray(center, float), np.asarray(normal, float),
                                np.asarray(axes, float).reshape(-1, 3)))

    # road tiles centred on the centre lines
    hw = 0.5 * spec.tile_size
    centres = set()
    steps = np.arange(0.0, spec.extent + 1e-9, spec.tile_size)
    for g in lines:
        for s in steps:
            centres.add((round(float(s), 6), round(float(g), 6)))
            centres.add((round(float(g), 6), round(float(s), 6)))
    for cx, cy in sorted(centres):
        add(Kind.PLANE, Label.ROAD, (cx, cy, 0.0), (0.0, 0.0, 1.0), [(hw, 0, 0), (0, hw, 0)])

    # one box building per city block, blocks extend one ring outside the grid
    free = 0.5 * spec.grid_spacing - 0.5 * spec.road_width - 2.0
    ring = spec.building_ring
    blocks = range(-ring, len(lines) - 1 + ring) if spec.buildings else range(0)
    for i in blocks:
        for j in range(-ring, len(lines) - 1 + ring):
            cx = (i + 0.5) * spec.grid_spacing
            cy = (j + 0.5) * spec.grid_spacing
            yaw = np.radians(rng.uniform(*spec.building_yaw_deg))
            w, l = rng.uniform(*spec.building_size, size=2)
            c, s = abs(np.cos(yaw)), abs(np.sin(yaw))
            scale = min(1.0, 2.0 * free / max(w * c + l * s, w * s + l * c))
            w, l = w * scale, l * scale
            h = rng.uniform(*spec.building_height)
            jitter = rng.uniform(-1.0, 1.0, size=2) * max(0.0, free - 0.5 * max(w, l))
            R = _rz(yaw)
            ctr = np.array([cx + jitter[0], cy + jitter[1], 0.0])
            for axis, half, width in ((0, 0.5 * w, l), (0, -0.5 * w, l), (1, 0.5 * l, w), (1, -0.5 * l, w)):
                n = R[:, axis] * np.sign(half)
                along = R[:, 1 - axis]
                n_panels = max(1, int(np.ceil(width / spec.panel_width)))
                pw = width / n_panels
                for p in range(n_panels):
                    off = (p + 0.5) * pw - 0.5 * width
                    centre = ctr + abs(half) * n + off * along + np.array([0.0, 0.0, 0.5 * h])
                    add(Kind.PLANE, Label.BUILDING, centre, n, [0.5 * pw * along, (0.0, 0.0, 0.5 * h)])

    # poles on both sidewalks, away from intersections
    road_length = 0.0
    side = 0.5 * spec.road_width + 1.0
    for g in lines:
        for horizontal in (True, False):
            for a, b in zip(lines[:-1], lines[1:]):
                seg = b - a
                road_length += seg
                count = rng.poisson(spec.pole_density * seg / 100.0)
                for _ in range(count):
                    t = rng.uniform(a + side + 1.0, b - side - 1.0)
                    off = side * rng.choice([-1.0, 1.0])
                    x, y = (t, g + off) if horizontal else (g + off, t)
                    add(Kind.LINE, Label.POLE, (x, y, 0.5 * spec.pole_height), (0.0, 0.0, 1.0),
                        [(0.0, 0.0, 0.5 * spec.pole_height)])
    return World(spec, lms, road_length)


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------


def _route(spec: WorldSpec, pattern: str, rng: np.random.Generator) -> np.ndarray:
    """Polyline of grid intersections for a lawnmower or loop drive."""
    lines = _grid_lines(spec)
    n = len(lines)
    if pattern == "loop":
        i0, j0 = 0, 0
        i1, j1 = n - 1, n - 1
        if n > 2 and rng.random() < 0.5:
            i0, j0 = rng.integers(0, n - 1, size=2)
            i1, j1 = i0 + 1 + rng.integers(0, n - 1 - i0), j0 + 1 + rng.integers(0, n - 1 - j0)
        nodes = [(i0, j0), (i1, j0), (i1, j1), (i0, j1), (i0, j0)]
    else:
        nodes = []
        for r in range(n):
            row = [(c, r) for c in range(n)]
            nodes += row if r % 2 == 0 else row[::-1]
        if pattern == "lawnmower_v":
            nodes = [(b, a) for a, b in nodes]
    pts = np.array([(lines[i], lines[j]) for i, j in nodes], dtype=float)
    if rng.random() < 0.5:
        pts = pts[::-1]
    # random mirror keeps the pattern but varies the start corner
    if rng.random() < 0.5:
        pts[:, 0] = spec.extent - pts[:, 0]
    if rng.random() < 0.5 and pattern == "loop" and np.allclose(pts[0], pts[-1]):
        k = int(rng.integers(0, len(pts) - 1))
        pts = np.concatenate([pts[k:-1], pts[: k + 1]])
    return pts


def _fillet(pts: np.ndarray, radius: float, step: float = 0.25) -> np.ndarray:
    """Replace every polyline corner with a circular arc of ``radius``."""
    out = [pts[0]]
    for p0, p, p1 in zip(pts[:-2], pts[1:-1], pts[2:]):
        u1 = (p - p0) / np.linalg.norm(p - p0)
        u2 = (p1 - p) / np.linalg.norm(p1 - p)
        theta = float(np.arccos(np.clip(u1 @ u2, -1.0, 1.0)))
        cut = radius * np.tan(theta / 2.0)
        if theta < 1e-6 or radius <= 0 or cut > 0.5 * min(np.linalg.norm(p - p0), np.linalg.norm(p1 - p)):
            out.append(p)
            continue
        turn = np.sign(u1[0] * u2[1] - u1[1] * u2[0])
        left = np.array([-u1[1], u1[0]]) * turn
        centre = p - cut * u1 + radius * left
        a0 = np.arctan2(*(p - cut * u1 - centre)[::-1])
        n = max(2, int(np.ceil(theta * radius / step)))
        ang = a0 + turn * np.linspace(0.0, theta, n)
        out.extend(centre + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1))
    out.append(pts[-1])
    return np.array(out)


def _sample_route(pts: np.ndarray, spacing: float, height: float, radius: float = 0.0) -> list:
    """Poses every ``spacing`` metres of arc length, heading along the path."""
    path = _fillet(np.asarray(pts, dtype=float), radius)
    seg = np.diff(path, axis=0)
    keep = np.linalg.norm(seg, axis=1) > 1e-9
    seg = seg[keep]
    start = np.cumsum(np.concatenate([[0.0], np.linalg.norm(seg, axis=1)]))
    s = np.arange(0.0, start[-1] + 1e-9, spacing)
    if start[-1] - s[-1] > 1e-6:
        s = np.append(s, start[-1])
    idx = np.clip(np.searchsorted(start, s, side="right") - 1, 0, len(seg) - 1)
    base = path[:-1][keep]
    xy = base[idx] + seg[idx] * ((s - start[idx]) / np.linalg.norm(seg[idx], axis=1))[:, None]
    yaw = np.arctan2(seg[idx, 1], seg[idx, 0])
    return [Pose(_rz(a), np.array([x, y, height])) for (x, y), a in zip(xy, yaw)]


def session_pattern(spec: WorldSpec, session: int, rng: np.random.Generator) -> str:
    fixed = ["lawnmower_h", "lawnmower_v", "loop"]
    if session < len(fixed):
        return fixed[session]
    return str(rng.choice(fixed))


def _sample_patch(lm: TrueLandmark, n: int, rng: np.random.Generator) -> np.ndarray:
    if lm.kind == Kind.LINE:
        u = rng.uniform(-1.0, 1.0, size=(n, 1))
        return lm.center + u * lm.axes[0]
    u = rng.uniform(-1.0, 1.0, size=(n, 2))
    return lm.center + u[:, :1] * lm.axes[0] + u[:, 1:] * lm.axes[1]


def visible_landmarks(world: World, pose: Pose) -> list:
    spec = world.spec
    p = pose.translation
    out = []
    for lm in world.landmarks:
        if np.linalg.norm(lm.center - p) > spec.sensor_range:
            continue
        if lm.label == Label.BUILDING and float((p - lm.center) @ lm.normal) < 0.5:
            continue
        out.append(lm.id)
    return out


def simulate_session(world: World, session: int, pattern: str | None = None,
                     spacing: float | None = None) -> SessionData:
    """Truth trajectory, drifting odometry and labelled clusters for one session.

    ``spacing`` overrides the keyframe spacing, e.g. for dense replay frames.
    """
    spec = world.spec
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1, session]))
    pattern = pattern or session_pattern(spec, session, rng)
    spacing = spec.keyframe_spacing if spacing is None else spacing
    truth = _sample_route(_route(spec, pattern, rng), spacing, spec.sensor_height, spec.turn_radius)
    yaw = np.radians(rng.uniform(-spec.frame_yaw_deg, spec.frame_yaw_deg))
    shift = np.append(rng.uniform(-spec.frame_shift, spec.frame_shift, size=2), 0.0)
    frame = Pose(_rz(yaw), shift)
    odom = [frame.inverse() @ truth[0]]
    sr = np.radians(spec.drift_rot_deg_per_m)
    for a, b in zip(truth[:-1], truth[1:]):
        rel = a.inverse() @ b
        L = float(np.linalg.norm(rel.translation))
        noisy = Pose(rel.rotation @ so3_exp(rng.normal(0.0, sr * L, 3)), rel.translation + rng.normal(0.0, spec.drift_trans_per_m * L, 3))
        odom.append(odom[-1] @ noisy)
    by_id = world.landmarks
    clusters, sources = [], []
    for pose in truth:
        frame_clusters, frame_src = [], []
        for lid in visible_landmarks(world, pose):
            lm = by_id[lid]
            rng_dist = float(np.linalg.norm(lm.center - pose.translation))
            n = spec.point_density * lm.area * (1.0 - 0.5 * rng_dist / spec.sensor_range)
            if lm.kind == Kind.LINE:
                n *= 4.0
            n = int(np.clip(n, spec.min_points, spec.max_points))
            pts = _sample_patch(lm, n, rng) + rng.normal(0.0, spec.sigma_obs, size=(n, 3))
            frame_clusters.append(PointCluster(pose.inverse().apply(pts), lm.label, lm.kind))
            frame_src.append(lid)
        clusters.append(frame_clusters)
        sources.append(frame_src)
    return SessionData(session, truth, odom, clusters, sources, frame)


def simulate_sessions(world: World, count: int | None = None) -> list:
    count = world.spec.sessions if count is None else count
    return [simulate_session(world, s) for s in range(count)]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def rigid_align(src: np.ndarray, dst: np.ndarray):
    """Rotation R and translation t minimising ``|R src + t - dst|^2`` (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - md).T @ (src - ms)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(len(C))
    S[-1, -1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ S @ Vt
    return R, md - R @ ms


def evaluate_ate(estimated, truth, mode: str = "SE3") -> float:
    """RMSE of translations after rigid alignment; ``mode`` is ``SE3`` or ``xy``."""
    est = np.array([p.translation if isinstance(p, Pose) else p for p in estimated], dtype=float).reshape(-1, 3)
    gt = np.array([p.translation if isinstance(p, Pose) else p for p in truth], dtype=float).reshape(-1, 3)
    if len(est) != len(gt):
        raise ValueError("estimated and true trajectories differ in length")
    if len(est) < 3:
        raise TooFewPoses(f"need at least 3 poses, got {len(est)}")
    if mode == "xy":
        est, gt = est[:, :2], gt[:, :2]
    elif mode != "SE3":
        raise ValueError(f"unknown ATE mode {mode!r}")
    R, t = rigid_align(est, gt)
    err = est @ R.T + t - gt
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


# ---------------------------------------------------------------------------
# small random maps for unit tests and oracles
# ---------------------------------------------------------------------------


def toy_map(rng: np.random.Generator, n_keyframes: int = 6, n_landmarks: int = 5, noise: float = 0.0,
            spacing: float = 4.0, min_observers: int = 2, observer_pool=None):
    """A random, well-posed map: a wiggly keyframe chain observing lines and planes.

    Every landmark is seen by at least ``min_observers`` nearby keyframes and
    consecutive keyframes share an odometry factor, so bundle adjustment on
    the result is well-posed. With ``observer_pool`` each landmark is instead
    seen by exactly one keyframe drawn from the pool and sits within a metre
    or so of it, which makes the whole factor graph a tree.
    """
    from .geometry import line_from_point_direction, plane_from_normal_distance
    from .mapmodel import Keyframe, Landmark, Observation, OdometryFactor, SlimMap
    from .register import plane_basis
    from .vectorize import odometry_sqrt_info

    m = SlimMap(sessions=[0])
    pose = Pose.identity()
    for k in range(n_keyframes):
        m.keyframes[k] = Keyframe(k, pose, 0, k)
        step = Pose.from_rotvec(rng.normal(0, [0.02, 0.02, 0.2]), [spacing, rng.normal(0, 0.3), rng.normal(0, 0.1)])
        if k + 1 < n_keyframes:
            m.odometry.append(OdometryFactor(k, k + 1, step, odometry_sqrt_info(spacing, np.radians(0.05), 0.01)))
        pose = pose @ step
    pos = m.positions()
    for lid in range(n_landmarks):
        kind = Kind.LINE if rng.random() < 0.5 else Kind.PLANE
        if observer_pool is None:
            anchor = int(rng.integers(n_keyframes))
            c = pos[anchor] + rng.uniform(-6, 6, 3)
        else:
            anchor = int(rng.choice(observer_pool))
            c = pos[anchor] + rng.uniform(-1, 1, 3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        if kind == Kind.LINE:
            params = line_from_point_direction((axis, c))
        else:
            params = plane_from_normal_distance((axis, -axis @ c))
        label = Label(int(rng.integers(3)))
        lm = Landmark(lid, kind, label, params, c, 3.0)
        m.landmarks[lid] = lm
        order = np.argsort(np.linalg.norm(pos - c, axis=1), kind="stable")
        count = min(n_keyframes, min_observers + int(rng.integers(2)))
        chosen = [anchor] if observer_pool is not None else sorted(order[:count].tolist())
        for k in chosen:
            kf = m.keyframes[k]
            if lm.kind == Kind.LINE:
                v, q = lm.point_normal()
                t = rng.uniform(-3, 3, 2)
                t[1] = t[0] + np.sign(rng.random() - 0.5) * rng.uniform(1.5, 3)
                pts = q + t[:, None] * v
            else:
                B = plane_basis(lm.normal)
                uv = rng.uniform(-3, 3, (3, 2))
                uv[1] = uv[0] + [2.0, 0.0]
                uv[2] = uv[0] + [0.0, 2.0]
                pts = lm.project(c) + uv @ B.T
            pts = pts + rng.normal(0, noise, pts.shape)
            obs = Observation(kind, kf.pose.inverse().apply(pts), 1.0 / 0.1, 20)
            kf.observations.append((lid, obs))
    m.rebuild_observers()
    return m


# ---------------------------------------------------------------------------
# interchange files
# ---------------------------------------------------------------------------

FILE_VERSION = 1
ODOMETRY, CLUSTERS, TRUTH = 2, 3, 4


def _write_bytes(path: Path, data: bytes) -> None:
    from .mapstore import IoFailure

    try:
        path.write_bytes(data)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e.strerror}") from e


def _read_bytes(path: Path, kind: int) -> Reader:
    from .mapstore import IoFailure

    try:
        r = Reader(path.read_bytes())
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e.strerror}") from e
    if r.header(FILE_VERSION) != kind:
        raise FormatError(f"{path.name} holds the wrong record kind")
    return r


def write_session(directory, data: SessionData) -> Path:
    """Write ``odometry.bin``, ``clusters.bin`` and ``truth.bin`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    w = Writer()
    w.header(ODOMETRY, FILE_VERSION)
    w.varint(data.session)
    w.varint(len(data.odometry))
    for p in data.odometry:
        w.pose(p)
    _write_bytes(d / "odometry.bin", w.getvalue())
    w = Writer()
    w.header(CLUSTERS, FILE_VERSION)
    w.varint(len(data.clusters))
    for frame in data.clusters:
        w.varint(len(frame))
        for cl in frame:
            w.u8(int(cl.label) << 1 | int(cl.kind))
            w.varint(len(cl.points))
            w.f64(cl.points.ravel())
    _write_bytes(d / "clusters.bin", w.getvalue())
    w = Writer()
    w.header(TRUTH, FILE_VERSION)
    w.pose(data.frame)
    w.varint(len(data.truth))
    for p in data.truth:
        w.pose(p)
    for src in data.sources:
        w.varint(len(src))
        for lid in src:
            w.varint(lid)
    _write_bytes(d / "truth.bin", w.getvalue())
    return d


def read_session(directory, with_truth: bool = True) -> SessionData:
    """Inverse of :func:`write_session`; truth is optional on disk."""
    d = Path(directory)
    r = _read_bytes(d / "odometry.bin", ODOMETRY)
    session = r.varint()
    odometry = [r.pose() for _ in range(r.varint())]
    r = _read_bytes(d / "clusters.bin", CLUSTERS)
    clusters = []
    for _ in range(r.varint()):
        frame = []
        for _ in range(r.varint()):
            tag = r.u8()
            n = r.varint()
            frame.append(PointCluster(r.f64(3 * n).reshape(n, 3), Label(tag >> 1), Kind(tag & 1)))
        clusters.append(frame)
    if len(clusters) != len(odometry):
        raise FormatError("odometry and cluster files disagree on the keyframe count")
    truth, sources, frame_pose = [], [[] for _ in clusters], Pose.identity()
    if with_truth and (d / "truth.bin").exists():
        r = _read_bytes(d / "truth.bin", TRUTH)
        frame_pose = r.pose()
        truth = [r.pose() for _ in range(r.varint())]
        sources = [[r.varint() for _ in range(r.varint())] for _ in truth]
    return SessionData(session, truth, odometry, clusters, sources, frame_pose)


def write_world(directory, world: World) -> Path:
    """``world.json`` holds the spec; the world itself is regenerated from it."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    text = json.dumps({"spec": world.spec.to_dict(), "digest": world.digest()}, indent=2, sort_keys=True)
    path = d / "world.json"
    _write_bytes(path, text.encode())
    return path


def read_world(path) -> World:
    from .mapstore import IoFailure

    p = Path(path)
    if p.is_dir():
        p = p / "world.json"
    try:
        doc = json.loads(p.read_text())
    except OSError as e:
        raise IoFailure(f"cannot read {p}: {e.strerror}") from e
    world = generate_world(WorldSpec.from_dict(doc["spec"]))
    if doc.get("digest") not in (None, world.digest()):
        raise FormatError(f"{p} does not reproduce the recorded world digest")
    return world


def dense_point_dump(world: World, spacing: float = 0.1) -> np.ndarray:
    """Every landmark surface sampled on a ``spacing`` grid, as float32 xyz."""
    chunks = []
    for lm in world.landmarks:
        axes = lm.axes
        grids = [np.arange(-1.0, 1.0 + 1e-12, spacing / max(np.linalg.norm(a), 1e-12)) for a in axes]
        mesh = np.meshgrid(*grids, indexing="ij")
        coef = np.stack([g.ravel() for g in mesh], axis=1)
        chunks.append((lm.center + coef @ axes).astype(np.float32))
    return np.concatenate(chunks) if chunks else np.zeros((0, 3), np.float32)


def write_point_dump(path, points: np.ndarray) -> int:
    """Raw little-endian float32 xyz after a count; returns bytes written."""
    w = Writer()
    w.varint(len(points))
    w.f32(np.asarray(points, dtype=np.float32).ravel())
    data = w.getvalue()
    _write_bytes(Path(path), data)
    return len(data)
