"""In-memory map: keyframes, landmarks, observations and factors."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .geometry import (
    Pose,
    line_to_point_direction,
    plane_to_normal_distance,
    rot2dof_normal,
)


class Label(IntEnum):
    ROAD = 0
    BUILDING = 1
    POLE = 2


class Kind(IntEnum):
    LINE = 0
    PLANE = 1


PARAM_DIM = {Kind.LINE: 4, Kind.PLANE: 3}
OBS_POINTS = {Kind.LINE: 2, Kind.PLANE: 3}


@dataclass
class Observation:
    """Representative points of one segment, in keyframe-local coordinates."""

    kind: Kind
    points: np.ndarray  # (2, 3) for lines, (3, 3) for planes
    sqrt_info: float
    count: int

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.points = np.asarray(self.points, dtype=float).reshape(OBS_POINTS[self.kind], 3)

    @property
    def residual_dim(self) -> int:
        return 4 if self.kind == Kind.LINE else 3


@dataclass
class Landmark:
    id: int
    kind: Kind
    label: Label
    params: np.ndarray
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.0
    observers: set = field(default_factory=set)

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.label = Label(self.label)
        self.params = np.asarray(self.params, dtype=float).reshape(PARAM_DIM[self.kind])
        self.centroid = np.asarray(self.centroid, dtype=float).reshape(3)

    @property
    def dim(self) -> int:
        return PARAM_DIM[self.kind]

    @property
    def normal(self) -> np.ndarray:
        return rot2dof_normal(self.params[0], self.params[1])

    def point_normal(self):
        if self.kind == Kind.LINE:
            return line_to_point_direction(self.params)
        return plane_to_normal_distance(self.params)

    def project(self, p: np.ndarray) -> np.ndarray:
        """Closest point on the infinite landmark to ``p``."""
        if self.kind == Kind.LINE:
            n, q = line_to_point_direction(self.params)
            return q + ((p - q) @ n) * n
        n, d = plane_to_normal_distance(self.params)
        return p - (p @ n + d) * n

    def set_params(self, params: np.ndarray) -> None:
        """Replace the geometry and keep the cached centroid on it."""
        self.params = np.asarray(params, dtype=float).reshape(self.dim)
        self.centroid = self.project(self.centroid)


@dataclass
class Keyframe:
    id: int
    pose: Pose
    session: int
    index: int = 0  # position within its session, used for ground-truth lookup
    observations: list = field(default_factory=list)  # (landmark_id, Observation)


@dataclass
class OdometryFactor:
    a: int
    b: int
    measurement: Pose  # pose of b expressed in a
    sqrt_info: np.ndarray  # (6, 6) upper triangular


@dataclass
class RecoveredFactor:
    """A factor produced by marginalization.

    ``kind`` is one of ``prior``, ``relpose``, ``line``, ``plane``. For the
    pose kinds ``z`` is a Pose; for observation kinds ``z`` holds the
    synthesised points in the keyframe frame.
    """

    kind: str
    keyframes: tuple
    landmark: int
    z: object
    info: np.ndarray

    @property
    def dim(self) -> int:
        return {"prior": 6, "relpose": 6, "line": 4, "plane": 3}[self.kind]


@dataclass
class SlimMap:
    keyframes: dict = field(default_factory=dict)
    landmarks: dict = field(default_factory=dict)
    odometry: list = field(default_factory=list)
    recovered: list = field(default_factory=list)
    sessions: list = field(default_factory=list)

    def copy(self) -> "SlimMap":
        return copy.deepcopy(self)

    @property
    def is_empty(self) -> bool:
        return not self.keyframes and not self.landmarks

    def next_keyframe_id(self) -> int:
        return max(self.keyframes, default=-1) + 1

    def next_landmark_id(self) -> int:
        return max(self.landmarks, default=-1) + 1

    def keyframe_ids(self, session: int | None = None) -> list:
        ids = sorted(self.keyframes)
        if session is None:
            return ids
        return [k for k in ids if self.keyframes[k].session == session]

    def poses(self, ids=None) -> list:
        ids = self.keyframe_ids() if ids is None else ids
        return [self.keyframes[k].pose for k in ids]

    def positions(self, ids=None) -> np.ndarray:
        return np.array([p.translation for p in self.poses(ids)]).reshape(-1, 3)

    def observation_count(self) -> int:
        return sum(len(kf.observations) for kf in self.keyframes.values())

    def rebuild_observers(self) -> None:
        for lm in self.landmarks.values():
            lm.observers = set()
        for kf in self.keyframes.values():
            for lid, _ in kf.observations:
                self.landmarks[lid].observers.add(kf.id)
        for f in self.recovered:
            if f.landmark >= 0:
                self.landmarks[f.landmark].observers.add(f.keyframes[0])

    def validate(self) -> None:
        """Walk every reference and raise ``ValueError`` on a dangling one."""
        for kf in self.keyframes.values():
            for lid, obs in kf.observations:
                if lid not in self.landmarks:
                    raise ValueError(f"keyframe {kf.id} observes missing landmark {lid}")
                if self.landmarks[lid].kind != obs.kind:
                    raise ValueError(f"observation kind mismatch on landmark {lid}")
        for f in self.odometry:
            if f.a not in self.keyframes or f.b not in self.keyframes:
                raise ValueError(f"odometry factor {f.a}->{f.b} is dangling")
        for f in self.recovered:
            for k in f.keyframes:
                if k not in self.keyframes:
                    raise ValueError(f"recovered {f.kind} factor references keyframe {k}")
            if f.landmark >= 0 and f.landmark not in self.landmarks:
                raise ValueError(f"recovered factor references landmark {f.landmark}")
        for kf in self.keyframes.values():
            if kf.session not in self.sessions:
                raise ValueError(f"keyframe {kf.id} belongs to unknown session {kf.session}")
