"""Session-by-session map building: vectorize, register, filter, PGO, BA, marginalize."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose
from .loops import filter_loops
from .mapmodel import SlimMap
from .mapstore import map_bytes, merge_into_base
from .optimize import LMConfig, apply_solution, ba_problem, merge_landmarks, pgo_problem, solve_ba, solve_pgo
from .optimize.mapping import loop_sqrt_info
from .register import RegistrationConfig, register_blocks
from .vectorize import AssociationGates, DegenerateFit, build_submap, init_landmark_from_observations

log = logging.getLogger(__name__)


class StageFailure(RuntimeError):
    """A pipeline stage could not complete; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    registration: RegistrationConfig = RegistrationConfig()
    gates: AssociationGates = AssociationGates()
    sigma: tuple = (0.1, 0.2, 0.3)  # observation sigma per label: road, building, pole
    drift_rot_deg_per_m: float = 0.05
    drift_trans_per_m: float = 0.01
    pcm_rot_deg: float = 3.0
    pcm_trans: float = 1.0
    # PCM gates widen by this much per metre of sub odometry between two candidates
    pcm_rot_deg_per_m: float = 0.01
    pcm_trans_per_m: float = 0.02
    loop_sigma_trans: float = 0.15
    loop_sigma_rot_deg: float = 0.6
    loop_huber: float = 0.5
    ba_huber: float = 0.1
    gauge_sigma: float = 1e-3
    merge_angle_deg: float = 5.0
    merge_plane_distance: float = 0.2
    merge_line_distance: float = 1.0
    # BA pulls cross-session duplicates that were outside the merge gates at the
    # PGO poses together; a lone first session has none
    remerge_after_ba: bool = True
    marginalize: bool = True
    keyframe_spacing: float = 10.0
    lm: LMConfig = LMConfig()
    threads: int = 1

    def sigma_by_label(self) -> dict:
        from .mapmodel import Label

        return {Label.ROAD: self.sigma[0], Label.BUILDING: self.sigma[1], Label.POLE: self.sigma[2]}


@dataclass
class SessionReport:
    session: int
    keyframe_ids: list = field(default_factory=list)
    times: dict = field(default_factory=dict)  # stage -> seconds
    trajectories: dict = field(default_factory=dict)  # stage -> list of Pose for this session's keyframes
    candidates: int = 0
    loops: int = 0
    keyframes: int = 0
    landmarks: int = 0
    bytes_full: int = 0
    bytes_localization: int = 0

    def lines(self) -> list:
        out = [("session", "id", self.session)]
        out += [(stage, "seconds", round(t, 6)) for stage, t in self.times.items()]
        out += [
            ("register", "candidates", self.candidates),
            ("filter", "loops", self.loops),
            ("map", "keyframes", self.keyframes),
            ("map", "landmarks", self.landmarks),
            ("map", "bytes_full", self.bytes_full),
            ("map", "bytes_localization", self.bytes_localization),
        ]
        return out


class _Timer:
    def __init__(self, report: SessionReport, stage: str):
        self.report, self.stage = report, stage

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.report.times[self.stage] = self.report.times.get(self.stage, 0.0) + time.perf_counter() - self.t0
        return False


def _refit_landmarks(m: SlimMap, ids) -> None:
    """Refit landmarks of ``m`` from their observations at the current poses."""
    refs: dict = {i: [] for i in ids}
    for kf in m.keyframes.values():
        for lid, obs in kf.observations:
            if lid in refs:
                refs[lid].append((kf.pose, obs))
    for lid, obs in refs.items():
        if not obs:
            continue
        old = m.landmarks[lid]
        try:
            lm = init_landmark_from_observations(obs, old.label, lid)
        except DegenerateFit:
            continue
        lm.observers = old.observers
        m.landmarks[lid] = lm


def _session_poses(m: SlimMap, ids) -> list:
    return [m.keyframes[k].pose for k in ids]


def align_submap(base: SlimMap, sub: SlimMap, loops: list) -> Pose:
    """Base-from-sub transform implied by the loop with most inliers."""
    best = max(loops, key=lambda c: c.inlier_count)
    return base.keyframes[best.base_kf].pose @ best.T @ sub.keyframes[best.sub_kf].pose.inverse()


def run_ba(m: SlimMap, cfg: PipelineConfig, backend=None):
    problem = ba_problem(m, cfg.ba_huber, cfg.gauge_sigma)
    rep = solve_ba(problem, cfg.lm, backend)
    apply_solution(m, problem)
    return rep


def merge_session(
    base: SlimMap | None,
    session: int,
    odometry: list,
    clusters: list,
    cfg: PipelineConfig = PipelineConfig(),
    backend=None,
) -> tuple:
    """Add one session to ``base`` and return ``(new_base, SessionReport)``.

    ``base`` is not modified; an empty or None base makes the session the
    initial base map.
    """
    rep = SessionReport(session)
    base = SlimMap() if base is None else base.copy()
    with _Timer(rep, "vectorize"):
        sub = build_submap(
            session,
            odometry,
            clusters,
            sigma=cfg.sigma_by_label(),
            gates=cfg.gates,
            drift=(np.radians(cfg.drift_rot_deg_per_m), cfg.drift_trans_per_m),
            first_keyframe_id=base.next_keyframe_id(),
            first_landmark_id=base.next_landmark_id(),
        )
    ids = sub.keyframe_ids()
    rep.keyframe_ids = ids
    rep.trajectories["odometry"] = _session_poses(sub, ids)

    first = base.is_empty
    if first:
        base = sub
        rep.trajectories["pgo"] = _session_poses(base, ids)
    else:
        with _Timer(rep, "register"):
            cands = register_blocks(base, sub, cfg.registration, cfg.threads)
        rep.candidates = len(cands)
        with _Timer(rep, "filter"):
            base_poses = {k: kf.pose for k, kf in base.keyframes.items()}
            sub_poses = {k: kf.pose for k, kf in sub.keyframes.items()}
            sessions = {k: kf.session for k, kf in sub.keyframes.items()}
            loops = filter_loops(
                cands, base_poses, sub_poses, np.radians(cfg.pcm_rot_deg), cfg.pcm_trans, sessions,
                growth=(np.radians(cfg.pcm_rot_deg_per_m), cfg.pcm_trans_per_m),
            )
        rep.loops = len(loops)
        if not loops:
            raise StageFailure("filter", f"no consistent loop closures for session {session}")
        with _Timer(rep, "pgo"):
            T = align_submap(base, sub, loops)
            poses = dict(base_poses)
            poses.update({k: T @ p for k, p in sub_poses.items()})
            U = loop_sqrt_info(cfg.loop_sigma_trans, np.radians(cfg.loop_sigma_rot_deg))
            problem = pgo_problem(
                poses, sub.odometry, [(c.base_kf, c.sub_kf, c.T) for c in loops], fixed=set(base_poses),
                loop_huber=cfg.loop_huber, loop_info=U,
            )
            solve_pgo(problem, cfg.lm)
            for k in ids:
                sub.keyframes[k].pose = problem.poses[k]
            _refit_landmarks(sub, list(sub.landmarks))
        rep.trajectories["pgo"] = _session_poses(sub, ids)
        with _Timer(rep, "merge"):
            kf_map, _ = merge_into_base(base, sub)
            if any(kf_map[k] != k for k in ids):
                raise StageFailure("merge", "submap keyframe ids collided with the base")
            merge_landmarks(base, cfg.merge_angle_deg, cfg.merge_plane_distance, cfg.merge_line_distance)
    with _Timer(rep, "ba"):
        try:
            run_ba(base, cfg, backend)
        except Exception as e:  # solver errors are reported with the stage label
            raise StageFailure("ba", str(e)) from e
    rep.trajectories["ba"] = _session_poses(base, ids)
    if cfg.remerge_after_ba and not first:
        with _Timer(rep, "merge"):
            merge_landmarks(base, cfg.merge_angle_deg, cfg.merge_plane_distance, cfg.merge_line_distance)
    if cfg.marginalize:
        from .marginalize import marginalize_map

        with _Timer(rep, "marginalize"):
            try:
                base = marginalize_map(base, cfg.keyframe_spacing)
            except Exception as e:
                raise StageFailure("marginalize", str(e)) from e
    rep.keyframes = len(base.keyframes)
    rep.landmarks = len(base.landmarks)
    rep.bytes_full, rep.bytes_localization = map_bytes(base)
    return base, rep


def build_map(sessions, cfg: PipelineConfig = PipelineConfig(), backend=None, callback=None) -> tuple:
    """Fold ``sessions`` (objects with ``session``, ``odometry``, ``clusters``) into one map."""
    base = None
    reports = []
    for s in sessions:
        base, rep = merge_session(base, s.session, s.odometry, s.clusters, cfg, backend)
        reports.append(rep)
        log.info("session %d: %d kf, %d lm, %d loops", s.session, rep.keyframes, rep.landmarks, rep.loops)
        if callback is not None:
            callback(base, rep)
    return base, reports
