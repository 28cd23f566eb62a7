"""Command-line entry point: ``slimmap generate | merge | eval | localize | info``.

Reports are plain ``stage key value`` lines. Exit status is 0 on success,
2 for configuration or input errors and 3 when a pipeline stage fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import mapstore
from .binio import MAGIC, FormatError
from .config import ConfigError, RunConfig, load_config
from .geometry import Pose
from .localize import LocalizerState, NoMatch, TrackingLost, pose_line, relocalize, track_frame
from .mapmodel import SlimMap
from .pipeline import StageFailure, merge_session
from .simworld import (
    TooFewPoses,
    dense_point_dump,
    evaluate_ate,
    generate_world,
    read_session,
    simulate_session,
    write_point_dump,
    write_session,
    write_world,
)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("slimmap")


class _Report:
    def __init__(self, path: str | None):
        self.path = path
        self.lines: list = []

    def add(self, stage, key, value) -> None:
        if isinstance(value, float):
            value = f"{value:.6g}"
        self.lines.append(f"{stage} {key} {value}")

    def flush(self) -> None:
        text = "\n".join(self.lines) + ("\n" if self.lines else "")
        if self.path:
            try:
                Path(self.path).write_text(text)
            except OSError as e:
                raise mapstore.IoFailure(f"cannot write report {self.path}: {e.strerror}") from e
        else:
            sys.stdout.write(text)


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        marginalize=False if getattr(args, "no_marginalization", False) else None,
        threads=getattr(args, "threads", None),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args, rep: _Report) -> int:
    cfg = _config(args)
    world = generate_world(cfg.world)
    out = Path(args.out)
    write_world(out, world)
    count = cfg.world.sessions if args.sessions is None else args.sessions
    rep.add("generate", "landmarks", len(world.landmarks))
    rep.add("generate", "road_length", float(world.road_length))
    for s in range(count):
        data = simulate_session(world, s)
        write_session(out / f"session_{s:02d}", data)
        rep.add("generate", f"session_{s:02d}_keyframes", len(data.truth))
        rep.add("generate", f"session_{s:02d}_clusters", sum(len(c) for c in data.clusters))
    if args.replay:
        data = simulate_session(world, cfg.held_out_session, spacing=cfg.replay_spacing)
        write_session(out / "replay", data)
        rep.add("generate", "replay_frames", len(data.truth))
    if args.point_dump:
        rep.add("generate", "point_dump_bytes", write_point_dump(args.point_dump, dense_point_dump(world)))
    return EXIT_OK


def _session_ate(rep: _Report, trajectories: dict, truth: list, session: int) -> None:
    if not truth:
        return
    for stage, poses in trajectories.items():
        try:
            rep.add("ate", f"{stage}_xy", evaluate_ate(poses, truth, "xy"))
        except TooFewPoses:
            log.warning("session %d: too few poses for ATE", session)


def cmd_merge(args, rep: _Report) -> int:
    cfg = _config(args)
    base = None if args.base in (None, "-") else mapstore.deserialize(args.base)
    for d in args.sessions:
        data = read_session(d)
        base, srep = merge_session(base, data.session, data.odometry, data.clusters, cfg.pipeline)
        for stage, key, value in srep.lines():
            rep.add(stage, key, value)
        _session_ate(rep, srep.trajectories, data.truth, data.session)
    rep.add("write", "bytes_full", mapstore.serialize_full(base, args.out))
    if args.map_l:
        rep.add("write", "bytes_localization", mapstore.serialize_localization_only(base, args.map_l))
    return EXIT_OK


def _is_map(path: str) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(len(MAGIC)) == MAGIC
    except OSError as e:
        raise mapstore.IoFailure(f"cannot read {path}: {e.strerror}") from e


def read_pose_file(path) -> list:
    """Poses from ``timestamp tx ty tz qx qy qz qw`` lines, in file order."""
    try:
        rows = np.loadtxt(path, ndmin=2)
    except OSError as e:
        raise mapstore.IoFailure(f"cannot read {path}: {e}") from e
    if rows.size and rows.shape[1] != 8:
        raise FormatError(f"{path}: expected 8 columns per pose line")
    return [Pose(Rotation.from_quat(r[4:]).as_matrix(), r[1:4]) for r in rows]


def cmd_eval(args, rep: _Report) -> int:
    data = read_session(args.session)
    if not data.truth:
        raise mapstore.IoFailure(f"{args.session} has no truth.bin")
    if _is_map(args.estimate):
        m = mapstore.deserialize(args.estimate)
        ids = m.keyframe_ids(data.session)
        est = [m.keyframes[k].pose for k in ids]
        truth = [data.truth[m.keyframes[k].index] for k in ids]
    else:
        est = read_pose_file(args.estimate)
        truth = data.truth[: len(est)]
    rep.add("eval", "poses", len(est))
    rep.add("eval", f"ate_{args.mode}", evaluate_ate(est, truth, args.mode))
    return EXIT_OK


def _initial_pose(args, m: SlimMap, first_frame) -> Pose:
    if args.init is not None:
        x, y, z, yaw = args.init
        return Pose(Rotation.from_euler("z", yaw).as_matrix(), np.array([x, y, z]))
    if args.init_frame is not None:
        ref = read_session(args.init_frame)
        return ref.frame.inverse() @ read_session(args.session).truth[0]
    return relocalize(m, first_frame)


def cmd_localize(args, rep: _Report) -> int:
    cfg = _config(args)
    m = mapstore.deserialize(args.map)
    data = read_session(args.session, with_truth=args.init_frame is not None)
    if not data.clusters:
        raise mapstore.IoFailure(f"{args.session} has no frames")
    try:
        pose = _initial_pose(args, m, data.clusters[0])
    except NoMatch as e:
        raise StageFailure("relocalize", str(e)) from e
    state = LocalizerState.from_map(m, pose, cfg.tracking)
    lines, times = [], []
    for i, frame in enumerate(data.clusters):
        try:
            p = track_frame(state, frame)
        except TrackingLost as e:
            rep.add("localize", "lost_at", i)
            raise StageFailure("track", f"frame {i}: {e}") from e
        times.append(state.last_seconds)
        lines.append(pose_line(float(i), p))
    try:
        Path(args.out).write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise mapstore.IoFailure(f"cannot write {args.out}: {e.strerror}") from e
    rep.add("localize", "frames", len(lines))
    rep.add("localize", "mean_seconds", float(np.mean(times)))
    return EXIT_OK


def cmd_info(args, rep: _Report) -> int:
    m = mapstore.deserialize(args.map)
    full, loc = mapstore.map_bytes(m)
    rep.add("info", "file_bytes", mapstore.file_size(args.map))
    rep.add("info", "sessions", len(m.sessions))
    rep.add("info", "keyframes", len(m.keyframes))
    rep.add("info", "landmarks", len(m.landmarks))
    rep.add("info", "observations", m.observation_count())
    rep.add("info", "odometry_factors", len(m.odometry))
    rep.add("info", "recovered_factors", len(m.recovered))
    rep.add("info", "bytes_full", full)
    rep.add("info", "bytes_localization", loc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--report", help="write the report here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="slimmap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="synthesize a world and its sessions")
    g.add_argument("out", help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--sessions", type=int, help="number of mapping sessions (default from config)")
    g.add_argument("--replay", action="store_true", help="also write a dense held-out replay session")
    g.add_argument("--point-dump", help="write a dense 0.1 m point dump of the world here")
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("merge", parents=[common], help="merge session directories into a map")
    m.add_argument("sessions", nargs="+", help="session directories, merged in order")
    m.add_argument("--base", default="-", help="existing map archive, '-' for an empty base")
    m.add_argument("--out", required=True, help="output map archive")
    m.add_argument("--map-l", help="also write a localization-only archive")
    m.add_argument("--no-marginalization", action="store_true")
    m.add_argument("--threads", type=int)
    m.set_defaults(func=cmd_merge)

    e = sub.add_parser("eval", parents=[common], help="ATE of a map or pose file against session truth")
    e.add_argument("estimate", help="map archive or pose text file")
    e.add_argument("session", help="session directory with truth.bin")
    e.add_argument("--mode", choices=["xy", "SE3"], default="xy")
    e.set_defaults(func=cmd_eval)

    lo = sub.add_parser("localize", parents=[common], help="track a session against a map")
    lo.add_argument("map")
    lo.add_argument("session")
    lo.add_argument("out", help="pose text output")
    lo.add_argument("--init", nargs=4, type=float, metavar=("X", "Y", "Z", "YAW"), help="initial pose in the map frame")
    lo.add_argument("--init-frame", help="session directory whose frame defines the map frame (simulation)")
    lo.set_defaults(func=cmd_localize)

    i = sub.add_parser("info", parents=[common], help="summarize a map archive")
    i.add_argument("map")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    rep = _Report(args.report)
    try:
        code = args.func(args, rep)
    except StageFailure as e:
        rep.add("error", "stage", e.stage)
        rep.flush()
        print(f"slimmap: stage {e}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, KeyError, FormatError, mapstore.IoFailure, ValueError) as e:
        print(f"slimmap: {e}", file=sys.stderr)
        return EXIT_CONFIG
    rep.flush()
    return code


if __name__ == "__main__":
    raise SystemExit(main())
