import dataclasses

import numpy as np
import pytest

from helpers import world_map
from slimmap import mapstore
from slimmap.cli import read_pose_file
from slimmap.geometry import Pose, so3_log
from slimmap.localize import (
    LandmarkIndex,
    LocalizerState,
    NoMatch,
    TrackingGates,
    TrackingLost,
    _associate,
    frame_observations,
    pose_line,
    relocalize,
    solve_pose,
    track_frame,
)
from slimmap.mapmodel import Kind
from slimmap.simworld import WorldSpec, generate_world, simulate_session

SPEC = WorldSpec(seed=5, extent=80.0, sigma_obs=0.0)


@pytest.fixture(scope="module")
def world():
    return generate_world(SPEC)


@pytest.fixture(scope="module")
def replay(world):
    return simulate_session(world, 2, spacing=1.0)


@pytest.fixture(scope="module")
def perfect(world, replay):
    return world_map(world, replay)


def pose_err(a: Pose, b: Pose):
    d = a.inverse() @ b
    return np.linalg.norm(d.translation), np.linalg.norm(so3_log(d.rotation))


def test_noiseless_frame_at_truth_is_exact(perfect, replay):
    for i in (0, 17, 40):
        st = LocalizerState.from_map(perfect, replay.truth[i])
        est = track_frame(st, replay.clusters[i])
        dt, dr = pose_err(est, replay.truth[i])
        assert dt < 1e-6 and dr < 1e-6


def test_tracking_converges_from_previous_frame(perfect, replay):
    st = LocalizerState.from_map(perfect, replay.truth[0])
    for i, frame in enumerate(replay.clusters[:60]):
        est = track_frame(st, frame)
        assert pose_err(est, replay.truth[i])[0] < 1e-4
    assert st.last_seconds < 0.5 and st.last_inliers >= 6


def test_distant_prior_loses_track(perfect, replay):
    start = replay.truth[10] @ Pose.from_rotvec([0, 0, 0], [20.0, 0.0, 0.0])
    shifted = Pose(replay.truth[10].rotation, replay.truth[10].translation + [20.0, 0.0, 0.0])
    for prior in (start, shifted):
        st = LocalizerState.from_map(perfect, prior)
        with pytest.raises(TrackingLost):
            track_frame(st, replay.clusters[10])


def test_localization_archive_tracks_identically(tmp_path, world):
    noisy = dataclasses.replace(SPEC, sigma_obs=0.05)
    w = generate_world(noisy)
    data = simulate_session(w, 2, spacing=1.0)
    full_path, l_path = tmp_path / "f.slim", tmp_path / "l.slim"
    m = world_map(w, data)
    mapstore.serialize_full(m, full_path)
    mapstore.serialize_localization_only(m, l_path)
    runs = []
    for path in (full_path, l_path):
        st = LocalizerState.from_map(mapstore.deserialize(path), data.truth[0])
        runs.append([track_frame(st, f).matrix() for f in data.clusters[:40]])
    assert np.abs(np.array(runs[0]) - np.array(runs[1])).max() < 1e-9


def test_lm_cost_is_non_increasing(perfect, replay):
    frame = frame_observations(replay.clusters[5])
    prior = replay.truth[5] @ Pose.from_rotvec([0, 0, 0.05], [0.4, -0.3, 0.1])
    assoc = _associate(LandmarkIndex(perfect.landmarks), prior, frame, 15.0, 2.0)
    _, costs = solve_pose(prior, assoc, 1.0, 10)
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert costs[-1] < costs[0]


def test_locality_gate_rejects_far_coplanar_landmarks(perfect, replay):
    idx = LandmarkIndex(perfect.landmarks)
    road = [(l, o) for l, o in frame_observations(replay.clusters[0]) if o.kind == Kind.PLANE and l == 0]
    pts = replay.truth[0].apply(road[0][1].points)
    row = idx.nearest(Kind.PLANE, 0, pts, 5.0, 0.5, margin=2.0)
    lid = idx.ids[Kind.PLANE][row]
    assert np.linalg.norm(perfect.landmarks[lid].centroid - pts.mean(axis=0)) < perfect.landmarks[lid].radius + 2.0
    far = pts + [500.0, 0.0, 0.0]
    assert idx.nearest(Kind.PLANE, 0, far, 5.0, 0.5, margin=2.0) == -1
    assert idx.nearest(Kind.PLANE, 0, far, 5.0, 0.5) >= 0  # infinite planes alone would accept it


def test_relocalize_recovers_frame_pose(perfect, replay):
    i = 25
    est = relocalize(perfect, replay.clusters[i])
    dt, dr = pose_err(est, replay.truth[i])
    assert dt < 0.1 and np.degrees(dr) < 1.0


def test_relocalize_self_match_is_identity(world, replay):
    m = world_map(world, replay)
    T = replay.truth[25]
    m.keyframes = {0: m.keyframes[25]}
    m.keyframes[0].id = 0
    est = relocalize(m, replay.clusters[25])
    assert pose_err(est, T)[0] < 1e-6


def test_relocalize_far_from_map_fails(perfect, replay):
    far = generate_world(dataclasses.replace(SPEC, seed=99, extent=40.0, building_ring=0))
    frame = simulate_session(far, 0).clusters[0]
    empty = world_map(far)
    empty.landmarks = {k: v for k, v in list(empty.landmarks.items())[:2]}
    empty.keyframes = {0: perfect.keyframes[0]}
    with pytest.raises(NoMatch):
        relocalize(empty, frame)


def test_pose_lines_roundtrip(tmp_path, replay):
    path = tmp_path / "poses.txt"
    path.write_text("\n".join(pose_line(i, p) for i, p in enumerate(replay.truth[:5])) + "\n")
    back = read_pose_file(path)
    for a, b in zip(back, replay.truth[:5]):
        assert np.allclose(a.matrix(), b.matrix(), atol=1e-8)
