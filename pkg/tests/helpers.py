"""Shared constructors for tests."""

import numpy as np


def random_pose(rng, scale=5.0):
    from slimmap.geometry import Pose

    return Pose.from_rotvec(rng.normal(size=3), rng.normal(scale=scale, size=3))


def yaw_pose(rng, yaw_range=np.pi, trans=3.0, tilt=0.0):
    """Mostly-planar rigid motion: yaw plus an optional small roll/pitch."""
    from slimmap.geometry import Pose

    rv = np.array([*rng.normal(scale=tilt, size=2), rng.uniform(-yaw_range, yaw_range)])
    t = np.array([*rng.uniform(-trans, trans, size=2), rng.normal(scale=0.1 * trans)])
    return Pose.from_rotvec(rv, t)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_entity(rng, kind, label=None, spread=20.0):
    from slimmap.mapmodel import Kind, Label
    from slimmap.register import Entity

    if kind == Kind.LINE:
        d = unit(rng.normal(size=3))
        return Entity(Kind.LINE, Label.POLE if label is None else label, d, rng.uniform(-spread, spread, 3))
    n = unit(rng.normal(size=3))
    return Entity(Kind.PLANE, Label.BUILDING if label is None else label, n, rng.uniform(-spread, spread, 3))


def moved_entity(e, T):
    """The entity expressed in the frame whose pose in e's frame is T."""
    from dataclasses import replace

    Ti = T.inverse()
    return replace(e, direction=Ti.rotation @ e.direction, anchor=Ti.apply(e.anchor))


def pcm_scenario(rng, n_true=5, n_false=3, outlier_min=5.0, loop_noise=(0.03, 0.002)):
    """Base and sub trajectories with true and gross-outlier loop candidates.

    Returns ``(candidates, odom_base, odom_sub, is_true)``; sub odometry lives
    in its own frame, offset from the base frame by a random rigid motion.
    """
    from slimmap.geometry import Pose
    from slimmap.register import LoopCandidate

    def walk(n, start):
        poses, p = [], start
        for _ in range(n):
            poses.append(p)
            p = p @ Pose.from_rotvec([0.0, 0.0, rng.normal(scale=0.1)], [2.0, rng.normal(scale=0.1), 0.0])
        return poses

    base = walk(40, Pose.identity())
    sub_world = [b @ Pose.from_rotvec([0, 0, rng.normal(scale=0.05)], [*rng.normal(scale=0.5, size=2), 0.0]) for b in base]
    frame = yaw_pose(rng, trans=50.0)
    odom_base = {k: p for k, p in enumerate(base)}
    odom_sub = {100 + j: frame.inverse() @ p for j, p in enumerate(sub_world)}

    def noisy(T, t_sigma, r_sigma):
        return T @ Pose.from_rotvec(rng.normal(scale=r_sigma, size=3), rng.normal(scale=t_sigma, size=3))

    cands, truth = [], []
    for k in rng.choice(len(base), n_true, replace=False):
        T = base[k].inverse() @ sub_world[k]
        cands.append(LoopCandidate(int(k), 100 + int(k), noisy(T, *loop_noise), 20))
        truth.append(True)
    for _ in range(n_false):
        k, j = rng.choice(len(base), 2)
        T = base[k].inverse() @ sub_world[j]
        off = unit(rng.normal(size=3) * [1, 1, 0.1]) * rng.uniform(outlier_min, 3 * outlier_min)
        bad = Pose.from_rotvec([0, 0, rng.uniform(-np.pi, np.pi)], T.translation + off)
        cands.append(LoopCandidate(int(k), 100 + int(j), Pose(T.rotation @ bad.rotation, bad.translation), 20))
        truth.append(False)
    order = rng.permutation(len(cands))
    return [cands[i] for i in order], odom_base, odom_sub, [truth[i] for i in order]


def marginalization_case(seed, tree=True, noise=0.02):
    """A converged toy map plus everything needed to compare recovery to the dense oracle.

    With ``tree`` every landmark hangs off one retained keyframe, so the
    skeleton can represent the marginal exactly.
    """
    from types import SimpleNamespace

    from slimmap.marginalize import (
        dense_marginal_covariance,
        measurements_at_mean,
        recover_sparse,
        skeleton_jacobians,
        sparsify_keyframes,
    )
    from slimmap.optimize import apply_solution, ba_problem, solve_ba
    from slimmap.optimize.hessian import build_block_hessian
    from slimmap.simworld import toy_map

    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 16))
    if tree:
        pool = list(range(0, n, 2))
        m = toy_map(rng, n, int(rng.integers(1, 9)), noise=noise, observer_pool=pool)
        spacing = 6.0
    else:
        m = toy_map(rng, n, int(rng.integers(2, 9)), noise=noise)
        spacing = 7.0
    p = ba_problem(m)
    solve_ba(p)
    apply_solution(m, p)
    topo = sparsify_keyframes(m, spacing)
    H = build_block_hessian(ba_problem(m), topo.marginalized)
    cov = recover_sparse(H)
    z = measurements_at_mean(m, topo)
    jac = skeleton_jacobians(m, topo, z, H.lm_ids, H.retained)
    return SimpleNamespace(map=m, topo=topo, H=H, cov=cov, Sigma=dense_marginal_covariance(H), z=z, jac=jac)


def random_map(rng):
    """A toy map with an extra session and random recovered factors, for archive tests."""
    from slimmap.geometry import Pose
    from slimmap.mapmodel import Kind, RecoveredFactor
    from slimmap.mapstore import merge_into_base
    from slimmap.simworld import toy_map

    def spd(d):
        A = rng.normal(size=(d, d))
        return A @ A.T + d * np.eye(d)

    m = toy_map(rng, int(rng.integers(1, 8)), int(rng.integers(0, 8)))
    if rng.random() < 0.5:
        other = toy_map(rng, int(rng.integers(1, 5)), int(rng.integers(0, 5)))
        for kf in other.keyframes.values():
            kf.session = 1
        other.sessions = [1]
        merge_into_base(m, other)
    kfs = sorted(m.keyframes)
    for _ in range(int(rng.integers(0, 6))):
        choice = rng.integers(3)
        if choice == 0:
            m.recovered.append(RecoveredFactor("prior", (int(rng.choice(kfs)),), -1, Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3)), spd(6)))
        elif choice == 1 and len(kfs) > 1:
            a, b = sorted(rng.choice(kfs, 2, replace=False).tolist())
            m.recovered.append(RecoveredFactor("relpose", (a, b), -1, Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3)), spd(6)))
        elif m.landmarks:
            lid = int(rng.choice(sorted(m.landmarks)))
            kind = m.landmarks[lid].kind
            n, d = (2, 4) if kind == Kind.LINE else (3, 3)
            m.recovered.append(RecoveredFactor("line" if kind == Kind.LINE else "plane", (int(rng.choice(kfs)),), lid, rng.normal(size=(n, 3)), spd(d)))
    return m


def world_map(world, session=None):
    """A perfect map of ``world``: true landmark geometry, optional truth keyframes."""
    from slimmap.geometry import line_from_point_direction, plane_from_normal_distance
    from slimmap.mapmodel import Keyframe, Kind, Landmark, SlimMap

    m = SlimMap(sessions=[0])
    for t in world.landmarks:
        if t.kind == Kind.LINE:
            params = line_from_point_direction((t.normal, t.center))
        else:
            params = plane_from_normal_distance((t.normal, -float(t.normal @ t.center)))
        radius = float(np.linalg.norm(t.axes.sum(axis=0)))
        m.landmarks[t.id] = Landmark(t.id, t.kind, t.label, params, t.center, radius)
    if session is not None:
        for i, pose in enumerate(session.truth):
            m.keyframes[i] = Keyframe(i, pose, 0, i)
    return m
