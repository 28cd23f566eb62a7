import numpy as np
import pytest

from helpers import random_pose
from slimmap.geometry import Pose
from slimmap.kernels import back_substitute, schur_reduce
from slimmap.mapmodel import Kind, Label, Landmark
from slimmap.optimize import (
    DisconnectedGraph,
    LMConfig,
    PoseFactor,
    Problem,
    apply_solution,
    ba_problem,
    build_block_hessian,
    merge_landmarks,
    pgo_problem,
    solve_ba,
    solve_pgo,
)
from slimmap.optimize.problem import CompiledProblem
from slimmap.optimize.solvers import dense_normal_equations
from slimmap.simworld import toy_map


def perturb(rng, m, t=0.2, r=0.02, lm=0.05, keep=(0,)):
    out = m.copy()
    for k, kf in out.keyframes.items():
        if k not in keep:
            kf.pose = kf.pose.retract(np.r_[rng.normal(scale=t, size=3), rng.normal(scale=r, size=3)])
    for l in out.landmarks.values():
        l.params = l.params + rng.normal(scale=lm, size=l.dim)
    return out


def max_pose_error(a, b):
    return max(np.linalg.norm((a.keyframes[k].pose.inverse() @ b.keyframes[k].pose).matrix() - np.eye(4)) for k in a.keyframes)


@pytest.mark.parametrize("seed", range(5))
def test_ba_recovers_noiseless_map(seed):
    rng = np.random.default_rng(seed)
    truth = toy_map(rng, n_keyframes=8, n_landmarks=14)
    m = perturb(rng, truth)
    prob = ba_problem(m, huber=None)
    rep = solve_ba(prob, LMConfig(rel_tol=1e-14, step_tol=1e-14))
    apply_solution(m, prob)
    assert rep.final_cost < 1e-12
    assert all(b <= a for a, b in zip(rep.costs, rep.costs[1:]))
    assert max_pose_error(m, truth) < 1e-6


def test_ba_backends_agree(rng):
    truth = toy_map(rng, n_keyframes=8, n_landmarks=14)
    m = perturb(rng, truth)
    out = []
    for backend in ("numpy", "numba"):
        prob = ba_problem(m.copy(), huber=0.1)
        solve_ba(prob, backend=backend)
        out.append(np.array([p.matrix() for _, p in sorted(prob.poses.items())]))
    assert np.allclose(out[0], out[1], atol=1e-9)


def chain_with_loop(rng, n=12, odo_info=10.0):
    poses = {0: Pose.identity()}
    odo = []
    from slimmap.mapmodel import OdometryFactor

    for k in range(1, n):
        step = Pose.from_rotvec([0, 0, 2 * np.pi / n], [3.0, 0.0, 0.0])
        poses[k] = poses[k - 1] @ step
        odo.append(OdometryFactor(k - 1, k, step, np.eye(6) * odo_info))
    loop = (0, n - 1, poses[0].inverse() @ poses[n - 1])
    return poses, odo, loop


def test_pgo_recovers_noiseless_loop(rng):
    poses, odo, loop = chain_with_loop(rng)
    start = {k: p.retract(rng.normal(scale=0.05, size=6)) if k else p for k, p in poses.items()}
    prob = pgo_problem(start, odo, [loop], fixed=[0])
    rep = solve_pgo(prob)
    assert rep.final_cost < 1e-12
    for k, p in poses.items():
        assert np.allclose(prob.poses[k].matrix(), p.matrix(), atol=1e-6)


def test_pgo_rejects_landmark_factors(rng):
    prob = ba_problem(toy_map(rng))
    with pytest.raises(ValueError):
        solve_pgo(prob)


def test_unanchored_pose_is_reported(rng):
    poses, odo, _ = chain_with_loop(rng)
    poses[99] = Pose.identity()
    with pytest.raises(DisconnectedGraph):
        solve_pgo(pgo_problem(poses, odo, [], fixed=[0]))


def test_robust_loop_kernel_limits_outlier_influence(rng):
    poses, odo, loop = chain_with_loop(rng, odo_info=1000.0)
    bad = (loop[0], loop[1], loop[2] @ Pose.from_rotvec([0, 0, 0], [8.0, 0, 0]))
    with_kernel = pgo_problem(dict(poses), odo, [bad], fixed=[0], loop_huber=0.5)
    without = pgo_problem(dict(poses), odo, [bad], fixed=[0], loop_huber=None)
    solve_pgo(with_kernel)
    solve_pgo(without)
    drift = lambda p: max(np.linalg.norm(p.poses[k].translation - poses[k].translation) for k in poses)
    assert drift(with_kernel) < 0.2 * drift(without)


# ---------------------------------------------------------------------------
# Schur complement against the dense normal equations
# ---------------------------------------------------------------------------


def _linearized(rng):
    m = perturb(rng, toy_map(rng, n_keyframes=7, n_landmarks=12), keep=())
    prob = ba_problem(m, huber=0.1)
    prob.fixed = {0}
    cp = CompiledProblem(prob)
    return prob, cp, cp.linearize(cp.initial_state())


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_schur_matches_dense_elimination(backend, rng):
    prob, cp, lin = _linearized(rng)
    n_p = 6 * len(cp.free_ids)
    H, g = dense_normal_equations(prob)
    S, b, D, W, gl = schur_reduce(
        lin.pose_idx, lin.lm_idx, lin.Jp, lin.Jl, lin.r, len(cp.free_ids), len(cp.lm_ids), cp.lm_dim, 0.0,
        lin.H0, lin.g0, backend=backend,
    )
    App, Apl, All = H[:n_p, :n_p], H[:n_p, n_p:], H[n_p:, n_p:]
    S_ref = App - Apl @ np.linalg.solve(All, Apl.T)
    b_ref = g[:n_p] - Apl @ np.linalg.solve(All, g[n_p:])
    assert np.allclose(S, S_ref, rtol=1e-8, atol=1e-6 * np.abs(S_ref).max())
    assert np.allclose(b, b_ref, rtol=1e-8, atol=1e-6 * np.abs(b_ref).max())
    # back-substitution reproduces the full Newton step
    dx = np.linalg.solve(S, -b)
    dl = back_substitute(dx, lin.pose_idx, lin.lm_idx, D, W, gl)
    full = np.linalg.solve(H, -g)
    dl_flat = np.concatenate([dl[i, :d] for i, d in enumerate(cp.lm_dim)])
    assert np.allclose(dx, full[:n_p], atol=1e-8 * max(1.0, np.abs(full).max()))
    assert np.allclose(dl_flat, full[n_p:], atol=1e-8 * max(1.0, np.abs(full).max()))


def test_schur_backends_agree(rng):
    prob, cp, lin = _linearized(rng)
    args = (lin.pose_idx, lin.lm_idx, lin.Jp, lin.Jl, lin.r, len(cp.free_ids), len(cp.lm_ids), cp.lm_dim, 1e-3, lin.H0, lin.g0)
    a = schur_reduce(*args, backend="numpy")
    b = schur_reduce(*args, backend="numba")
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-10, atol=1e-9)


def test_block_hessian_matches_dense(rng):
    m = perturb(rng, toy_map(rng, n_keyframes=6, n_landmarks=9), keep=())
    prob = ba_problem(m, huber=0.1)
    bh = build_block_hessian(prob, marginalized=[4, 5])
    H, _ = dense_normal_equations(prob)
    n_p = 6 * len(prob.poses)
    # dense oracle orders [poses (sorted), landmarks]; the block form orders [landmarks, retained, marginalized]
    order = np.concatenate([np.arange(n_p, H.shape[0]), np.arange(n_p)])
    assert bh.retained == [0, 1, 2, 3] and bh.marginalized == [4, 5]
    assert np.allclose(bh.dense(), H[np.ix_(order, order)], atol=1e-9)


# ---------------------------------------------------------------------------
# landmark merging
# ---------------------------------------------------------------------------


def test_merge_unions_duplicates_and_is_idempotent(rng):
    m = toy_map(rng, n_keyframes=6, n_landmarks=6)
    src = m.landmarks[0]
    dup = Landmark(100, src.kind, src.label, src.params.copy(), src.centroid + 0.1, src.radius)
    m.landmarks[100] = dup
    k = next(iter(src.observers))
    obs = dict(m.keyframes[k].observations)[0]
    m.keyframes[k].observations.append((100, obs))
    m.rebuild_observers()
    remap = merge_landmarks(m)
    assert remap == {100: 0} or remap == {0: 100}
    before = {i: l.params.copy() for i, l in m.landmarks.items()}
    assert merge_landmarks(m) == {}
    assert all(np.array_equal(before[i], l.params) for i, l in m.landmarks.items())
    m.validate()
