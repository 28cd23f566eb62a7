"""Levenberg-Marquardt drivers for pose graphs and bundle adjustment."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..kernels import back_substitute, schur_reduce
from .problem import CompiledProblem, Linearization, Problem


class IllConditioned(RuntimeError):
    pass


@dataclass(frozen=True)
class LMConfig:
    max_iterations: int = 100
    rel_tol: float = 1e-8
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    max_lambda: float = 1e10
    step_tol: float = 1e-10
    max_condition: float = 1e12


@dataclass
class SolveReport:
    iterations: int
    accepted: int
    initial_cost: float
    final_cost: float
    seconds: float
    costs: list


def _cho_solve(A: np.ndarray, b: np.ndarray, max_condition: float | None = None) -> np.ndarray:
    c, low = sla.cho_factor(A, check_finite=False)
    if max_condition is not None:
        d = np.abs(np.diag(c))
        if d.min() <= 0 or (d.max() / d.min()) ** 2 > max_condition:
            raise IllConditioned(f"reduced system condition estimate {(d.max() / max(d.min(), 1e-300)) ** 2:.3g}")
    return sla.cho_solve((c, low), b, check_finite=False)


def _dense_step(lin: Linearization, lam: float):
    H = lin.H0.copy()
    H[np.diag_indices_from(H)] += lam * np.diag(H) + 1e-12
    return _cho_solve(H, -lin.g0), None


def _schur_step(cp: CompiledProblem, lin: Linearization, lam: float, backend, check: float | None):
    n_pose = len(cp.free_ids)
    S, b, D, W, gl = schur_reduce(
        lin.pose_idx, lin.lm_idx, lin.Jp, lin.Jl, lin.r, n_pose, len(cp.lm_ids), cp.lm_dim, lam,
        lin.H0, lin.g0, backend=backend,
    )
    dx = _cho_solve(S, -b, check) if n_pose else np.zeros(0)
    dl = back_substitute(dx, lin.pose_idx, lin.lm_idx, D, W, gl)
    return dx, dl


def levenberg_marquardt(problem: Problem, cfg: LMConfig = LMConfig(), backend=None) -> SolveReport:
    """Minimise the robustified cost of ``problem`` in place."""
    t0 = time.perf_counter()
    problem.check_connected()
    cp = CompiledProblem(problem)
    state = cp.initial_state()
    lin = cp.linearize(state)
    cost0 = cost = lin.cost
    costs = [cost]
    lam = cfg.lambda0
    has_lm = cp.n_lmf > 0
    iterations = accepted = 0
    check = cfg.max_condition
    while iterations < cfg.max_iterations:
        iterations += 1
        try:
            if has_lm:
                dx, dl = _schur_step(cp, lin, lam, backend, check)
            else:
                dx, dl = _dense_step(lin, lam)
        except np.linalg.LinAlgError:
            lam *= cfg.lambda_up
            if lam > cfg.max_lambda:
                break
            continue
        check = None  # condition is audited on the first reduced system only
        step_norm = np.linalg.norm(dx) + (np.linalg.norm(dl) if dl is not None else 0.0)
        if step_norm < cfg.step_tol:
            break
        cand = cp.retract(state, dx, dl)
        new_cost = cp.cost(cand)
        if np.isfinite(new_cost) and new_cost <= cost:
            rel = (cost - new_cost) / max(cost, 1e-300)
            state, cost = cand, new_cost
            accepted += 1
            costs.append(cost)
            lam = max(lam * cfg.lambda_down, 1e-12)
            if rel < cfg.rel_tol:
                break
            lin = cp.linearize(state)
        else:
            lam *= cfg.lambda_up
            if lam > cfg.max_lambda:
                break
    cp.write_back(state)
    return SolveReport(iterations, accepted, cost0, cost, time.perf_counter() - t0, costs)


def solve_pgo(problem: Problem, cfg: LMConfig = LMConfig()) -> SolveReport:
    """Pose-graph optimisation; ``problem`` must hold no landmark factors."""
    if problem.lm_factors:
        raise ValueError("pose graph problems take pose factors only")
    return levenberg_marquardt(problem, cfg)


def solve_ba(problem: Problem, cfg: LMConfig = LMConfig(), backend=None) -> SolveReport:
    """Bundle adjustment with landmark Schur elimination."""
    return levenberg_marquardt(problem, cfg, backend)


def dense_normal_equations(problem: Problem):
    """Full ``(H, g)`` over [free poses, landmarks] built densely (test oracle)."""
    cp = CompiledProblem(problem)
    lin = cp.linearize(cp.initial_state())
    n_p = 6 * len(cp.free_ids)
    offs = np.concatenate([[0], np.cumsum(cp.lm_dim)]) + n_p
    n = int(offs[-1])
    J = np.zeros((4 * cp.n_lmf, n))
    for f in range(cp.n_lmf):
        p, l = lin.pose_idx[f], lin.lm_idx[f]
        if p >= 0:
            J[4 * f : 4 * f + 4, 6 * p : 6 * p + 6] = lin.Jp[f]
        J[4 * f : 4 * f + 4, offs[l] : offs[l + 1]] = lin.Jl[f, :, : cp.lm_dim[l]]
    H = J.T @ J
    g = J.T @ lin.r.reshape(-1)
    H[:n_p, :n_p] += lin.H0
    g[:n_p] += lin.g0
    return H, g
