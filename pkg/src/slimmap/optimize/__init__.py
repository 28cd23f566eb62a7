"""Robust nonlinear least squares for pose graphs and bundle adjustment."""

from .factors import between_residuals, line_residuals, plane_residuals, prior_residuals
from .hessian import BlockHessian, build_block_hessian
from .mapping import apply_solution, ba_problem, pgo_problem
from .merge import merge_landmarks
from .problem import DisconnectedGraph, LandmarkFactor, PoseFactor, Problem
from .solvers import IllConditioned, LMConfig, SolveReport, solve_ba, solve_pgo

__all__ = [
    "BlockHessian",
    "DisconnectedGraph",
    "IllConditioned",
    "LMConfig",
    "LandmarkFactor",
    "PoseFactor",
    "Problem",
    "SolveReport",
    "apply_solution",
    "ba_problem",
    "between_residuals",
    "build_block_hessian",
    "line_residuals",
    "merge_landmarks",
    "pgo_problem",
    "plane_residuals",
    "prior_residuals",
    "solve_ba",
    "solve_pgo",
]
