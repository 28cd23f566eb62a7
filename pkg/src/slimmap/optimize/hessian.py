"""Gauss-Newton Hessian partitioned into landmark / retained / marginalized blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .problem import CompiledProblem, Problem


@dataclass
class BlockHessian:
    """Nine-block Hessian with landmarks first, then retained, then marginalized poses.

    ``H_ll`` is kept as padded 4x4 diagonal blocks; the coupling blocks with
    landmarks (``H_ln``, ``V_l``) are sparse and everything pose-sized is dense.
    """

    lm_ids: list
    retained: list
    marginalized: list
    lm_dim: np.ndarray
    H_ll: np.ndarray  # (M, 4, 4)
    H_ln: sp.csr_matrix  # (l, n)
    V_l: sp.csr_matrix  # (l, m)
    H_nn: np.ndarray
    V_n: np.ndarray
    H_mm: np.ndarray
    g: np.ndarray

    @property
    def lm_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.lm_dim)]).astype(np.int64)

    def dense(self) -> np.ndarray:
        """Assemble the full matrix (test oracle only)."""
        off = self.lm_offsets
        l = int(off[-1])
        n, m = self.H_nn.shape[0], self.H_mm.shape[0]
        H = np.zeros((l + n + m, l + n + m))
        for i, d in enumerate(self.lm_dim):
            H[off[i] : off[i] + d, off[i] : off[i] + d] = self.H_ll[i, :d, :d]
        H[:l, l : l + n] = self.H_ln.toarray()
        H[:l, l + n :] = self.V_l.toarray()
        H[l : l + n, l : l + n] = self.H_nn
        H[l : l + n, l + n :] = self.V_n
        H[l + n :, l + n :] = self.H_mm
        H[l:, :l] = H[:l, l:].T
        H[l + n :, l : l + n] = self.V_n.T
        return H


def build_block_hessian(problem: Problem, marginalized=()) -> BlockHessian:
    """Linearize ``problem`` (robust weights frozen at the current state) and partition it."""
    marg = set(marginalized)
    prob = Problem(problem.poses, problem.landmarks, problem.kinds, problem.pose_factors, problem.lm_factors, set())
    cp = CompiledProblem(prob)
    lin = cp.linearize(cp.initial_state())
    P = len(cp.pose_ids)
    nf = cp.n_lmf
    M = len(cp.lm_ids)
    # pose-pose part, including landmark-factor self terms
    H_pp = lin.H0.copy()
    g_p = lin.g0.copy()
    if nf:
        blocks = np.einsum("fri,frj->fij", lin.Jp, lin.Jp)
        for f in range(nf):
            p = lin.pose_idx[f]
            H_pp[6 * p : 6 * p + 6, 6 * p : 6 * p + 6] += blocks[f]
        np.add.at(g_p.reshape(P, 6), lin.pose_idx, np.einsum("fri,fr->fi", lin.Jp, lin.r))
    H_ll = np.zeros((M, 4, 4))
    g_l = np.zeros((M, 4))
    if nf:
        np.add.at(H_ll, lin.lm_idx, np.einsum("fri,frj->fij", lin.Jl, lin.Jl))
        np.add.at(g_l, lin.lm_idx, np.einsum("fri,fr->fi", lin.Jl, lin.r))
    lm_dim = cp.lm_dim
    off = np.concatenate([[0], np.cumsum(lm_dim)]).astype(np.int64)
    # landmark-pose coupling as a sparse (l, 6P) matrix
    W = np.einsum("fri,frj->fij", lin.Jl, lin.Jp)  # (nf, 4, 6)
    rows, cols, vals = [], [], []
    for f in range(nf):
        l, p = lin.lm_idx[f], lin.pose_idx[f]
        d = lm_dim[l]
        rr, cc = np.meshgrid(off[l] + np.arange(d), 6 * p + np.arange(6), indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(W[f, :d].ravel())
    L = int(off[-1])
    if nf:
        H_lp = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(L, 6 * P))
    else:
        H_lp = sp.csr_matrix((L, 6 * P))
    ret = [k for k in cp.pose_ids if k not in marg]
    mar = [k for k in cp.pose_ids if k in marg]
    pidx = {k: i for i, k in enumerate(cp.pose_ids)}
    cols_n = np.array([6 * pidx[k] + j for k in ret for j in range(6)], dtype=np.int64)
    cols_m = np.array([6 * pidx[k] + j for k in mar for j in range(6)], dtype=np.int64)
    g = np.concatenate([np.concatenate([g_l[i, : lm_dim[i]] for i in range(M)]) if M else np.zeros(0),
                        g_p[cols_n], g_p[cols_m]])
    return BlockHessian(
        lm_ids=list(cp.lm_ids),
        retained=ret,
        marginalized=mar,
        lm_dim=lm_dim,
        H_ll=H_ll,
        H_ln=H_lp[:, cols_n].tocsr(),
        V_l=H_lp[:, cols_m].tocsr(),
        H_nn=H_pp[np.ix_(cols_n, cols_n)],
        V_n=H_pp[np.ix_(cols_n, cols_m)],
        H_mm=H_pp[np.ix_(cols_m, cols_m)],
        g=g,
    )
