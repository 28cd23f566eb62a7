"""Hot loops with a numba path and a numpy/scipy path.

Both paths implement the same arithmetic and the same search order, so the
backends agree to round-off (Schur reduction) or exactly (max clique).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ._accel import njit, use_numba

# ---------------------------------------------------------------------------
# maximum clique: branch and bound with a greedy colouring bound
# ---------------------------------------------------------------------------


def _relabel(adj: np.ndarray):
    """Order vertices by degree (descending, ties by index)."""
    deg = adj.sum(axis=1)
    perm = np.lexsort((np.arange(len(adj)), -deg))
    return perm, np.ascontiguousarray(adj[np.ix_(perm, perm)])


@njit
def _colour_sort_nb(A, P, n_p, out_order, out_col):
    # P holds vertex labels in ascending order; colour classes are built by
    # scanning the uncoloured vertices in that order
    remaining = P[:n_p].copy()
    n_rem = n_p
    cls = np.empty(n_p, np.int64)
    k = 0
    pos = 0
    while n_rem > 0:
        k += 1
        n_cls = 0
        n_next = 0
        for t in range(n_rem):
            v = remaining[t]
            ok = True
            for c in range(n_cls):
                if A[v, cls[c]]:
                    ok = False
                    break
            if ok:
                cls[n_cls] = v
                n_cls += 1
                out_order[pos] = v
                out_col[pos] = k
                pos += 1
            else:
                remaining[n_next] = v
                n_next += 1
        n_rem = n_next


@njit
def _max_clique_nb(A, max_steps):
    n = A.shape[0]
    steps = 0
    best = np.empty(n, np.int64)
    best_size = 0
    R = np.empty(n + 1, np.int64)
    order = np.empty((n + 1, n), np.int64)
    col = np.empty((n + 1, n), np.int64)
    cursor = np.empty(n + 1, np.int64)
    buf = np.empty(n, np.int64)
    P0 = np.arange(n)
    _colour_sort_nb(A, P0, n, order[0], col[0])
    cursor[0] = n - 1
    depth = 0
    while depth >= 0:
        i = cursor[depth]
        if i < 0 or depth + col[depth, i] <= best_size:
            depth -= 1
            continue
        steps += 1
        if max_steps >= 0 and steps > max_steps:
            break
        v = order[depth, i]
        cursor[depth] = i - 1
        R[depth] = v
        m = 0
        for j in range(i):
            u = order[depth, j]
            if A[v, u]:
                buf[m] = u
                m += 1
        if m == 0:
            if depth + 1 > best_size:
                best_size = depth + 1
                best[:best_size] = R[:best_size]
            continue
        newP = np.sort(buf[:m])
        _colour_sort_nb(A, newP, m, order[depth + 1], col[depth + 1])
        cursor[depth + 1] = m - 1
        depth += 1
    return best[:best_size].copy()


class _OutOfSteps(Exception):
    pass


def _max_clique_py(A: np.ndarray, max_steps: int = -1) -> np.ndarray:
    n = len(A)
    steps = 0
    nbr = [0] * n
    for v in range(n):
        bits = 0
        for u in np.flatnonzero(A[v]):
            bits |= 1 << int(u)
        nbr[v] = bits
    best: list = []

    def colour_sort(P: int):
        order, cols = [], []
        U, k = P, 0
        while U:
            k += 1
            Q = U
            while Q:
                low = Q & -Q
                v = low.bit_length() - 1
                Q &= ~nbr[v] & ~low
                U &= ~low
                order.append(v)
                cols.append(k)
        return order, cols

    def expand(R: list, P: int):
        nonlocal best, steps
        order, cols = colour_sort(P)
        for i in range(len(order) - 1, -1, -1):
            if len(R) + cols[i] <= len(best):
                return
            steps += 1
            if 0 <= max_steps < steps:
                raise _OutOfSteps
            v = order[i]
            newP = P & nbr[v]
            R.append(v)
            if newP == 0:
                if len(R) > len(best):
                    best = list(R)
            else:
                expand(R, newP)
            R.pop()
            P &= ~(1 << v)

    if n:
        try:
            expand([], (1 << n) - 1)
        except _OutOfSteps:
            pass
    return np.array(best, dtype=np.int64)


def max_clique(adj, backend: str | None = None, max_steps: int | None = None) -> np.ndarray:
    """Exact maximum clique of an undirected graph given as a boolean matrix.

    Returns sorted vertex indices. Deterministic: the first maximum clique met
    by the fixed search order wins. With ``max_steps`` the search stops after
    that many branchings and returns the largest clique seen so far, which is
    then a lower bound only; both backends count steps identically.
    """
    A = np.asarray(adj, dtype=bool)
    n = len(A)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    A = A & A.T
    np.fill_diagonal(A, False)
    perm, Ar = _relabel(A)
    budget = -1 if max_steps is None else int(max_steps)
    if use_numba(backend):
        found = _max_clique_nb(Ar, budget)
    else:
        found = _max_clique_py(Ar, budget)
    return np.sort(perm[found])


# ---------------------------------------------------------------------------
# Schur reduction of the landmark blocks in bundle adjustment
# ---------------------------------------------------------------------------


def _invert_blocks(H_ll: np.ndarray, lm_dim: np.ndarray) -> np.ndarray:
    """Invert padded 4x4 landmark blocks; 3-dim blocks keep a zero 4th row/col."""
    H = H_ll.copy()
    pad = lm_dim == 3
    H[pad, 3, 3] = 1.0
    D = np.linalg.inv(H)
    D[pad, 3, :] = 0.0
    D[pad, :, 3] = 0.0
    return D


@njit
def _schur_nb(pose_idx, lm_idx, Jp, Jl, r, n_pose, n_lm, lm_dim, lam, lm_ptr, lm_order, H0, g0):
    nf = pose_idx.shape[0]
    H_pp = H0.copy()
    g_p = g0.copy()
    H_ll = np.zeros((n_lm, 4, 4))
    g_l = np.zeros((n_lm, 4))
    W = np.zeros((nf, 6, 4))
    for f in range(nf):
        p = pose_idx[f]
        l = lm_idx[f]
        jp = Jp[f]
        jl = Jl[f]
        H_ll[l] += jl.T @ jl
        g_l[l] += jl.T @ r[f]
        if p >= 0:
            H_pp[6 * p:6 * p + 6, 6 * p:6 * p + 6] += jp.T @ jp
            g_p[6 * p:6 * p + 6] += jp.T @ r[f]
            W[f] = jp.T @ jl
    for i in range(6 * n_pose):
        H_pp[i, i] += lam * H_pp[i, i] + 1e-12
    D = np.zeros((n_lm, 4, 4))
    for l in range(n_lm):
        d = lm_dim[l]
        blk = H_ll[l, :d, :d].copy()
        for i in range(d):
            blk[i, i] += lam * blk[i, i] + 1e-12
        D[l, :d, :d] = np.linalg.inv(blk)
    for l in range(n_lm):
        Dl = D[l]
        for ia in range(lm_ptr[l], lm_ptr[l + 1]):
            a = lm_order[ia]
            pa = pose_idx[a]
            if pa < 0:
                continue
            WD = W[a] @ Dl
            g_p[6 * pa:6 * pa + 6] -= WD @ g_l[l]
            for ib in range(lm_ptr[l], lm_ptr[l + 1]):
                b = lm_order[ib]
                pb = pose_idx[b]
                if pb < 0:
                    continue
                H_pp[6 * pa:6 * pa + 6, 6 * pb:6 * pb + 6] -= WD @ W[b].T
    return H_pp, g_p, D, W, g_l


def _schur_np(pose_idx, lm_idx, Jp, Jl, r, n_pose, n_lm, lm_dim, lam, H0, g0):
    nf = len(pose_idx)
    rows = np.arange(4 * nf).reshape(nf, 4)
    # landmark Jacobian as a block-sparse matrix
    lr = np.repeat(rows, 4, axis=1).reshape(nf, 4, 4)
    lc = (4 * lm_idx[:, None, None] + np.arange(4)[None, None, :]).repeat(4, axis=1)
    JL = sp.csr_matrix((Jl.ravel(), (lr.ravel(), lc.ravel())), shape=(4 * nf, 4 * n_lm))
    live = pose_idx >= 0
    pr = np.repeat(rows[live], 6, axis=1).reshape(-1, 4, 6)
    pc = (6 * pose_idx[live][:, None, None] + np.arange(6)[None, None, :]).repeat(4, axis=1)
    JP = sp.csr_matrix((Jp[live].ravel(), (pr.ravel(), pc.ravel())), shape=(4 * nf, 6 * n_pose))
    rv = r.ravel()
    H_pp = (JP.T @ JP).toarray() + H0
    g_p = JP.T @ rv + g0
    H_pl = (JP.T @ JL).tocsr()
    Hl = (JL.T @ JL).tocsr()
    g_l = (JL.T @ rv).reshape(n_lm, 4)
    # pull the diagonal blocks without densifying the whole l x l matrix
    blocks = np.zeros((n_lm, 4, 4))
    coo = Hl.tocoo()
    same = coo.row // 4 == coo.col // 4
    np.add.at(blocks, (coo.row[same] // 4, coo.row[same] % 4, coo.col[same] % 4), coo.data[same])
    H_ll = blocks
    diag_idx = np.arange(4)
    H_ll[:, diag_idx, diag_idx] += lam * H_ll[:, diag_idx, diag_idx] + 1e-12
    H_ll[lm_dim == 3, 3, 3] = 0.0
    H_pp[np.diag_indices_from(H_pp)] += lam * np.diag(H_pp) + 1e-12
    D = _invert_blocks(H_ll, lm_dim)
    Dm = sp.block_diag(list(D), format="csr") if n_lm else sp.csr_matrix((0, 0))
    HD = H_pl @ Dm
    S = H_pp - (HD @ H_pl.T).toarray()
    b = g_p - HD @ g_l.ravel()
    W = np.zeros((nf, 6, 4))
    Wl = np.einsum("fri,frj->fij", Jp, Jl)
    W[live] = Wl[live]
    return S, b, D, W, g_l


def schur_reduce(pose_idx, lm_idx, Jp, Jl, r, n_pose, n_lm, lm_dim, lam, H0=None, g0=None, backend=None):
    """Eliminate landmarks from the damped normal equations.

    Inputs are per landmark-factor blocks padded to 4 residual rows and 4
    landmark columns; ``pose_idx`` is -1 for a fixed pose. ``H0``/``g0`` hold
    the undamped contribution of pose-only factors. Returns the reduced
    pose system ``(S, b)`` plus ``D`` (damped inverse landmark blocks), the
    per-factor ``W = Jp^T Jl`` and landmark gradients for back-substitution.
    Solving ``S dx = -b`` then ``dl = -D (g_l + sum W^T dx)`` gives the step.
    """
    pose_idx = np.ascontiguousarray(pose_idx, dtype=np.int64)
    lm_idx = np.ascontiguousarray(lm_idx, dtype=np.int64)
    lm_dim = np.ascontiguousarray(lm_dim, dtype=np.int64)
    Jp = np.ascontiguousarray(Jp, dtype=float)
    Jl = np.ascontiguousarray(Jl, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    H0 = np.zeros((6 * n_pose, 6 * n_pose)) if H0 is None else np.array(H0, dtype=float)
    g0 = np.zeros(6 * n_pose) if g0 is None else np.array(g0, dtype=float)
    if use_numba(backend):
        lm_order = np.argsort(lm_idx, kind="stable").astype(np.int64)
        lm_ptr = np.zeros(n_lm + 1, np.int64)
        np.cumsum(np.bincount(lm_idx, minlength=n_lm), out=lm_ptr[1:])
        return _schur_nb(pose_idx, lm_idx, Jp, Jl, r, n_pose, n_lm, lm_dim, float(lam), lm_ptr, lm_order, H0, g0)
    return _schur_np(pose_idx, lm_idx, Jp, Jl, r, n_pose, n_lm, lm_dim, float(lam), H0, g0)


def back_substitute(dx, pose_idx, lm_idx, D, W, g_l):
    """Landmark step ``dl = -D_l (g_l + sum_f W_f^T dx_pose(f))``."""
    n_lm = len(D)
    acc = g_l.copy()
    live = pose_idx >= 0
    if live.any():
        dxp = dx.reshape(-1, 6)[pose_idx[live]]
        np.add.at(acc, lm_idx[live], np.einsum("fij,fi->fj", W[live], dxp))
    return -np.einsum("lij,lj->li", D, acc).reshape(n_lm, 4)
