"""Keyframe sparsification and nonlinear factor recovery.

After bundle adjustment the map is thinned to a spatially sparse keyframe
set. Every removed keyframe is marginalized out of the Gauss-Newton
information, and the resulting dense marginal is replaced by a square
skeleton of recovered factors: one observation factor per landmark (to its
nearest kept keyframe), a minimum spanning tree of relative-pose factors and
one prior. Each factor's information is the inverse of its residual
covariance under the marginal, which is the KL-optimal choice when the
stacked recovered Jacobian is square.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.csgraph import minimum_spanning_tree

from .geometry import Pose
from .mapmodel import PARAM_DIM, Keyframe, Kind, RecoveredFactor, SlimMap
from .optimize.factors import between_residuals, line_residuals, plane_residuals, prior_residuals
from .optimize.hessian import BlockHessian, build_block_hessian
from .optimize.mapping import ba_problem
from .register import plane_basis


class SingularBlock(np.linalg.LinAlgError):
    pass


class NonPSD(np.linalg.LinAlgError):
    pass


FACTOR_DIM = {"prior": 6, "relpose": 6, "line": 4, "plane": 3}


@dataclass
class ReconstructedTopology:
    retained: list
    marginalized: list
    landmark_anchor: dict  # landmark id -> retained keyframe id
    landmark_kind: dict  # landmark id -> Kind
    edges: list  # (a, b) retained keyframe pairs, a < b
    prior: int

    def factors(self) -> list:
        """Skeleton entries ``(kind, keyframes, landmark)`` in a fixed order."""
        out = [("prior", (self.prior,), -1)]
        out += [("relpose", e, -1) for e in self.edges]
        for lid in sorted(self.landmark_anchor):
            kind = "line" if self.landmark_kind[lid] == Kind.LINE else "plane"
            out.append((kind, (self.landmark_anchor[lid],), lid))
        return out

    def residual_dim(self) -> int:
        return sum(FACTOR_DIM[k] for k, _, _ in self.factors())

    def state_dim(self) -> int:
        return 6 * len(self.retained) + sum(PARAM_DIM[k] for k in self.landmark_kind.values())


def sparsify_keyframes(m: SlimMap, min_spacing: float) -> ReconstructedTopology:
    """Greedy spatial thinning (oldest first) plus the recovered-factor skeleton."""
    ids = m.keyframe_ids()
    if not ids:
        raise ValueError("map has no keyframes")
    kept: list = []
    kept_pos: list = []
    for k in ids:
        p = m.keyframes[k].pose.translation
        if all(np.linalg.norm(p - q) >= min_spacing for q in kept_pos) or not kept:
            kept.append(k)
            kept_pos.append(p)
    kept_set = set(kept)
    marg = [k for k in ids if k not in kept_set]
    P = np.array(kept_pos)
    anchor = {}
    for lid in sorted(m.landmarks):
        d = np.linalg.norm(P - m.landmarks[lid].centroid, axis=1)
        anchor[lid] = kept[int(np.argmin(d))]  # argmin takes the first, i.e. lowest id, on ties
    edges = []
    if len(kept) > 1:
        D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
        # csgraph treats zeros as missing edges; a tiny offset keeps coincident keyframes connected
        tree = minimum_spanning_tree(np.triu(D + 1e-9, 1)).tocoo()
        edges = sorted((min(kept[i], kept[j]), max(kept[i], kept[j])) for i, j in zip(tree.row, tree.col))
    kinds = {lid: m.landmarks[lid].kind for lid in anchor}
    return ReconstructedTopology(kept, marg, anchor, kinds, edges, kept[0])


def _synth_points(m: SlimMap, lid: int, pose: Pose) -> np.ndarray:
    """Points on the landmark around its centroid, in the keyframe frame."""
    lm = m.landmarks[lid]
    c = lm.project(lm.centroid)
    h = max(1.0, 0.5 * lm.radius)
    if lm.kind == Kind.LINE:
        v, _ = lm.point_normal()
        pts = np.stack([c + h * v, c - h * v])
    else:
        B = plane_basis(lm.normal)
        s = np.sqrt(3.0) / 2.0
        pts = np.stack([c + h * B[:, 0], c - 0.5 * h * B[:, 0] + s * h * B[:, 1], c - 0.5 * h * B[:, 0] - s * h * B[:, 1]])
    return pose.inverse().apply(pts)


def measurements_at_mean(m: SlimMap, topo: ReconstructedTopology) -> list:
    """Measurements that zero every skeleton residual at the current state."""
    out = []
    for kind, kfs, lid in topo.factors():
        if kind == "prior":
            out.append(m.keyframes[kfs[0]].pose)
        elif kind == "relpose":
            a, b = (m.keyframes[k].pose for k in kfs)
            out.append(a.inverse() @ b)
        else:
            out.append(_synth_points(m, lid, m.keyframes[kfs[0]].pose))
    return out


# ---------------------------------------------------------------------------
# covariance recovery
# ---------------------------------------------------------------------------


@dataclass
class CovarianceBlocks:
    """Marginal covariance pieces over [landmarks, retained poses].

    ``ll`` holds only the diagonal landmark blocks (padded to 4x4).
    """

    ll: np.ndarray
    ln: np.ndarray
    nn: np.ndarray
    lm_dim: np.ndarray
    lm_offsets: np.ndarray


def _pad_rows(X: np.ndarray, off: np.ndarray, dims: np.ndarray) -> np.ndarray:
    """(L, k) stacked landmark rows -> (M, 4, k) with zero padding."""
    M = len(dims)
    out = np.zeros((M, 4, X.shape[1]))
    for i in range(M):
        out[i, : dims[i]] = X[off[i] : off[i] + dims[i]]
    return out


def _unpad_rows(Y: np.ndarray, dims: np.ndarray) -> np.ndarray:
    return np.concatenate([Y[i, : dims[i]] for i in range(len(dims))]) if len(dims) else np.zeros((0, Y.shape[-1]))


def _block_mul(Dp: np.ndarray, X: np.ndarray, off, dims) -> np.ndarray:
    """Block-diagonal ``D @ X`` without forming D."""
    if X.shape[1] == 0 or len(dims) == 0:
        return np.zeros_like(X)
    return _unpad_rows(np.einsum("lij,ljk->lik", Dp, _pad_rows(X, off, dims)), dims)


def _spd_inverse(A: np.ndarray, err=NonPSD) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky, with a tiny shift fallback."""
    A = 0.5 * (A + A.T)
    n = len(A)
    if n == 0:
        return A.copy()
    try:
        c = sla.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        try:
            c = sla.cho_factor(A + 1e-12 * max(np.trace(A) / n, 1.0) * np.eye(n), lower=True, check_finite=False)
        except np.linalg.LinAlgError as e:
            raise err("matrix is not positive definite") from e
    return sla.cho_solve(c, np.eye(n), check_finite=False)


def invert_landmark_blocks(H_ll: np.ndarray, lm_dim: np.ndarray) -> np.ndarray:
    D = np.zeros_like(H_ll)
    for i, d in enumerate(lm_dim):
        D[i, :d, :d] = _spd_inverse(H_ll[i, :d, :d], SingularBlock)
    return D


def recover_sparse(H: BlockHessian) -> CovarianceBlocks:
    """Marginal covariance blocks via landmark-block elimination.

    Only the diagonal landmark blocks of the landmark covariance are formed;
    every landmark-sized operand is either block diagonal or has a pose-sized
    second dimension.
    """
    dims, off = H.lm_dim, H.lm_offsets
    Dp = invert_landmark_blocks(H.H_ll, dims)
    H_ln = H.H_ln.toarray()
    V_l = H.V_l.toarray()
    P = _block_mul(Dp, H_ln, off, dims)
    Q = _spd_inverse(H.H_nn - H_ln.T @ P)
    m = H.H_mm.shape[0]
    PQ = P @ Q
    if m:
        DV = _block_mul(Dp, V_l, off, dims)
        PtV = P.T @ V_l
        QV = Q @ H.V_n
        X = PtV.T @ QV  # V_l^T P Q V_n
        R_inv = H.H_mm - V_l.T @ DV - PtV.T @ Q @ PtV + X + X.T - H.V_n.T @ QV
        R = _spd_inverse(R_inv)
        try:
            Rc = np.linalg.cholesky(0.5 * (R + R.T))
        except np.linalg.LinAlgError as e:
            raise NonPSD("marginal Schur complement is indefinite") from e
        G = Q @ (PtV - H.V_n) @ Rc
        W_l = DV @ Rc + P @ G
        W_n = -G
    else:
        W_l = np.zeros((P.shape[0], 0))
        W_n = np.zeros((Q.shape[0], 0))
    ll = Dp.copy()
    Pp = _pad_rows(P, off, dims)
    PQp = _pad_rows(PQ, off, dims)
    Wp = _pad_rows(W_l, off, dims)
    ll += np.einsum("lik,ljk->lij", PQp, Pp) + np.einsum("lik,ljk->lij", Wp, Wp)
    ln = -PQ + W_l @ W_n.T
    nn = Q + W_n @ W_n.T
    return CovarianceBlocks(ll, ln, 0.5 * (nn + nn.T), dims, off)


def dense_marginal_covariance(H: BlockHessian) -> np.ndarray:
    """Oracle: invert the Schur complement of the marginalized block densely."""
    A = H.dense()
    r = int(H.lm_offsets[-1]) + H.H_nn.shape[0]
    Hrr, Hrm, Hmm = A[:r, :r], A[:r, r:], A[r:, r:]
    S = Hrr - Hrm @ np.linalg.solve(Hmm, Hrm.T) if Hmm.size else Hrr
    return np.linalg.inv(S)


def covariance_from_dense(Sigma: np.ndarray, H: BlockHessian) -> CovarianceBlocks:
    """Slice a dense marginal covariance into the blocks used for recovery."""
    dims, off = H.lm_dim, H.lm_offsets
    L = int(off[-1])
    ll = np.zeros((len(dims), 4, 4))
    for i, d in enumerate(dims):
        ll[i, :d, :d] = Sigma[off[i] : off[i] + d, off[i] : off[i] + d]
    return CovarianceBlocks(ll, Sigma[:L, L:], Sigma[L:, L:], dims, off)


# ---------------------------------------------------------------------------
# factor recovery
# ---------------------------------------------------------------------------


@dataclass
class FactorJacobian:
    kind: str
    landmark: int  # index into the landmark blocks, or -1
    poses: tuple  # indices into the retained poses
    J_lm: np.ndarray | None
    J_poses: tuple = field(default_factory=tuple)


def skeleton_jacobians(m: SlimMap, topo: ReconstructedTopology, z: list, lm_ids: list, retained: list) -> list:
    """Unwhitened residual Jacobians of every skeleton factor at the current state."""
    lidx = {k: i for i, k in enumerate(lm_ids)}
    pidx = {k: i for i, k in enumerate(retained)}
    out = []
    for (kind, kfs, lid), zk in zip(topo.factors(), z):
        poses = [m.keyframes[k].pose for k in kfs]
        R = np.array([p.rotation for p in poses])
        t = np.array([p.translation for p in poses])
        if kind == "prior":
            _, J = prior_residuals(R, t, zk.rotation[None], zk.translation[None])
            out.append(FactorJacobian(kind, -1, (pidx[kfs[0]],), None, (J[0],)))
        elif kind == "relpose":
            _, Ja, Jb = between_residuals(R[:1], t[:1], R[1:], t[1:], zk.rotation[None], zk.translation[None])
            out.append(FactorJacobian(kind, -1, (pidx[kfs[0]], pidx[kfs[1]]), None, (Ja[0], Jb[0])))
        else:
            fn = line_residuals if kind == "line" else plane_residuals
            _, Jp, Jl = fn(R, t, m.landmarks[lid].params[None], np.asarray(zk)[None])
            out.append(FactorJacobian(kind, lidx[lid], (pidx[kfs[0]],), Jl[0], (Jp[0],)))
    return out


def factor_covariance(cov: CovarianceBlocks, fj: FactorJacobian) -> np.ndarray:
    """``J Sigma J^T`` for one factor through the block expansion."""
    blocks = []
    if fj.J_lm is not None:
        i = fj.landmark
        d = cov.lm_dim[i]
        blocks.append(("l", i, fj.J_lm[:, :d]))
    for p, J in zip(fj.poses, fj.J_poses):
        blocks.append(("n", p, J))
    dim = blocks[0][2].shape[0]
    S = np.zeros((dim, dim))
    for ka, ia, Ja in blocks:
        for kb, ib, Jb in blocks:
            S += Ja @ _cov_block(cov, ka, ia, kb, ib) @ Jb.T
    return 0.5 * (S + S.T)


def _cov_block(cov: CovarianceBlocks, ka, ia, kb, ib) -> np.ndarray:
    if ka == "l" and kb == "l":
        if ia != ib:
            raise ValueError("off-diagonal landmark blocks are never formed")
        d = cov.lm_dim[ia]
        return cov.ll[ia, :d, :d]
    if ka == "l":
        o, d = cov.lm_offsets[ia], cov.lm_dim[ia]
        return cov.ln[o : o + d, 6 * ib : 6 * ib + 6]
    if kb == "l":
        return _cov_block(cov, kb, ib, ka, ia).T
    return cov.nn[6 * ia : 6 * ia + 6, 6 * ib : 6 * ib + 6]


def clamp_psd(L: np.ndarray, rel: float = 1e-9) -> tuple:
    """Symmetrise and zero small negative eigenvalues; returns ``(matrix, clamped_count)``."""
    L = 0.5 * (L + L.T)
    w, V = np.linalg.eigh(L)
    bad = w < 0
    if not bad.any():
        return L, 0
    tol = rel * max(abs(float(np.trace(L))), 1e-300)
    if np.any(w[bad] < -tol):
        raise NonPSD(f"recovered information has eigenvalue {w.min():.3g}")
    w = np.where(bad, 0.0, w)
    return (V * w) @ V.T, int(bad.sum())


def recover_dense(cov: CovarianceBlocks, jacobians: list, max_condition: float = 1e12) -> tuple:
    """Recovered information per factor; returns ``(infos, clamped_count)``."""
    infos, clamped = [], 0
    for fj in jacobians:
        S = factor_covariance(cov, fj)
        w = np.linalg.eigvalsh(S)
        if w[0] <= 0 or w[-1] / w[0] > max_condition:
            raise SingularBlock(f"{fj.kind} factor covariance is singular (eigenvalues {w[0]:.3g}..{w[-1]:.3g})")
        Lam, c = clamp_psd(_spd_inverse(S, SingularBlock))
        infos.append(Lam)
        clamped += c
    return infos, clamped


def recovered_information(jacobians: list, infos: list, cov: CovarianceBlocks, n_retained: int) -> np.ndarray:
    """Dense ``J^T Lambda J`` over [landmarks, retained poses] (test oracle)."""
    L = int(cov.lm_offsets[-1])
    N = L + 6 * n_retained
    H = np.zeros((N, N))
    for fj, Lam in zip(jacobians, infos):
        J = np.zeros((Lam.shape[0], N))
        if fj.J_lm is not None:
            o, d = cov.lm_offsets[fj.landmark], cov.lm_dim[fj.landmark]
            J[:, o : o + d] = fj.J_lm[:, :d]
        for p, Jp in zip(fj.poses, fj.J_poses):
            J[:, L + 6 * p : L + 6 * p + 6] += Jp
        H += J.T @ Lam @ J
    return H


def stacked_jacobian(jacobians: list, cov: CovarianceBlocks, n_retained: int) -> np.ndarray:
    L = int(cov.lm_offsets[-1])
    rows = []
    for fj in jacobians:
        J = np.zeros((FACTOR_DIM[fj.kind], L + 6 * n_retained))
        if fj.J_lm is not None:
            o, d = cov.lm_offsets[fj.landmark], cov.lm_dim[fj.landmark]
            J[:, o : o + d] = fj.J_lm[:, :d]
        for p, Jp in zip(fj.poses, fj.J_poses):
            J[:, L + 6 * p : L + 6 * p + 6] += Jp
        rows.append(J)
    return np.concatenate(rows) if rows else np.zeros((0, L + 6 * n_retained))


def gaussian_kld(Sigma_p: np.ndarray, Lambda_q: np.ndarray) -> float:
    """KL(p || q) in nats for zero-mean-offset Gaussians given covariance of p and information of q."""
    k = len(Sigma_p)
    M = Lambda_q @ Sigma_p
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        return float("inf")
    return float(0.5 * (np.trace(M) - k - logdet))


# ---------------------------------------------------------------------------
# map-level driver
# ---------------------------------------------------------------------------


@dataclass
class MarginalizationResult:
    map: SlimMap
    topology: ReconstructedTopology
    clamped: int


def marginalize_map(m: SlimMap, min_spacing: float, huber: float | None = 0.1, details: bool = False):
    """Thin the keyframes of ``m`` and replace its factors by recovered ones.

    ``m`` must be at a converged bundle-adjustment state. Returns the new
    map (or a MarginalizationResult when ``details`` is set).
    """
    topo = sparsify_keyframes(m, min_spacing)
    z = measurements_at_mean(m, topo)
    problem = ba_problem(m, huber)
    missing = set(m.landmarks) - set(problem.landmarks)
    if missing:
        raise ValueError(f"landmarks without factors: {sorted(missing)[:5]}")
    H = build_block_hessian(problem, topo.marginalized)
    cov = recover_sparse(H)
    jac = skeleton_jacobians(m, topo, z, H.lm_ids, H.retained)
    infos, clamped = recover_dense(cov, jac)
    out = SlimMap(sessions=list(m.sessions))
    for k in topo.retained:
        kf = m.keyframes[k]
        out.keyframes[k] = Keyframe(k, kf.pose, kf.session, kf.index)
    for lid, lm in m.landmarks.items():
        out.landmarks[lid] = lm
    for (kind, kfs, lid), zk, Lam in zip(topo.factors(), z, infos):
        out.recovered.append(RecoveredFactor(kind, tuple(kfs), lid, zk, Lam))
    out = out.copy()
    out.rebuild_observers()
    if details:
        return MarginalizationResult(out, topo, clamped)
    return out
