"""Factor pairs, objective values, column supports and SVD refactorization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .obs import active_columns, loss_value

#: Relative singular-value threshold used for numerical rank.
RANK_TOL = 1e-6
#: Singular values below this fraction of the largest are set to exact zero.
FLUSH_TOL = 1e-12


@dataclass(frozen=True)
class RegWeights:
    """Weights of the column l2,0 term (``lam``) and the ridge term (``mu``)."""

    lam: float
    mu: float

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not np.isfinite(self.mu) or self.mu <= 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")


@dataclass(frozen=True, eq=False)
class FactorPair:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise ValueError(f"incompatible factor shapes {self.U.shape} and {self.V.shape}")

    @property
    def r(self):
        return self.U.shape[1]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    @property
    def J_U(self):
        return nonzero_columns(self.U)

    @property
    def J_V(self):
        return nonzero_columns(self.V)


def nonzero_columns(M):
    """Indices of columns with at least one nonzero entry (exact test)."""
    return np.flatnonzero(np.any(np.asarray(M) != 0, axis=0))


def l20(M):
    return int(nonzero_columns(M).size)


def eval_F_mu(obs, fp, mu, loss=None):
    """``f(U V^T) + mu/2 (|U|_F^2 + |V|_F^2)``.

    ``loss`` may carry a precomputed ``f(U V^T)``.
    """
    U, V = fp.U, fp.V
    obs.check_factors(U, V)
    f = loss_value(obs, U, V) if loss is None else loss
    return f + 0.5 * mu * (float(np.vdot(U, U)) + float(np.vdot(V, V)))


def eval_phi(obs, fp, w, loss=None):
    """The full objective ``F_mu(U, V) + lam (|U|_{2,0} + |V|_{2,0})``."""
    smooth = eval_F_mu(obs, fp, w.mu, loss=loss)
    if w.lam == 0:
        return smooth
    return smooth + w.lam * (l20(fp.U) + l20(fp.V))


def gram_inner(A, B, C, D):
    """``<A B^T, C D^T>_F`` through r x r Gram products."""
    return float(np.sum((A.T @ C) * (B.T @ D)))


def product_norm(U, V):
    """``|U V^T|_F`` without forming the product."""
    J = active_columns(U, V)
    if J.size == 0:
        return 0.0
    U, V = U[:, J], V[:, J]
    return float(np.sqrt(max(np.sum((U.T @ U) * (V.T @ V)), 0.0)))


def product_distance_sq(A, B, C, D):
    """``|A B^T - C D^T|_F^2`` via trace identities, clipped at zero."""
    JA = active_columns(A, B)
    JC = active_columns(C, D)
    A, B, C, D = A[:, JA], B[:, JA], C[:, JC], D[:, JC]
    val = gram_inner(A, B, A, B) - 2.0 * gram_inner(A, B, C, D) + gram_inner(C, D, C, D)
    return max(val, 0.0)


def numerical_rank(fp, rel_tol=RANK_TOL):
    """Rank of ``U V^T`` from QR factors of U and V and an r x r SVD."""
    if not 0 < rel_tol < 1:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    J = active_columns(fp.U, fp.V)
    if J.size == 0:
        return 0
    R_U = np.linalg.qr(fp.U[:, J], mode="r")
    R_V = np.linalg.qr(fp.V[:, J], mode="r")
    s = np.linalg.svd(R_U @ R_V.T, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def balance_residual(fp):
    """``|U^T U - V^T V|_F``; vanishes at critical points."""
    return float(np.linalg.norm(fp.U.T @ fp.U - fp.V.T @ fp.V))


def _fix_signs(W, Zt):
    # first nonzero entry of each left singular vector made nonnegative
    idx = np.argmax(W != 0, axis=0)
    signs = np.sign(W[idx, np.arange(W.shape[1])])
    signs[signs == 0] = 1.0
    return W * signs, Zt * signs[:, None]


def _complete_basis(B, total, seed=0):
    """Orthonormal columns extending the orthonormal columns of ``B`` to ``total``."""
    n, k = B.shape
    if k >= total:
        return B[:, :total]
    if k == 0 and total == n:
        return np.eye(n)
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((n, total - k))
    E -= B @ (B.T @ E)
    Qe, _ = np.linalg.qr(E)
    Qe -= B @ (B.T @ Qe)
    Qe, _ = np.linalg.qr(Qe)
    return np.hstack([B, Qe])


def svd_refactor(A, P, D, *, check=True, complete=True):
    """Rebalance ``A (P D)^T`` through a thin SVD of ``A D``.

    With ``A D = P_hat diag(d_hat)^2 Q_hat^T`` this returns
    ``U_hat = P_hat diag(d_hat)`` and ``V_hat = P Q_hat diag(d_hat)``, so that
    ``U_hat V_hat^T = A D P^T`` and ``U_hat^T U_hat = V_hat^T V_hat = diag(d_hat)^2``.

    Parameters
    ----------
    A : ndarray, shape (n, r)
    P : ndarray, shape (m, r)
        Orthonormal columns.
    D : ndarray
        Nonnegative diagonal, either as a length-r vector or an r x r matrix.
    check : bool
        Validate orthonormality of ``P`` and the sign of ``D``.
    complete : bool
        Extend ``P_hat`` and ``Q_hat`` to full orthonormal column sets. The
        solvers skip this: columns attached to zero singular values are never
        read there.

    Returns
    -------
    U_hat, V_hat, P_hat, Q_hat, d_hat
        ``d_hat`` is returned as a vector, sorted nonincreasingly. Singular
        values below ``FLUSH_TOL * sigma_1`` are exact zeros and the matching
        columns of ``U_hat`` and ``V_hat`` are exactly zero.
    """
    A = np.asarray(A, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    d = np.diag(D).copy() if D.ndim == 2 else D.copy()
    n, r = A.shape
    if P.shape[1] != r or d.shape != (r,):
        raise ValueError(f"shape mismatch: A {A.shape}, P {P.shape}, D {D.shape}")
    if check:
        if np.any(d < 0):
            raise ValueError("D must be nonnegative")
        if np.linalg.norm(P.T @ P - np.eye(r)) > 1e-8:
            raise ValueError("P must have orthonormal columns")

    J = np.flatnonzero((d != 0) & np.any(A != 0, axis=0))
    P_hat = np.zeros((n, r))
    Q_hat = np.zeros((r, r))
    d_hat = np.zeros(r)
    k = 0
    if J.size:
        W, s, Zt = np.linalg.svd(A[:, J] * d[J], full_matrices=False)
        W, Zt = _fix_signs(W, Zt)
        k = s.size
        s[s < FLUSH_TOL * s[0]] = 0.0
        P_hat[:, :k] = W
        Q_hat[J, :k] = Zt.T
        d_hat[:k] = np.sqrt(s)
    if complete and k < r:
        # R^n holds at most n orthonormal columns; any further ones stay zero
        width = min(n, r)
        P_hat[:, :width] = _complete_basis(P_hat[:, :k], width)
        Q_hat = _complete_basis(Q_hat[:, :k], r)

    U_hat = P_hat * d_hat
    V_hat = np.zeros((P.shape[0], r))
    live = np.flatnonzero(d_hat)
    if live.size:
        V_hat[:, live] = (P[:, J] @ Q_hat[J][:, live]) * d_hat[live]
    return U_hat, V_hat, P_hat, Q_hat, d_hat


def top_singular_triplets(M, k):
    """Leading ``k`` singular triplets of a (sparse) matrix, largest first.

    Uses ARPACK Lanczos iterations with a fixed starting vector; falls back to
    a dense SVD when ``k`` is too close to ``min(M.shape)`` for ARPACK.
    """
    n, m = M.shape
    if k < 1 or k > min(n, m):
        raise ValueError(f"k must lie in [1, {min(n, m)}], got {k}")
    if k >= min(n, m) - 1 or min(n, m) <= 64:
        dense = M.toarray() if hasattr(M, "toarray") else np.asarray(M)
        W, s, Zt = np.linalg.svd(dense, full_matrices=False)
        W, s, Zt = W[:, :k], s[:k], Zt[:k]
    else:
        v0 = np.ones(min(n, m)) / np.sqrt(min(n, m))
        W, s, Zt = spla.svds(M, k=k, v0=v0, tol=1e-10)
        order = np.argsort(s)[::-1]
        W, s, Zt = W[:, order], s[order], Zt[order]
    W, Zt = _fix_signs(W, Zt)
    return W, s, Zt.T


def spectral_init(obs, r):
    """``(P_1 S^{1/2}, Q_1 S^{1/2})`` from the top-r SVD of ``M_Omega``."""
    P1, s, Q1 = top_singular_triplets(obs.to_sparse(), r)
    root = np.sqrt(s)
    return FactorPair(P1 * root, Q1 * root)


def write_factors(path, fp):
    """Dump a factor pair as text: header ``n m r``, then rows of U, then rows of V."""
    n, m = fp.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {m} {fp.r}\n")
        for M in (fp.U, fp.V):
            for row in M:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_factors(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: expected header 'n m r'")
        n, m, r = map(int, header)
        data = np.loadtxt(fh, ndmin=2) if r > 0 else np.zeros((n + m, 0))
    if data.shape != (n + m, r):
        raise ValueError(f"{path}: expected {(n + m, r)} values, found {data.shape}")
    return FactorPair(data[:n].copy(), data[n:].copy())

