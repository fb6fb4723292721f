"""Observed entries and the least-squares completion loss.

All heavy work is done over the observed index set only; the n x m matrix
``U @ V.T`` is never formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit


@njit(cache=True)
def _omega_products(U, V, rows, cols):
    out = np.empty(rows.shape[0])
    k = U.shape[1]
    for t in range(rows.shape[0]):
        i = rows[t]
        j = cols[t]
        s = 0.0
        for c in range(k):
            s += U[i, c] * V[j, c]
        out[t] = s
    return out


def active_columns(U, V):
    """Indices of columns that are nonzero in both factors.

    Only these columns contribute to ``U @ V.T``.
    """
    return np.flatnonzero(np.any(U != 0, axis=0) & np.any(V != 0, axis=0))


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed entries ``M_ij`` for ``(i, j)`` in the index set Omega.

    Entries are stored sorted by (row, col). A CSR pattern (row-sorted) and a
    permutation into column order are built once so that both ``R @ V`` and
    ``R.T @ U`` run on contiguous data.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    _csr_indptr: np.ndarray = field(repr=False)
    _csc_indptr: np.ndarray = field(repr=False)
    _csc_perm: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, n_rows, n_cols, rows, cols, values):
        n_rows = int(n_rows)
        n_cols = int(n_cols)
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        values = np.asarray(values, dtype=np.float64)
        if n_rows < 1 or n_cols < 1:
            raise ValueError(f"dimensions must be positive, got ({n_rows}, {n_cols})")
        if rows.ndim != 1 or rows.shape != cols.shape or rows.shape != values.shape:
            raise ValueError("rows, cols and values must be 1-D arrays of equal length")
        if rows.size == 0:
            raise ValueError("an observation set needs at least one entry")
        if not (np.issubdtype(rows.dtype, np.integer) and np.issubdtype(cols.dtype, np.integer)):
            raise TypeError("row and column indices must be integers")
        rows = rows.astype(np.int64)
        cols = cols.astype(np.int64)
        if rows.min() < 0 or rows.max() >= n_rows:
            raise ValueError(f"row index out of range [0, {n_rows})")
        if cols.min() < 0 or cols.max() >= n_cols:
            raise ValueError(f"column index out of range [0, {n_cols})")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values must be finite")

        lin = rows * n_cols + cols
        order = np.argsort(lin, kind="stable")
        lin = lin[order]
        if np.any(lin[1:] == lin[:-1]):
            dup = lin[1:][lin[1:] == lin[:-1]][0]
            raise ValueError(f"duplicate entry ({dup // n_cols}, {dup % n_cols})")
        rows, cols, values = rows[order], cols[order], values[order]

        csr_indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=csr_indptr[1:])
        csc_perm = np.lexsort((rows, cols))
        csc_indptr = np.zeros(n_cols + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols, minlength=n_cols), out=csc_indptr[1:])
        for a in (rows, cols, values, csr_indptr, csc_indptr, csc_perm):
            a.setflags(write=False)
        return cls(n_rows, n_cols, rows, cols, values, csr_indptr, csc_indptr, csc_perm)

    @classmethod
    def from_sparse(cls, M):
        """Build from a scipy sparse matrix; stored entries (even zeros) count as observed."""
        coo = sp.coo_matrix(M)
        coo.sum_duplicates()
        return cls.from_arrays(coo.shape[0], coo.shape[1], coo.row, coo.col, coo.data)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def sample_ratio(self):
        return self.nnz / (self.n_rows * self.n_cols)

    def to_sparse(self, values=None):
        """``X_Omega`` as a CSR matrix (observed values unless ``values`` is given)."""
        data = self.values if values is None else np.asarray(values, dtype=np.float64)
        return sp.csr_matrix(
            (data, self.cols, self._csr_indptr), shape=self.shape, copy=values is None
        )

    def frobenius_norm(self):
        return float(np.linalg.norm(self.values))

    def spectral_norm(self):
        """Largest singular value of ``M_Omega``."""
        from .factors import top_singular_triplets

        return float(top_singular_triplets(self.to_sparse(), 1)[1][0])

    def check_factors(self, U, V):
        if U.ndim != 2 or V.ndim != 2:
            raise ValueError("factors must be 2-D")
        if U.shape[0] != self.n_rows or V.shape[0] != self.n_cols:
            raise ValueError(
                f"factor shapes {U.shape}, {V.shape} do not match observations {self.shape}"
            )
        if U.shape[1] != V.shape[1]:
            raise ValueError(f"column counts differ: {U.shape[1]} vs {V.shape[1]}")

    def predict(self, U, V, cols_subset=None):
        """``(U V^T)_ij`` for every observed (i, j)."""
        self.check_factors(U, V)
        J = active_columns(U, V) if cols_subset is None else cols_subset
        if J.size == 0:
            return np.zeros(self.nnz)
        Ua = np.ascontiguousarray(U[:, J])
        Va = np.ascontiguousarray(V[:, J])
        return _omega_products(Ua, Va, self.rows, self.cols)


@dataclass(frozen=True, eq=False)
class SparseResidual:
    """``R_ij = (U V^T)_ij - M_ij`` on Omega, i.e. the support of grad f."""

    obs: ObservationSet
    values: np.ndarray

    def _csr(self):
        o = self.obs
        return sp.csr_matrix((self.values, o.cols, o._csr_indptr), shape=o.shape, copy=False)

    def _csc(self):
        o = self.obs
        return sp.csc_matrix(
            (self.values[o._csc_perm], o.rows[o._csc_perm], o._csc_indptr),
            shape=o.shape,
            copy=False,
        )

    def matmul(self, B):
        """``R @ B`` for B of shape (m, k); zero columns of B are skipped."""
        if B.shape[0] != self.obs.n_cols:
            raise ValueError(f"expected {self.obs.n_cols} rows, got {B.shape[0]}")
        out = np.zeros((self.obs.n_rows, B.shape[1]))
        J = np.flatnonzero(np.any(B != 0, axis=0))
        if J.size:
            out[:, J] = self._csr() @ B[:, J]
        return out

    def rmatmul(self, A):
        """``R.T @ A`` for A of shape (n, k); zero columns of A are skipped."""
        if A.shape[0] != self.obs.n_rows:
            raise ValueError(f"expected {self.obs.n_rows} rows, got {A.shape[0]}")
        out = np.zeros((self.obs.n_cols, A.shape[1]))
        J = np.flatnonzero(np.any(A != 0, axis=0))
        if J.size:
            out[:, J] = self._csc().T @ A[:, J]
        return out

    def loss(self):
        return 0.5 * float(self.values @ self.values)

    def to_sparse(self):
        return self._csr()


def residual(obs, U, V):
    return SparseResidual(obs, obs.predict(U, V) - obs.values)


def loss_value(obs, U, V):
    """``f(U V^T) = 1/2 sum_{Omega} ((U V^T)_ij - M_ij)^2``."""
    return residual(obs, U, V).loss()


def grad_U(res, V):
    """Gradient of ``(U, V) -> f(U V^T)`` in U: ``R @ V``."""
    return res.matmul(V)


def grad_V(res, U):
    """Gradient in V: ``R.T @ U``."""
    return res.rmatmul(U)


def lipschitz_f():
    # grad f(X) - grad f(Y) = (X - Y)_Omega, a projection: modulus 1.
    return 1.0
