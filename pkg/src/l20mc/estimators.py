"""scikit-learn style wrappers around the solvers.

``fit`` takes the observed entries, either as an :class:`ObservationSet`, a
scipy sparse matrix whose stored entries are the observations, or an
``(k, 3)`` array of ``row, col, value`` triplets. ``predict`` takes index
pairs (a ``(k, 2)`` array) and returns the completed values there.

    >>> est = HybridCompleter(c_lambda=4.0).fit(obs)
    >>> est.rank_, est.predict([[0, 1], [2, 3]])
"""
from __future__ import annotations

import numbers

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import bench
from .obs import ObservationSet, _omega_products, active_columns


def check_observations(X, shape=None):
    """Coerce ``X`` to an :class:`ObservationSet`."""
    if isinstance(X, ObservationSet):
        obs = X
    elif sp.issparse(X):
        obs = ObservationSet.from_sparse(X)
    else:
        arr = check_array(X, dtype=np.float64, ensure_min_samples=1)
        if arr.shape[1] != 3:
            raise ValueError(f"expected (k, 3) triplets, got shape {arr.shape}")
        rows, cols = arr[:, 0], arr[:, 1]
        if np.any(rows != np.round(rows)) or np.any(cols != np.round(cols)):
            raise ValueError("row and column indices must be integers")
        rows, cols = rows.astype(np.int64), cols.astype(np.int64)
        if shape is None:
            shape = (int(rows.max()) + 1, int(cols.max()) + 1)
        order = np.lexsort((cols, rows))
        obs = ObservationSet.from_arrays(shape[0], shape[1], rows[order], cols[order], arr[order, 2])
    if shape is not None and tuple(shape) != obs.shape:
        raise ValueError(f"observations have shape {obs.shape}, expected {tuple(shape)}")
    return obs


def check_index_pairs(X, shape):
    """Validate a ``(k, 2)`` array of in-range integer index pairs."""
    arr = check_array(X, dtype=None, ensure_min_samples=0)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (k, 2) index pairs, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.any(arr != np.round(arr)):
            raise ValueError("indices must be integers")
    arr = arr.astype(np.int64)
    n, m = shape
    if arr.size and (arr[:, 0].min() < 0 or arr[:, 0].max() >= n
                     or arr[:, 1].min() < 0 or arr[:, 1].max() >= m):
        raise ValueError(f"index pair out of range for a {n} x {m} matrix")
    return arr[:, 0].copy(), arr[:, 1].copy()


def _check_positive(name, value, allow_none=False):
    if value is None and allow_none:
        return
    if not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")


class _Completer(BaseEstimator):
    _solver = None

    def _lambda(self, obs):
        if self.lam is not None:
            if self.lam < 0:
                raise ValueError("lam must be nonnegative")
            return float(self.lam)
        _check_positive("c_lambda", self.c_lambda)
        return bench.lambda_from_c(self._solver, self.c_lambda, obs)

    def _options(self):
        return {"max_iters": self.max_iters}

    def fit(self, X, y=None, shape=None):
        obs = check_observations(X, shape)
        _check_positive("mu", self.mu)
        r = self.r if self.r is not None else bench.default_width(*obs.shape)
        if not isinstance(r, numbers.Integral) or r < 1:
            raise ValueError(f"r must be a positive integer, got {r!r}")
        self.lambda_ = self._lambda(obs)
        cfg = bench.build_config(self._solver, self.lambda_, int(r), self.mu, **self._options())
        self.report_ = bench.run_solver(self._solver, obs, cfg)
        self.U_, self.V_ = self.report_.U, self.report_.V
        self.rank_ = self.report_.rank
        self.n_iter_ = self.report_.iters
        self.shape_ = obs.shape
        return self

    def predict(self, X):
        check_is_fitted(self, "report_")
        rows, cols = check_index_pairs(X, self.shape_)
        J = active_columns(self.U_, self.V_)
        if J.size == 0:
            return np.zeros(rows.size)
        return _omega_products(
            np.ascontiguousarray(self.U_[:, J]), np.ascontiguousarray(self.V_[:, J]), rows, cols
        )

    def score(self, X, y):
        """Negative root-mean-square error at the given index pairs."""
        y = np.asarray(y, dtype=np.float64)
        return -float(np.sqrt(np.mean((self.predict(X) - y) ** 2)))


class AmmCompleter(_Completer):
    """Column l2,0-penalized completion by AMM with extrapolation."""

    _solver = "amm"

    def __init__(self, c_lambda=45.0, lam=None, mu=1e-8, r=None, beta_safeguard=False,
                 max_iters=2000):
        self.c_lambda = c_lambda
        self.lam = lam
        self.mu = mu
        self.r = r
        self.beta_safeguard = beta_safeguard
        self.max_iters = max_iters

    def _options(self):
        return {"max_iters": self.max_iters, "beta_safeguard": bool(self.beta_safeguard)}


class MapCompleter(_Completer):
    """Column l2,0-penalized completion by the SVD-refactored MAP method."""

    _solver = "map"

    def __init__(self, c_lambda=10.0, lam=None, mu=1e-8, r=None, max_iters=2000):
        self.c_lambda = c_lambda
        self.lam = lam
        self.mu = mu
        self.r = r
        self.max_iters = max_iters


class HybridCompleter(_Completer):
    """MAP support detection followed by a ridge polish on the kept columns."""

    _solver = "hybrid"

    def __init__(self, c_lambda=10.0, lam=None, mu=1e-8, r=None, max_iters=2000):
        self.c_lambda = c_lambda
        self.lam = lam
        self.mu = mu
        self.r = r
        self.max_iters = max_iters

    def _options(self):
        return {"phase2_max_iters": self.max_iters}

    def fit(self, X, y=None, shape=None):
        super().fit(X, y, shape)
        self.kappa_ = self.report_.extras["kappa"]
        return self


class AlsCompleter(_Completer):
    """Nuclear-norm factored baseline solved by alternating least squares."""

    _solver = "als"

    def __init__(self, c_lambda=1.0, lam=None, mu=1e-8, r=None, max_iters=2000):
        self.c_lambda = c_lambda
        self.lam = lam
        self.mu = mu
        self.r = r
        self.max_iters = max_iters

    def _lambda(self, obs):
        lam = super()._lambda(obs)
        if not lam > 0:
            raise ValueError("ALS needs a positive lambda")
        return lam
