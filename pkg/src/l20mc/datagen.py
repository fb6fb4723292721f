"""Synthetic instances under non-uniform sampling, and rating-file loading.

Randomness: every generator takes an integer seed and expands it with
``numpy.random.SeedSequence(seed).spawn(3)`` into three independent PCG64
streams, used in this order:

0. ground-truth factors ``M_L``, ``M_R``;
1. the sampled index set Omega;
2. the observation noise ``xi``.

So changing the noise level never changes Omega or the true matrix.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .obs import ObservationSet, _omega_products

SCHEMES = ("scheme1", "scheme2", "uniform")
_BAND_WEIGHTS = {"scheme1": (2.0, 4.0), "scheme2": (3.0, 9.0)}


def streams(seed):
    """The three documented generator streams for ``seed``."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def normalize_scheme(kind):
    key = str(kind).lower().replace(" ", "").replace("_", "")
    aliases = {"1": "scheme1", "2": "scheme2", "scheme1": "scheme1", "scheme2": "scheme2",
               "uniform": "uniform", "0": "uniform", "u": "uniform"}
    if key not in aliases:
        raise ValueError(f"unknown sampling scheme {kind!r}")
    return aliases[key]


def scheme_probs(n, kind):
    """Marginal sampling probabilities for ``n`` rows (or columns).

    Rows ``[0, n//10)`` get the low multiplier, rows ``[n//10, n//5)`` the high
    one and the rest weight 1, all scaled by ``p0`` so the vector sums to 1.
    """
    kind = normalize_scheme(kind)
    if kind == "uniform":
        return np.full(n, 1.0 / n)
    if n < 10:
        raise ValueError(f"banded schemes need n >= 10, got {n}")
    low, high = _BAND_WEIGHTS[kind]
    weights = np.ones(n)
    weights[: n // 10] = low
    weights[n // 10 : n // 5] = high
    return weights / weights.sum()


def scheme_p0(n, kind):
    """Normalization constant ``p0`` of a banded scheme."""
    kind = normalize_scheme(kind)
    if kind == "uniform":
        return 1.0 / n
    low, high = _BAND_WEIGHTS[kind]
    b1 = n // 10
    b2 = n // 5 - b1
    return 1.0 / (low * b1 + high * b2 + (n - b1 - b2))


def target_count(n, m, sr):
    if not 0 < sr < 1:
        raise ValueError(f"sample ratio must lie in (0, 1), got {sr}")
    return int(math.ceil(sr * n * m - 1e-9))


def sample_omega(n, m, sr, scheme, rng_seed=None, *, rng=None):
    """Distinct index pairs drawn i.i.d. from ``pi_kl = p_k p_l``.

    Draws are repeated, discarding pairs already taken, until
    ``ceil(sr * n * m)`` distinct pairs exist. Returns ``(rows, cols)`` sorted
    by row, then column.
    """
    target = target_count(n, m, sr)
    if target > n * m:
        raise ValueError("requested more samples than matrix entries")
    if rng is None:
        rng = streams(rng_seed)[1]
    if target == n * m:
        rows, cols = np.divmod(np.arange(n * m, dtype=np.int64), m)
        return rows, cols
    p_row = scheme_probs(n, scheme)
    p_col = scheme_probs(m, scheme)
    taken = np.zeros(n * m, dtype=bool)
    picked = []
    have = 0
    while have < target:
        batch = max(int(1.1 * (target - have)) + 64, 256)
        lin = rng.choice(n, size=batch, p=p_row).astype(np.int64) * m + rng.choice(
            m, size=batch, p=p_col
        )
        # first occurrences in draw order, then drop pairs taken earlier
        _, first = np.unique(lin, return_index=True)
        lin = lin[np.sort(first)]
        lin = lin[~taken[lin]]
        lin = lin[: target - have]
        taken[lin] = True
        picked.append(lin)
        have += lin.size
    lin = np.sort(np.concatenate(picked))
    return np.divmod(lin, m)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """``M* = M_L M_R^T`` with i.i.d. standard normal factors."""

    M_L: np.ndarray
    M_R: np.ndarray
    seed: int | None = None

    @property
    def r_star(self):
        return self.M_L.shape[1]

    @property
    def shape(self):
        return (self.M_L.shape[0], self.M_R.shape[0])

    def entries(self, rows, cols):
        return _omega_products(
            np.ascontiguousarray(self.M_L), np.ascontiguousarray(self.M_R),
            np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
        )


def make_ground_truth(n, m, r_star, seed=None, *, rng=None):
    if rng is None:
        rng = streams(seed)[0]
    M_L = rng.standard_normal((n, r_star))
    M_R = rng.standard_normal((m, r_star))
    return GroundTruth(M_L, M_R, seed)


def observe(truth, omega, sigma, rng_seed=None, *, rng=None):
    """Noisy observations ``M*_ij + sigma (xi_t / |xi|) |M*_Omega|_F``.

    The noise energy is exactly ``sigma * |M*_Omega|_F``.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rows, cols = omega
    clean = truth.entries(rows, cols)
    values = clean.copy()
    if sigma > 0:
        if rng is None:
            rng = streams(rng_seed)[2]
        xi = rng.standard_normal(clean.size)
        values += sigma * (xi / np.linalg.norm(xi)) * np.linalg.norm(clean)
    n, m = truth.shape
    return ObservationSet.from_arrays(n, m, rows, cols, values)


def make_instance(n, m, r_star, sr, scheme, sigma, seed):
    """Ground truth plus observations, drawn from the documented streams of ``seed``."""
    g_truth, g_omega, g_noise = streams(seed)
    truth = make_ground_truth(n, m, r_star, seed, rng=g_truth)
    omega = sample_omega(n, m, sr, scheme, rng=g_omega)
    return observe(truth, omega, sigma, rng=g_noise), truth


# -- file formats ---------------------------------------------------------------


def write_obs(path, obs):
    """Observation dump: header ``n m nnz`` then ``i j value`` lines (0-based)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{obs.n_rows} {obs.n_cols} {obs.nnz}\n")
        for i, j, v in zip(obs.rows.tolist(), obs.cols.tolist(), obs.values.tolist()):
            fh.write(f"{i} {j} {v!r}\n")


def read_obs(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: expected header 'n m nnz'")
        n, m, nnz = map(int, header)
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (nnz, 3):
        raise ValueError(f"{path}: header announces {nnz} entries, found {data.shape[0]}")
    rows = data[:, 0].astype(np.int64)
    cols = data[:, 1].astype(np.int64)
    if np.any(rows != data[:, 0]) or np.any(cols != data[:, 1]):
        raise ValueError(f"{path}: non-integer index")
    return ObservationSet.from_arrays(n, m, rows, cols, data[:, 2])


def write_triplets(path, obs, one_based=True, delimiter=" "):
    off = 1 if one_based else 0
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, v in zip(obs.rows.tolist(), obs.cols.tolist(), obs.values.tolist()):
            fh.write(f"{i + off}{delimiter}{j + off}{delimiter}{v!r}\n")


def read_triplets(path, delimiter=None, shape=None):
    """Parse ``user item rating [extra...]`` lines into 0-based arrays.

    Blank lines and ``#`` comments are skipped. Ids are taken as 0-based when
    the smallest id is 0 and as 1-based otherwise. Returns
    ``(rows, cols, values, (n, m))``.
    """
    users, items, ratings = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split(delimiter) if delimiter else text.replace(",", " ").split()
            try:
                u, i, r = int(parts[0]), int(parts[1]), float(parts[2])
            except (IndexError, ValueError):
                raise ValueError(f"{path}:{lineno}: malformed line {line.rstrip()!r}") from None
            if not math.isfinite(r):
                raise ValueError(f"{path}:{lineno}: non-finite rating")
            users.append(u)
            items.append(i)
            ratings.append(r)
    if not users:
        raise ValueError(f"{path}: no ratings found")
    rows = np.asarray(users, dtype=np.int64)
    cols = np.asarray(items, dtype=np.int64)
    rows -= 0 if rows.min() == 0 else 1
    cols -= 0 if cols.min() == 0 else 1
    if rows.min() < 0 or cols.min() < 0:
        raise ValueError(f"{path}: negative ids")
    if shape is None:
        shape = (int(rows.max()) + 1, int(cols.max()) + 1)
    return rows, cols, np.asarray(ratings), tuple(shape)


@dataclass(frozen=True, eq=False)
class RatingSplit:
    """Training observations on Omega ∩ Gamma and the held-out part Gamma \\ Omega."""

    train: ObservationSet
    heldout_rows: np.ndarray
    heldout_cols: np.ndarray
    heldout_values: np.ndarray
    r_min: float
    r_max: float
    user_ids: np.ndarray
    item_ids: np.ndarray

    @property
    def heldout_empty(self):
        return self.heldout_values.size == 0


def load_triplets(
    path,
    *,
    sr,
    scheme="scheme1",
    seed=0,
    delimiter=None,
    recenter_offset=0.0,
    value_range=None,
    n_users=None,
    n_items=None,
):
    """Load a rating file and split it by a scheme-sampled index set.

    Users (rows) and items (columns) may be subsampled at random to
    ``n_users`` / ``n_items``; the kept rows are randomly permuted. Omega is
    then sampled over the full grid and intersected with the rated entries
    Gamma; the rest of Gamma is held out. ``recenter_offset`` is subtracted
    from every rating and from ``value_range``, so the range width is
    unchanged.
    """
    rows, cols, vals, (n, m) = read_triplets(path, delimiter)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[3])
    user_ids = np.arange(n)
    item_ids = np.arange(m)
    if n_users is not None and n_users < n:
        user_ids = rng.choice(np.unique(rows), size=min(n_users, np.unique(rows).size), replace=False)
    elif n_users is not None:
        user_ids = rng.permutation(n)
    if n_items is not None and n_items < m:
        item_ids = np.sort(rng.choice(np.unique(cols), size=min(n_items, np.unique(cols).size), replace=False))
    row_map = np.full(n, -1)
    row_map[user_ids] = np.arange(user_ids.size)
    col_map = np.full(m, -1)
    col_map[item_ids] = np.arange(item_ids.size)
    keep = (row_map[rows] >= 0) & (col_map[cols] >= 0)
    rows, cols, vals = row_map[rows[keep]], col_map[cols[keep]], vals[keep] - recenter_offset
    n, m = user_ids.size, item_ids.size

    if value_range is None:
        r_min, r_max = float(vals.min()), float(vals.max())
    else:
        r_min, r_max = (float(x) - recenter_offset for x in value_range)
    if not r_max > r_min:
        raise ValueError("rating range must have r_max > r_min")

    o_rows, o_cols = sample_omega(n, m, sr, scheme, rng=streams(seed)[1])
    in_omega = np.zeros(n * m, dtype=bool)
    in_omega[o_rows * m + o_cols] = True
    mask = in_omega[rows * m + cols]
    if not mask.any():
        raise ValueError("sampled index set does not meet any rated entry")
    if mask.all():
        warnings.warn("every rated entry was sampled; the held-out set is empty", stacklevel=2)
    train = ObservationSet.from_arrays(n, m, rows[mask], cols[mask], vals[mask])
    return RatingSplit(
        train, rows[~mask], cols[~mask], vals[~mask], r_min, r_max, user_ids, item_ids
    )
