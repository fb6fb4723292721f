"""Closed-form block updates for the column l2,0 / ridge subproblems.

Two subproblem forms occur:

* uniform:  ``min_U  c/2 |U - G|_F^2 + lam |U|_{2,0}``
* scaled:   ``min_U  1/2 |G - U diag(w)|_F^2 + lam |U|_{2,0}``

Both separate over columns. At the threshold itself the zero column is
returned, so outputs are deterministic and zero columns are exact zeros.
"""
from __future__ import annotations

import itertools

import numpy as np


def hard_threshold_columns(G, tau):
    """Keep column ``G_i`` iff ``|G_i| > tau``; all other columns become 0."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    G = np.asarray(G, dtype=np.float64)
    keep = np.linalg.norm(G, axis=0) > tau
    return np.where(keep, G, 0.0)


def ridge_step(grad, anchor, gamma, mu):
    """Minimizer of ``<grad, U> + gamma/2 |U - anchor|^2 + mu/2 |U|^2``."""
    if not gamma > 0 or not mu > 0:
        raise ValueError(f"gamma and mu must be positive, got {gamma}, {mu}")
    return (gamma * anchor - grad) / (mu + gamma)


def prox_l20_step(grad, anchor, gamma, w):
    """Minimizer of ``<grad, U> + gamma/2 |U - anchor|^2 + mu/2 |U|^2 + lam |U|_{2,0}``.

    Completing the square gives the uniform form with ``c = mu + gamma`` and
    ``G = (gamma * anchor - grad) / c``, so the answer is ``G`` hard-thresholded
    at ``sqrt(2 lam / c)``.
    """
    G = ridge_step(grad, anchor, gamma, w.mu)
    if w.lam == 0:
        return G
    return hard_threshold_columns(G, np.sqrt(2.0 * w.lam / (w.mu + gamma)))


def scaled_hard_threshold(G, Lam, lam):
    """Minimizer of ``1/2 |G - U Lam|_F^2 + lam |U|_{2,0}`` for diagonal ``Lam > 0``.

    ``U_i = G_i / Lam_ii`` when ``|G_i| > sqrt(2 lam)``, otherwise zero.
    """
    Lam = np.asarray(Lam, dtype=np.float64)
    diag = np.diag(Lam) if Lam.ndim == 2 else Lam
    if np.any(~(diag > 0)):
        raise ValueError("diagonal scaling must be strictly positive")
    G = np.asarray(G, dtype=np.float64)
    U = G / diag
    if lam == 0:
        return U
    keep = np.linalg.norm(G, axis=0) > np.sqrt(2.0 * lam)
    return np.where(keep, U, 0.0)


def prox_objective(U, G, scale, lam):
    """Objective of the uniform (scalar ``scale``) or scaled (vector ``scale``) form."""
    nnz = np.count_nonzero(np.any(U != 0, axis=0))
    if np.ndim(scale) == 0:
        return 0.5 * scale * float(np.sum((U - G) ** 2)) + lam * nnz
    return 0.5 * float(np.sum((G - U * np.asarray(scale)) ** 2)) + lam * nnz


def brute_force_prox(G, scale, lam, max_cols=12):
    """Global minimizer by enumerating every zero/nonzero column pattern.

    Test oracle only. For each pattern the restricted quadratic is solved in
    closed form and the full objective is evaluated without using separability.
    Among equal objective values the pattern with fewer columns wins.
    """
    G = np.asarray(G, dtype=np.float64)
    r = G.shape[1]
    if r > max_cols:
        raise ValueError(f"brute force limited to {max_cols} columns, got {r}")
    if np.ndim(scale) == 0:
        unrestricted = G.copy()
    else:
        unrestricted = G / np.asarray(scale, dtype=np.float64)

    best, best_val = np.zeros_like(G), prox_objective(np.zeros_like(G), G, scale, lam)
    for size in range(1, r + 1):
        for keep in itertools.combinations(range(r), size):
            U = np.zeros_like(G)
            U[:, keep] = unrestricted[:, keep]
            val = prox_objective(U, G, scale, lam)
            if val < best_val:
                best, best_val = U, val
    return best
