"""Recovery and prediction error measures."""
from __future__ import annotations

import numpy as np

from .factors import product_distance_sq, product_norm


def relative_error(U, V, truth):
    """``|U V^T - M*|_F / |M*|_F`` with ``M* = M_L M_R^T``, never densified."""
    denom = product_norm(truth.M_L, truth.M_R)
    if denom == 0:
        raise ValueError("true matrix is zero")
    return float(np.sqrt(product_distance_sq(U, V, truth.M_L, truth.M_R)) / denom)


def nmae(predicted, actual, r_min, r_max):
    """Mean absolute error over held-out entries divided by the rating range."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ValueError("prediction and target shapes differ")
    if actual.size == 0:
        raise ValueError("no held-out entries")
    if not r_max > r_min:
        raise ValueError("r_max must exceed r_min")
    return float(np.mean(np.abs(predicted - actual)) / (r_max - r_min))
