import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l20mc.factors import RegWeights
from l20mc.prox import (
    brute_force_prox,
    hard_threshold_columns,
    prox_l20_step,
    prox_objective,
    ridge_step,
    scaled_hard_threshold,
)


def test_threshold_examples():
    assert not hard_threshold_columns(np.zeros((3, 2)), 1.0).any()
    G = np.array([[2.0, 0.5], [0.0, 0.0]])
    out = hard_threshold_columns(G, 1.0)
    assert np.array_equal(out[:, 0], G[:, 0]) and not out[:, 1].any()
    # keep/kill agrees with comparing the objective at u = g and u = 0 when lam = c tau^2 / 2
    c, tau = 3.0, 1.0
    lam = c * tau**2 / 2
    for j in range(2):
        g = G[:, j]
        keep_val, zero_val = lam, c / 2 * g @ g
        assert (keep_val < zero_val) == bool(out[:, j].any())


def test_threshold_tie_goes_to_zero():
    G = np.array([[3.0], [4.0]])
    assert not hard_threshold_columns(G, 5.0).any()


def test_threshold_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        hard_threshold_columns(np.ones((2, 2)), 0.0)


def test_prox_without_penalty_is_ridge(rng):
    grad, anchor = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    w = RegWeights(0.0, 0.5)
    assert np.array_equal(prox_l20_step(grad, anchor, 2.0, w), ridge_step(grad, anchor, 2.0, 0.5))


def test_prox_zeroes_small_anchor_column():
    lam, mu, gamma = 1.0, 0.5, 2.0
    bound = np.sqrt(2 * lam * (mu + gamma)) / gamma
    anchor = np.array([[0.9 * bound, 3 * bound], [0.0, 0.0]])
    out = prox_l20_step(np.zeros((2, 2)), anchor, gamma, RegWeights(lam, mu))
    assert not out[:, 0].any() and out[:, 1].any()


def _prox_full_objective(U, grad, anchor, gamma, w):
    nnz = np.count_nonzero(np.any(U != 0, axis=0))
    return (np.vdot(grad, U) + gamma / 2 * np.sum((U - anchor) ** 2)
            + w.mu / 2 * np.sum(U**2) + w.lam * nnz)


def test_prox_beats_every_pattern(rng):
    grad, anchor = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    gamma, w = 1.3, RegWeights(0.6, 0.2)
    U = prox_l20_step(grad, anchor, gamma, w)
    c = w.mu + gamma
    G = (gamma * anchor - grad) / c
    oracle = brute_force_prox(G, c, w.lam)
    assert _prox_full_objective(U, grad, anchor, gamma, w) <= _prox_full_objective(
        oracle, grad, anchor, gamma, w) + 1e-12


def test_scaled_examples():
    G = np.array([[2.0, 1.0], [0.0, 3.0]])
    Lam = np.array([2.0, 4.0])
    assert np.allclose(scaled_hard_threshold(G, Lam, 0.0), G / Lam)
    boundary = np.array([[2.0], [0.0]])
    assert not scaled_hard_threshold(boundary, np.array([1.0]), 2.0).any()


def test_scaled_accepts_matrix_and_rejects_bad_diag(rng):
    G = rng.standard_normal((5, 3))
    lam = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(scaled_hard_threshold(G, np.diag(lam), 0.1), scaled_hard_threshold(G, lam, 0.1))
    with pytest.raises(ValueError):
        scaled_hard_threshold(G, np.array([1.0, 0.0, 1.0]), 0.1)


def test_scaled_matches_brute_force(rng):
    G = rng.standard_normal((5, 3))
    Lam = rng.uniform(0.5, 2.0, 3)
    lam = 0.8
    U = scaled_hard_threshold(G, Lam, lam)
    oracle = brute_force_prox(G, Lam, lam)
    assert prox_objective(U, G, Lam, lam) <= prox_objective(oracle, G, Lam, lam) + 1e-12


def test_ridge_examples(rng):
    anchor, grad = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    assert np.allclose(ridge_step(0 * grad, anchor, 2.0, 0.5), 2.0 / 2.5 * anchor)
    assert np.allclose(ridge_step(grad, 0 * anchor, 2.0, 0.5), -grad / 2.5)
    U = ridge_step(grad, anchor, 2.0, 0.5)
    first_order = grad + 2.0 * (U - anchor) + 0.5 * U
    assert np.linalg.norm(first_order) <= 1e-10
    with pytest.raises(ValueError):
        ridge_step(grad, anchor, 0.0, 0.5)


def test_brute_force_basics(rng):
    assert not brute_force_prox(np.zeros((3, 3)), 1.0, 0.5).any()
    with pytest.raises(ValueError):
        brute_force_prox(np.ones((2, 13)), 1.0, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_uniform_form_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((4, 3)) * rng.uniform(0.1, 3)
    c = rng.uniform(0.1, 5)
    lam = rng.uniform(0, 3)
    tau = np.sqrt(2 * lam / c) if lam > 0 else None
    U = hard_threshold_columns(G, tau) if tau else G
    oracle = brute_force_prox(G, c, lam)
    assert abs(prox_objective(U, G, c, lam) - prox_objective(oracle, G, c, lam)) <= 1e-10
