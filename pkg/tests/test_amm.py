import math

import numpy as np
import pytest

from l20mc.amm import (
    AmmConfig,
    AmmState,
    amm_iterate,
    amm_solve,
    backtrack_gamma,
    nesterov_beta,
    stopping_residuals,
    xi_potential,
)
from l20mc.datagen import make_instance
from l20mc.factors import FactorPair, RegWeights, eval_phi, spectral_init
from l20mc.obs import ObservationSet, loss_value, residual

from conftest import random_obs


def test_nesterov_recursion():
    cfg = AmmConfig(RegWeights(0.0, 1.0), 2)
    st = AmmState(*(np.zeros((2, 2)),) * 4)
    assert nesterov_beta(st, cfg) == 0.0
    t1 = (1 + math.sqrt(5)) / 2
    assert st.t == pytest.approx(t1)
    t2 = (1 + math.sqrt(4 * t1**2 + 1)) / 2
    assert nesterov_beta(st, cfg) == pytest.approx((t1 - 1) / t2)


def test_zero_schedule_and_cap():
    st = AmmState(*(np.zeros((2, 2)),) * 4)
    zero = AmmConfig(RegWeights(0.0, 1.0), 2, beta_schedule="zero")
    assert all(nesterov_beta(st, zero) == 0.0 for _ in range(5))
    capped = AmmConfig(RegWeights(0.0, 1.0), 2, beta_safeguard=True)
    st = AmmState(*(np.zeros((2, 2)),) * 4)
    assert max(nesterov_beta(st, capped) for _ in range(50)) == 0.4


def _majorization_gap(obs, anchor, other, gamma, cand, side, w):
    if side == "U":
        res = residual(obs, anchor, other)
        grad = res.matmul(other)
        f_new = loss_value(obs, cand, other)
    else:
        res = residual(obs, other, anchor)
        grad = res.rmatmul(other)
        f_new = loss_value(obs, other, cand)
    step = cand - anchor
    return res.loss() + np.vdot(grad, step) + gamma / 2 * np.vdot(step, step) - f_new


def test_backtrack_with_zero_other_factor(rng):
    obs, _, _ = random_obs(rng, 6, 5)
    U = rng.standard_normal((6, 2))
    gamma, cand = backtrack_gamma(obs, U, np.zeros((5, 2)), 0.1, 1.05, "U", RegWeights(0.1, 1e-3))
    assert gamma == 0.1


def test_backtrack_accepts_lipschitz_gamma_immediately(rng):
    obs, _, _ = random_obs(rng, 7, 6)
    U, V = rng.standard_normal((7, 3)), rng.standard_normal((6, 3))
    gamma0 = np.linalg.norm(V, 2) ** 2 * 1.0001
    w = RegWeights(0.05, 1e-3)
    gamma, cand = backtrack_gamma(obs, U, V, gamma0, 1.05, "U", w)
    assert gamma == gamma0
    assert _majorization_gap(obs, U, V, gamma, cand, "U", w) >= -1e-12


@pytest.mark.parametrize("side", ["U", "V"])
def test_backtrack_returns_first_certified_exponent(rng, side):
    obs, _, _ = random_obs(rng, 8, 7, density=0.7)
    anchor_rows = 8 if side == "U" else 7
    other_rows = 7 if side == "U" else 8
    anchor = rng.standard_normal((anchor_rows, 3))
    other = 3 * rng.standard_normal((other_rows, 3))
    w = RegWeights(0.01, 1e-3)
    gamma0, rho = 1e-3, 1.05
    gamma, cand = backtrack_gamma(obs, anchor, other, gamma0, rho, side, w)
    from l20mc.prox import prox_l20_step

    assert _majorization_gap(obs, anchor, other, gamma, cand, side, w) >= -1e-12
    if gamma > gamma0:
        prev = gamma / rho
        res = residual(obs, anchor, other) if side == "U" else residual(obs, other, anchor)
        grad = res.matmul(other) if side == "U" else res.rmatmul(other)
        cand_prev = prox_l20_step(grad, anchor, prev, w)
        assert _majorization_gap(obs, anchor, other, prev, cand_prev, side, w) < 0


def test_beta_zero_objective_never_increases(rng):
    obs, truth = make_instance(10, 10, 2, 0.6, "uniform", 0.05, 3)
    cfg = AmmConfig(RegWeights(0.05, 1e-4), 4, beta_schedule="zero")
    st = AmmState.start(obs, spectral_init(obs, 4), cfg.weights)
    for _ in range(50):
        amm_iterate(st, obs, cfg, gamma0=1.0)
    phi = np.array(st.phi_trace)
    assert np.all(np.diff(phi) <= 1e-10 * np.maximum(1, np.abs(phi[:-1])))


def test_fixed_point_stays_put(rng):
    U, V = rng.standard_normal((5, 2)), rng.standard_normal((4, 2))
    rows, cols = np.nonzero(np.ones((5, 4)))
    obs = ObservationSet.from_arrays(5, 4, rows, cols, (U @ V.T)[rows, cols])
    cfg = AmmConfig(RegWeights(1e-6, 1e-300), 2, beta_schedule="zero")
    st = AmmState.start(obs, FactorPair(U, V), cfg.weights)
    amm_iterate(st, obs, cfg, gamma0=10.0)
    assert np.allclose(st.U, U, rtol=0, atol=1e-13) and np.allclose(st.V, V, rtol=0, atol=1e-13)
    assert st.residual_trace[-1] <= 1e-13
    assert max(stopping_residuals(st, obs, cfg.weights)) <= 1e-13


def test_stopping_residual_matches_dense_formula(rng):
    obs, full, mask = random_obs(rng, 9, 8, density=0.6, rank=2)
    cfg = AmmConfig(RegWeights(0.01, 1e-3), 3)
    init = FactorPair(rng.standard_normal((9, 3)), rng.standard_normal((8, 3)))
    st = AmmState.start(obs, init, cfg.weights)
    for _ in range(3):
        amm_iterate(st, obs, cfg, gamma0=2.0)

    def grad(X):
        return np.where(mask, X - full, 0.0)

    g1, g2 = st.gamma_trace[-1]
    Ut, Vt, U, V, V_old = st.U_tilde, st.V_tilde, st.U, st.V, st.V_prev
    X_new = U @ V.T
    E_U = grad(X_new) @ V - grad(Ut @ V_old.T) @ V_old + g1 * (Ut - U)
    E_V = grad(X_new).T @ U - grad(U @ Vt.T).T @ U + g2 * (Vt - V)
    rel = np.sqrt(np.sum(E_U**2) + np.sum(E_V**2)) / (1 + np.linalg.norm(X_new))
    nu, nv, got = stopping_residuals(st, obs, cfg.weights)
    assert nu == pytest.approx(np.linalg.norm(E_U), rel=1e-9)
    assert nv == pytest.approx(np.linalg.norm(E_V), rel=1e-9)
    assert got == pytest.approx(rel, rel=1e-9)
    assert st.residual_trace[-1] == pytest.approx(rel, rel=1e-9)


def test_stopping_residual_needs_an_iteration(rng):
    obs, _, _ = random_obs(rng, 4, 4)
    st = AmmState.start(obs, spectral_init(obs, 2), RegWeights(0.0, 1.0))
    with pytest.raises(ValueError):
        stopping_residuals(st, obs, RegWeights(0.0, 1.0))


def test_xi_potential(rng):
    obs, full, mask = random_obs(rng, 6, 5)
    w = RegWeights(0.3, 0.1)
    fp = FactorPair(rng.standard_normal((6, 2)), rng.standard_normal((5, 2)))
    prev = FactorPair(rng.standard_normal((6, 2)), rng.standard_normal((5, 2)))
    phi = eval_phi(obs, fp, w)
    assert xi_potential(fp, fp, 0.6, 0.6, 2.0, 3.0, obs, w) == phi
    assert xi_potential(fp, prev, 0.6, 0.6, 0.0, 0.0, obs, w) == phi
    extra = 0.5 * 0.6 * 2.0 * np.sum((fp.U - prev.U) ** 2) + 0.5 * 0.3 * 3.0 * np.sum((fp.V - prev.V) ** 2)
    assert xi_potential(fp, prev, 0.6, 0.3, 2.0, 3.0, obs, w) == pytest.approx(phi + extra, rel=1e-13)
    with pytest.raises(ValueError):
        xi_potential(fp, prev, 1.0, 0.5, 1.0, 1.0, obs, w)


def test_solve_from_exact_fit_stops_at_rank_window(rng):
    U, V = rng.standard_normal((12, 2)), rng.standard_normal((10, 2))
    rows, cols = np.nonzero(rng.random((12, 10)) < 0.8)
    obs = ObservationSet.from_arrays(12, 10, rows, cols, (U @ V.T)[rows, cols])
    cfg = AmmConfig(RegWeights(1e-8, 1e-300), 2)
    rep = amm_solve(obs, cfg, init=FactorPair(U, V))
    assert rep.iters <= cfg.rank_window
    assert rep.terminated_by == "residual"
    assert rep.residual_trace[-1] <= 1e-12


def test_solve_recovers_small_low_rank_instance():
    obs, truth = make_instance(60, 50, 3, 0.5, "scheme1", 0.0, 5)
    lam = 10 * 1.0 * obs.sample_ratio * obs.frobenius_norm()
    rep = amm_solve(obs, AmmConfig(RegWeights(lam, 1e-8), 20))
    from l20mc.metrics import relative_error

    assert rep.rank == 3
    assert relative_error(rep.U, rep.V, truth) < 0.05
    data = rep.to_dict()
    for key in ("iters", "terminated_by", "rank", "phi_trace", "residual_trace", "wall_ms", "config"):
        assert key in data


def test_safeguarded_run_certifies_potential_descent():
    obs, _ = make_instance(40, 40, 3, 0.4, "scheme1", 0.1, 8)
    lam = 10 * 1.0 * obs.sample_ratio * obs.frobenius_norm()
    rep = amm_solve(obs, AmmConfig(RegWeights(lam, 1e-8), 10, beta_safeguard=True, max_iters=200))
    assert rep.extras["xi_monotone"]
    assert max(rep.extras["beta_trace"]) <= 0.4


@pytest.mark.parametrize(
    "kwargs",
    [dict(r=0), dict(gamma0=-1.0), dict(backtrack_rho=1.0), dict(beta_schedule="fast"),
     dict(rank_window=0), dict(xi_rho=1.5)],
)
def test_config_validation(kwargs):
    base = dict(weights=RegWeights(0.1, 1.0), r=2)
    base.update(kwargs)
    with pytest.raises(ValueError):
        AmmConfig(**base)
