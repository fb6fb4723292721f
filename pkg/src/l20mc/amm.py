"""Alternating majorization-minimization with extrapolation.

Each sweep extrapolates a block, picks a step parameter by backtracking on
the block majorization inequality, and applies the closed-form column
hard-thresholding update. With ``lam = 0`` the same loop minimizes the smooth
ridge objective, which is how the hybrid method runs its second phase.
"""
from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .factors import (
    RANK_TOL,
    FactorPair,
    RegWeights,
    eval_phi,
    numerical_rank,
    product_norm,
    top_singular_triplets,
)
from .obs import active_columns, lipschitz_f, residual
from .prox import prox_l20_step
from .report import SolveReport, SolverBreakdown


@dataclass
class AmmConfig:
    """Parameters of the AMM solver.

    ``gamma0=None`` means ``2.5 * |M_Omega|_2`` computed from the data.
    ``beta_schedule`` is ``"nesterov"``, ``"zero"`` or a constant float.
    ``rank_window=None`` drops the rank-stability condition from the stopping
    test (used for the smooth second phase of the hybrid solver).
    """

    weights: RegWeights
    r: int
    gamma0: float | None = None
    backtrack_rho: float = 1.05
    beta_schedule: str | float = "nesterov"
    beta_safeguard: bool = False
    beta_cap: float = 0.4
    safeguard_eta: float = 2.6
    xi_rho: float = 0.6
    eps_residual: float = 1e-3
    eps_objective: float = 1e-4
    rank_window: int | None = 20
    flat_lags: int = 19
    max_iters: int = 2000
    rank_tol: float = RANK_TOL
    seed: int | None = None

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.gamma0 is not None and not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not self.backtrack_rho > 1:
            raise ValueError("backtrack_rho must exceed 1")
        if not (self.eps_residual > 0 and self.eps_objective > 0):
            raise ValueError("tolerances must be positive")
        if self.rank_window is not None and self.rank_window < 1:
            raise ValueError("rank_window must be >= 1")
        if not 0 < self.xi_rho < 1:
            raise ValueError("xi_rho must lie in (0, 1)")
        if isinstance(self.beta_schedule, str):
            if self.beta_schedule not in ("nesterov", "zero"):
                raise ValueError(f"unknown beta schedule {self.beta_schedule!r}")
        elif not 0 <= float(self.beta_schedule) <= 1:
            raise ValueError("constant beta must lie in [0, 1]")

    def echo(self):
        return {
            "lam": self.weights.lam,
            "mu": self.weights.mu,
            "r": self.r,
            "gamma0": self.gamma0,
            "backtrack_rho": self.backtrack_rho,
            "beta_schedule": self.beta_schedule,
            "beta_safeguard": self.beta_safeguard,
            "eps_residual": self.eps_residual,
            "eps_objective": self.eps_objective,
            "rank_window": self.rank_window,
            "max_iters": self.max_iters,
            "rank_tol": self.rank_tol,
        }


@dataclass
class AmmState:
    U: np.ndarray
    V: np.ndarray
    U_prev: np.ndarray
    V_prev: np.ndarray
    t: float = 1.0
    k: int = 0
    phi: float = float("nan")
    U_tilde: np.ndarray | None = None
    V_tilde: np.ndarray | None = None
    phi_trace: list = field(default_factory=list)
    rank_trace: list = field(default_factory=list)
    residual_trace: list = field(default_factory=list)
    gamma_trace: list = field(default_factory=list)
    beta_trace: list = field(default_factory=list)
    # (Xi at the new iterate, Xi at the old iterate), both with this sweep's alphas
    xi_trace: list = field(default_factory=list)
    backtrack_steps: list = field(default_factory=list)

    @classmethod
    def start(cls, obs, fp, w, rank_tol=RANK_TOL):
        st = cls(fp.U.copy(), fp.V.copy(), fp.U.copy(), fp.V.copy())
        st.phi = eval_phi(obs, fp, w)
        st.phi_trace.append(st.phi)
        st.rank_trace.append(numerical_rank(fp, rank_tol))
        return st


def spectral_sq(M):
    """``|M|_2^2`` from the Gram matrix of the nonzero columns."""
    J = np.flatnonzero(np.any(M != 0, axis=0))
    if J.size == 0:
        return 0.0
    Ma = M[:, J]
    return float(np.linalg.eigvalsh(Ma.T @ Ma)[-1])


def nesterov_beta(state, cfg):
    """Extrapolation weight for this sweep; advances ``state.t``.

    ``beta_k = (t_k - 1) / t_{k+1}`` with ``t_{k+1} = (1 + sqrt(4 t_k^2 + 1)) / 2``.
    """
    t_next = (1.0 + math.sqrt(4.0 * state.t**2 + 1.0)) / 2.0
    if cfg.beta_schedule == "nesterov":
        beta = (state.t - 1.0) / t_next
    elif cfg.beta_schedule == "zero":
        beta = 0.0
    else:
        beta = float(cfg.beta_schedule)
    state.t = t_next
    if cfg.beta_safeguard:
        beta = min(beta, cfg.beta_cap)
    return beta


def max_backtrack_steps(rho):
    # ell is capped where rho**ell reaches 2**60
    return int(math.ceil(60 * math.log(2.0) / math.log(rho)))


def _block_residual(obs, side, cand, other):
    res = residual(obs, cand, other) if side == "U" else residual(obs, other, cand)
    return res


def _backtrack(obs, anchor, other, grad, f_anchor, gamma0, rho, side, w, tau=None):
    """Smallest ``ell >= 0`` whose prox candidate satisfies the majorization.

    Returns ``(gamma, candidate, ell, candidate_residual_or_None)``. When
    ``gamma0 >= tau`` (the block Lipschitz modulus) the inequality holds by the
    descent lemma and is not re-evaluated.
    """
    if side not in ("U", "V"):
        raise ValueError(f"side must be 'U' or 'V', got {side!r}")
    if tau is not None and gamma0 >= tau:
        return gamma0, prox_l20_step(grad, anchor, gamma0, w), 0, None
    for ell in range(max_backtrack_steps(rho) + 1):
        gamma = gamma0 * rho**ell
        cand = prox_l20_step(grad, anchor, gamma, w)
        step = cand - anchor
        res = _block_residual(obs, side, cand, other)
        rhs = f_anchor + float(np.vdot(grad, step)) + 0.5 * gamma * float(np.vdot(step, step))
        if res.loss() <= rhs + 1e-12 * max(1.0, abs(rhs)):
            return gamma, cand, ell, res
    raise SolverBreakdown(
        f"backtracking on block {side} failed to certify the majorization "
        f"after {max_backtrack_steps(rho)} steps (gamma0={gamma0:g})"
    )


def backtrack_gamma(obs, anchor, other_factor, gamma0, rho, side, w):
    """Step parameter ``gamma0 * rho**ell`` and its accepted prox candidate.

    ``side='U'`` treats ``anchor`` as the U block with ``other_factor`` = V;
    ``side='V'`` the reverse.
    """
    if not gamma0 > 0:
        raise ValueError("gamma0 must be positive")
    if side == "U":
        res = residual(obs, anchor, other_factor)
        grad = res.matmul(other_factor)
    elif side == "V":
        res = residual(obs, other_factor, anchor)
        grad = res.rmatmul(other_factor)
    else:
        raise ValueError(f"side must be 'U' or 'V', got {side!r}")
    gamma, cand, _, _ = _backtrack(obs, anchor, other_factor, grad, res.loss(), gamma0, rho, side, w)
    return gamma, cand


def xi_potential(fp, fp_prev, rho1, rho2, alpha1, alpha2, obs, w, phi=None):
    """``Phi(U, V) + rho1 alpha1/2 |U - U'|^2 + rho2 alpha2/2 |V - V'|^2``."""
    if not (0 < rho1 < 1 and 0 < rho2 < 1):
        raise ValueError("rho1 and rho2 must lie in (0, 1)")
    if alpha1 < 0 or alpha2 < 0:
        raise ValueError("alpha values must be nonnegative")
    if phi is None:
        phi = eval_phi(obs, fp, w)
    dU = fp.U - fp_prev.U
    dV = fp.V - fp_prev.V
    return phi + 0.5 * rho1 * alpha1 * float(np.vdot(dU, dU)) + 0.5 * rho2 * alpha2 * float(
        np.vdot(dV, dV)
    )


def amm_iterate(state, obs, cfg, gamma0):
    """One full U/V sweep. Mutates and returns ``state``."""
    w = cfg.weights
    Lf = lipschitz_f()
    U, V = state.U, state.V
    beta = nesterov_beta(state, cfg)

    Ut = U + beta * (U - state.U_prev) if beta else U
    res_u = residual(obs, Ut, V)
    gU = res_u.matmul(V)
    tau_V = Lf * spectral_sq(V)
    g1_start = max(gamma0, cfg.safeguard_eta * tau_V) if cfg.beta_safeguard else gamma0
    gamma1, U_new, l1, _ = _backtrack(
        obs, Ut, V, gU, res_u.loss(), g1_start, cfg.backtrack_rho, "U", w, tau=tau_V
    )

    Vt = V + beta * (V - state.V_prev) if beta else V
    res_v = residual(obs, U_new, Vt)
    gV = res_v.rmatmul(U_new)
    tau_U = Lf * spectral_sq(U_new)
    g2_start = max(gamma0, cfg.safeguard_eta * tau_U) if cfg.beta_safeguard else gamma0
    gamma2, V_new, l2, res_new = _backtrack(
        obs, Vt, U_new, gV, res_v.loss(), g2_start, cfg.backtrack_rho, "V", w, tau=tau_U
    )
    if res_new is None:
        res_new = residual(obs, U_new, V_new)

    E_U = res_new.matmul(V_new) - gU + gamma1 * (Ut - U_new)
    E_V = res_new.rmatmul(U_new) - gV + gamma2 * (Vt - V_new)
    fp_new = FactorPair(U_new, V_new)
    rel = math.sqrt(float(np.vdot(E_U, E_U)) + float(np.vdot(E_V, E_V))) / (
        1.0 + product_norm(U_new, V_new)
    )
    phi_new = eval_phi(obs, fp_new, w, loss=res_new.loss())

    a1 = max(gamma1 - tau_V, 0.0)
    a2 = max(gamma2 - tau_U, 0.0)
    rho = cfg.xi_rho
    xi_new = xi_potential(fp_new, FactorPair(U, V), rho, rho, a1, a2, obs, w, phi=phi_new)
    xi_old = xi_potential(
        FactorPair(U, V), FactorPair(state.U_prev, state.V_prev), rho, rho, a1, a2, obs, w,
        phi=state.phi,
    )

    state.U_prev, state.V_prev = U, V
    state.U, state.V = U_new, V_new
    state.U_tilde, state.V_tilde = Ut, Vt
    state.phi = phi_new
    state.k += 1
    state.phi_trace.append(phi_new)
    state.rank_trace.append(numerical_rank(fp_new, cfg.rank_tol))
    state.residual_trace.append(rel)
    state.gamma_trace.append((gamma1, gamma2))
    state.beta_trace.append(beta)
    state.xi_trace.append((xi_new, xi_old))
    state.backtrack_steps.append((l1, l2))
    return state


def stopping_residuals(state, obs, w):
    """``(|E_U|, |E_V|, relative)`` for the last completed sweep, recomputed from scratch.

    Needs the anchors and step parameters of that sweep, so at least one
    iteration must have run.
    """
    if state.k == 0 or state.U_tilde is None:
        raise ValueError("no completed iteration")
    gamma1, gamma2 = state.gamma_trace[-1]
    Ut, Vt, U, V = state.U_tilde, state.V_tilde, state.U, state.V
    res_new = residual(obs, U, V)
    E_U = res_new.matmul(V) - residual(obs, Ut, state.V_prev).matmul(state.V_prev) + gamma1 * (
        Ut - U
    )
    E_V = res_new.rmatmul(U) - residual(obs, U, Vt).rmatmul(U) + gamma2 * (Vt - V)
    nu = float(np.linalg.norm(E_U))
    nv = float(np.linalg.norm(E_V))
    return nu, nv, math.hypot(nu, nv) / (1.0 + product_norm(U, V))


def _flat(window, lags, eps):
    if len(window) < lags + 1:
        return False
    cur = window[-1]
    spread = max(abs(cur - window[-1 - i]) for i in range(1, lags + 1))
    return spread / max(1.0, cur) <= eps


def amm_solve(obs, cfg, init=None, *, solver_name="amm", start_time=None):
    """Run AMM sweeps until the stopping test passes or ``max_iters``.

    Stops when the rank of ``U V^T`` has been constant over the last
    ``rank_window`` iterates and either the relative residual is at most
    ``eps_residual`` or the objective varied by at most ``eps_objective``
    (relative) over the last ``flat_lags`` iterates.
    """
    t0 = time.perf_counter() if start_time is None else start_time
    gamma0 = cfg.gamma0
    if init is None:
        P1, s, Q1 = top_singular_triplets(obs.to_sparse(), cfg.r)
        init = FactorPair(P1 * np.sqrt(s), Q1 * np.sqrt(s))
        if gamma0 is None:
            gamma0 = 2.5 * float(s[0])
    elif init.U.shape != (obs.n_rows, cfg.r) or init.V.shape != (obs.n_cols, cfg.r):
        raise ValueError(f"init shapes {init.U.shape}, {init.V.shape} do not match r={cfg.r}")
    if gamma0 is None:
        gamma0 = 2.5 * obs.spectral_norm()

    w = cfg.weights
    state = AmmState.start(obs, init, w, cfg.rank_tol)
    window = deque([state.phi], maxlen=cfg.flat_lags + 1)
    terminated_by = "max_iters"
    while state.k < cfg.max_iters:
        amm_iterate(state, obs, cfg, gamma0)
        window.append(state.phi)
        ranks = state.rank_trace
        rank_ok = cfg.rank_window is None or (
            len(ranks) >= cfg.rank_window and len(set(ranks[-cfg.rank_window :])) == 1
        )
        if not rank_ok:
            continue
        if state.residual_trace[-1] <= cfg.eps_residual:
            terminated_by = "residual"
            break
        if _flat(window, cfg.flat_lags, cfg.eps_objective):
            terminated_by = "objective"
            break

    slack = [new - old for new, old in state.xi_trace]
    tol = [1e-10 * max(1.0, abs(old)) for _, old in state.xi_trace]
    config = cfg.echo()
    config["gamma0"] = gamma0
    return SolveReport(
        solver=solver_name,
        U=state.U,
        V=state.V,
        iters=state.k,
        terminated_by=terminated_by,
        wall_ms=1e3 * (time.perf_counter() - t0),
        phi_trace=state.phi_trace,
        rank_trace=state.rank_trace,
        residual_trace=state.residual_trace,
        gamma_trace=state.gamma_trace,
        config=config,
        extras={
            "beta_trace": state.beta_trace,
            "xi_trace": state.xi_trace,
            "xi_monotone": bool(all(s <= t for s, t in zip(slack, tol))),
            "backtrack_steps": state.backtrack_steps,
            "support": active_columns(state.U, state.V).tolist(),
        },
        rank_tol=cfg.rank_tol,
    )
