"""Majorized alternating proximal (MAP) method with SVD refactorization.

The iterate is kept in balanced form: ``Ubar = Phat Q D`` and ``Vbar = P D``
with orthonormal ``P``, ``Phat Q``. Because ``Vbar^T Vbar = D^2``, the
linearized U-subproblem decouples over columns and is solved by a scaled
column hard threshold. Writing ``Zbar = Xbar - grad f(Xbar) / L_f``:

    G = (L_f Zbar P + gamma Phat Q) D Lam^{-1}
      = (L_f Ubar D^2 - R Vbar + gamma Ubar) Lam^{-1},
    Lam = (L_f D^2 + (mu + gamma) I)^{1/2},

where ``R`` is the sparse residual at ``Xbar``, so neither ``Zbar`` nor
``Phat Q`` is ever formed. The V-step is symmetric.
"""
from __future__ import annotations

import time
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .factors import (
    RANK_TOL,
    FactorPair,
    RegWeights,
    eval_phi,
    nonzero_columns,
    svd_refactor,
    top_singular_triplets,
)
from .obs import lipschitz_f, residual
from .prox import scaled_hard_threshold
from .report import SolveReport


@dataclass
class MapConfig:
    weights: RegWeights
    r: int
    varrho: float = 0.8
    gamma_floor_1: float = 1e-8
    gamma_floor_2: float = 1e-8
    gamma1_0: float = 0.01
    gamma2_0: float = 0.01
    max_iters: int = 2000
    stable_window: int = 10
    eps_objective: float = 1e-4
    flat_lags: int = 19
    require_flat: bool = True
    rank_tol: float = RANK_TOL

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if not 0 < self.varrho < 1:
            raise ValueError("varrho must lie in (0, 1)")
        if not (self.gamma_floor_1 > 0 and self.gamma_floor_2 > 0):
            raise ValueError("gamma floors must be positive")
        if not (self.gamma1_0 > 0 and self.gamma2_0 > 0):
            raise ValueError("initial gammas must be positive")
        if self.stable_window < 1:
            raise ValueError("stable_window must be >= 1")

    def gammas(self, k):
        """``max(floor, varrho**k * gamma_0)`` for both blocks."""
        decay = self.varrho**k
        return (
            max(self.gamma_floor_1, decay * self.gamma1_0),
            max(self.gamma_floor_2, decay * self.gamma2_0),
        )

    def echo(self):
        return {
            "lam": self.weights.lam,
            "mu": self.weights.mu,
            "r": self.r,
            "varrho": self.varrho,
            "gamma_floor": [self.gamma_floor_1, self.gamma_floor_2],
            "gamma_0": [self.gamma1_0, self.gamma2_0],
            "max_iters": self.max_iters,
            "stable_window": self.stable_window,
            "eps_objective": self.eps_objective,
            "require_flat": self.require_flat,
        }


@dataclass
class MapState:
    """Balanced iterate ``(Ubar, Vbar) = (Phat Q D, P D)`` plus the half-step pair."""

    P: np.ndarray
    d: np.ndarray
    Ubar: np.ndarray
    Vbar: np.ndarray
    P_hat: np.ndarray | None = None
    d_hat: np.ndarray | None = None
    Uhat: np.ndarray | None = None
    Vhat: np.ndarray | None = None
    U_step: np.ndarray | None = None
    V_step: np.ndarray | None = None
    k: int = 0
    res_bar: object = None
    phi_bar: float = float("nan")
    phi_trace: list = field(default_factory=list)
    phi_hat_trace: list = field(default_factory=list)
    j_trace: list = field(default_factory=list)
    j_hat_trace: list = field(default_factory=list)
    gamma_trace: list = field(default_factory=list)

    @classmethod
    def start(cls, obs, P0, Q0, w):
        """``D = I``, ``Ubar = Q0``, ``Vbar = P0``."""
        P0 = np.asarray(P0, dtype=np.float64)
        Q0 = np.asarray(Q0, dtype=np.float64)
        r = P0.shape[1]
        if Q0.shape[1] != r or P0.shape[0] != obs.n_cols or Q0.shape[0] != obs.n_rows:
            raise ValueError(f"init shapes P0 {P0.shape}, Q0 {Q0.shape} do not fit {obs.shape}")
        for name, M in (("P0", P0), ("Q0", Q0)):
            if np.linalg.norm(M.T @ M - np.eye(r)) > 1e-8:
                raise ValueError(f"{name} must have orthonormal columns")
        st = cls(P=P0.copy(), d=np.ones(r), Ubar=Q0.copy(), Vbar=P0.copy())
        st.res_bar = residual(obs, st.Ubar, st.Vbar)
        st.phi_bar = eval_phi(obs, FactorPair(st.Ubar, st.Vbar), w, loss=st.res_bar.loss())
        st.phi_trace.append(st.phi_bar)
        st.j_trace.append(nonzero_columns(st.Ubar))
        return st


def _column_step(base, d, grad_term, gamma, mu, lam, Lf):
    # columnwise minimizer of the scaled subproblem; columns with d = 0 stay 0
    scale = np.sqrt(Lf * d**2 + mu + gamma)
    G = (Lf * base * d**2 - grad_term + gamma * base) / scale
    return scaled_hard_threshold(G, scale, lam)


def map_u_step(state, obs, cfg, gamma1=None):
    """Exact minimizer of the U-subproblem at ``(Ubar, Vbar)``."""
    if gamma1 is None:
        gamma1 = cfg.gammas(state.k)[0]
    if state.res_bar is None:
        state.res_bar = residual(obs, state.Ubar, state.Vbar)
    w = cfg.weights
    RV = state.res_bar.matmul(state.Vbar)
    return _column_step(state.Ubar, state.d, RV, gamma1, w.mu, w.lam, lipschitz_f())


def map_v_step(state, obs, cfg, gamma2=None, res_hat=None):
    """Exact minimizer of the V-subproblem at ``(Uhat, Vhat)``."""
    if gamma2 is None:
        gamma2 = cfg.gammas(state.k)[1]
    if res_hat is None:
        res_hat = residual(obs, state.Uhat, state.Vhat)
    w = cfg.weights
    RtU = res_hat.rmatmul(state.Uhat)
    return _column_step(state.Vhat, state.d_hat, RtU, gamma2, w.mu, w.lam, lipschitz_f())


def _sweep(state, obs, w, gamma1, gamma2):
    Lf = lipschitz_f()
    U_new = _column_step(
        state.Ubar, state.d, state.res_bar.matmul(state.Vbar), gamma1, w.mu, w.lam, Lf
    )
    Uhat, Vhat, P_hat, _, d_hat = svd_refactor(U_new, state.P, state.d, check=False, complete=False)
    res_hat = residual(obs, Uhat, Vhat)
    V_new = _column_step(Vhat, d_hat, res_hat.rmatmul(Uhat), gamma2, w.mu, w.lam, Lf)
    Vbar, Ubar, P, _, d = svd_refactor(V_new, P_hat, d_hat, check=False, complete=False)

    state.U_step, state.V_step = U_new, V_new
    state.Uhat, state.Vhat, state.P_hat, state.d_hat = Uhat, Vhat, P_hat, d_hat
    state.Ubar, state.Vbar, state.P, state.d = Ubar, Vbar, P, d
    state.res_bar = residual(obs, Ubar, Vbar)
    state.k += 1
    return res_hat


def map_iterate(state, obs, cfg):
    """One sweep: U-step, refactor, V-step, refactor, gamma decay."""
    w = cfg.weights
    gamma1, gamma2 = cfg.gammas(state.k)
    res_hat = _sweep(state, obs, w, gamma1, gamma2)
    state.phi_hat_trace.append(
        eval_phi(obs, FactorPair(state.Uhat, state.Vhat), w, loss=res_hat.loss())
    )
    state.phi_bar = eval_phi(obs, FactorPair(state.Ubar, state.Vbar), w, loss=state.res_bar.loss())
    state.phi_trace.append(state.phi_bar)
    state.j_hat_trace.append(nonzero_columns(state.Uhat))
    state.j_trace.append(nonzero_columns(state.Ubar))
    state.gamma_trace.append((gamma1, gamma2))
    return state


def default_map_init(obs, r):
    """``(P0, Q0) = (Q_1, P_1)``: right and left top-r singular vectors of ``M_Omega``."""
    P1, s, Q1 = top_singular_triplets(obs.to_sparse(), r)
    return Q1, P1


def _stable(j_trace, window):
    if len(j_trace) < window:
        return False
    last = j_trace[-1]
    return all(np.array_equal(last, j) for j in j_trace[-window:])


def _flat(phis, lags, eps):
    if len(phis) < lags + 1:
        return False
    cur = phis[-1]
    return max(abs(cur - phis[-1 - i]) for i in range(1, lags + 1)) / max(1.0, cur) <= eps


def map_solve(obs, cfg, init=None, *, start_time=None, warn_cap=False):
    """Run MAP until the nonzero-column set of ``Ubar`` is stable.

    Stability means the set is identical over the last ``stable_window``
    iterates; with ``require_flat`` the objective must also have varied by at
    most ``eps_objective`` (relative) over the last ``flat_lags`` iterates.
    """
    t0 = time.perf_counter() if start_time is None else start_time
    if init is None:
        init = default_map_init(obs, cfg.r)
    P0, Q0 = init
    state = MapState.start(obs, P0, Q0, cfg.weights)
    window = deque([state.phi_bar], maxlen=cfg.flat_lags + 1)
    terminated_by = "max_iters"
    while state.k < cfg.max_iters:
        map_iterate(state, obs, cfg)
        window.append(state.phi_bar)
        if _stable(state.j_trace, cfg.stable_window) and (
            not cfg.require_flat or _flat(window, cfg.flat_lags, cfg.eps_objective)
        ):
            terminated_by = "support_stable"
            break
    if terminated_by == "max_iters" and warn_cap:
        warnings.warn(
            f"MAP support not stable after {cfg.max_iters} iterations; using current support",
            RuntimeWarning,
            stacklevel=2,
        )
    return SolveReport(
        solver="map",
        U=state.Ubar,
        V=state.Vbar,
        iters=state.k,
        terminated_by=terminated_by,
        wall_ms=1e3 * (time.perf_counter() - t0),
        phi_trace=state.phi_trace,
        rank_trace=[int(j.size) for j in state.j_trace],
        gamma_trace=state.gamma_trace,
        config=cfg.echo(),
        extras={
            "kappa": int(state.j_trace[-1].size),
            "j_trace": [j.tolist() for j in state.j_trace],
            "j_hat_trace": [j.tolist() for j in state.j_hat_trace],
            "phi_hat_trace": state.phi_hat_trace,
        },
        rank_tol=cfg.rank_tol,
    )
