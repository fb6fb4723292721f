"""Two-phase solver: MAP finds the column support, AMM polishes on it.

Phase 1 runs MAP until the nonzero-column set of ``Ubar`` settles. Its
``kappa`` surviving columns seed a ridge-regularized problem with the
column penalty dropped, which AMM solves on the reduced factor width.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .amm import AmmConfig, amm_solve
from .factors import RANK_TOL, FactorPair, RegWeights, nonzero_columns
from .map_solver import MapConfig, map_solve
from .report import SolveReport


@dataclass
class HybridConfig:
    weights: RegWeights
    r: int
    phase1_max_iters: int = 100
    stable_window: int = 10
    eps_phase2: float = 5e-3
    phase2_max_iters: int = 2000
    rank_tol: float = RANK_TOL

    def map_config(self):
        return MapConfig(
            self.weights,
            self.r,
            max_iters=self.phase1_max_iters,
            stable_window=self.stable_window,
            require_flat=False,
            rank_tol=self.rank_tol,
        )

    def echo(self):
        return {
            "lam": self.weights.lam,
            "mu": self.weights.mu,
            "r": self.r,
            "phase1_max_iters": self.phase1_max_iters,
            "stable_window": self.stable_window,
            "eps_phase2": self.eps_phase2,
            "phase2_max_iters": self.phase2_max_iters,
        }


def extract_support(U, V):
    """Columns shared by both factors; they must agree exactly."""
    J_U, J_V = nonzero_columns(U), nonzero_columns(V)
    if not np.array_equal(J_U, J_V):
        raise ValueError(f"factor supports differ: {J_U.tolist()} vs {J_V.tolist()}")
    return J_U, FactorPair(U[:, J_U].copy(), V[:, J_U].copy())


def hybrid_solve(obs, cfg, init=None):
    t0 = time.perf_counter()
    phase1 = map_solve(obs, cfg.map_config(), init, start_time=t0, warn_cap=True)
    J, reduced = extract_support(phase1.U, phase1.V)
    kappa = int(J.size)
    extras = {
        "kappa": kappa,
        "support": J.tolist(),
        "phase1_iters": phase1.iters,
        "phase1_terminated_by": phase1.terminated_by,
        "phase1_phi_trace": phase1.phi_trace,
    }
    if kappa == 0:
        extras["phase2_iters"] = 0
        return SolveReport(
            solver="hybrid",
            U=phase1.U,
            V=phase1.V,
            iters=phase1.iters,
            terminated_by="empty_support",
            wall_ms=1e3 * (time.perf_counter() - t0),
            phi_trace=phase1.phi_trace,
            rank_trace=phase1.rank_trace,
            config=cfg.echo(),
            extras=extras,
            rank_tol=cfg.rank_tol,
        )

    amm_cfg = AmmConfig(
        RegWeights(0.0, cfg.weights.mu),
        kappa,
        eps_residual=cfg.eps_phase2,
        rank_window=None,
        max_iters=cfg.phase2_max_iters,
        rank_tol=cfg.rank_tol,
    )
    phase2 = amm_solve(obs, amm_cfg, init=reduced, solver_name="hybrid", start_time=t0)
    extras["phase2_iters"] = phase2.iters
    return SolveReport(
        solver="hybrid",
        U=phase2.U,
        V=phase2.V,
        iters=phase1.iters + phase2.iters,
        terminated_by=phase2.terminated_by,
        wall_ms=1e3 * (time.perf_counter() - t0),
        phi_trace=phase1.phi_trace + phase2.phi_trace,
        rank_trace=phase1.rank_trace + phase2.rank_trace,
        residual_trace=phase2.residual_trace,
        gamma_trace=phase2.gamma_trace,
        config=cfg.echo(),
        extras=extras,
        rank_tol=cfg.rank_tol,
    )
