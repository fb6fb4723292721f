"""Solver output container and its JSON form."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .factors import FactorPair, numerical_rank
from .obs import active_columns


class SolverBreakdown(RuntimeError):
    """Raised when a solver cannot continue (e.g. backtracking never certifies)."""


def _jsonable(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(value).items()}
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass
class SolveReport:
    solver: str
    U: np.ndarray
    V: np.ndarray
    iters: int
    terminated_by: str
    wall_ms: float
    phi_trace: list = field(default_factory=list)
    rank_trace: list = field(default_factory=list)
    residual_trace: list = field(default_factory=list)
    gamma_trace: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    rank_tol: float = 1e-6

    @property
    def factors(self):
        return FactorPair(self.U, self.V)

    @property
    def support_size(self):
        """Number of columns nonzero in both factors."""
        return int(active_columns(self.U, self.V).size)

    @property
    def numerical_rank(self):
        return numerical_rank(self.factors, self.rank_tol)

    @property
    def rank(self):
        # ALS keeps dense factors, so only a numerical rank is meaningful there
        if self.solver == "als-nuclear":
            return int(self.rank_trace[-1]) if self.rank_trace else self.numerical_rank
        return self.support_size

    def to_dict(self, include_factors=False):
        out = {
            "model": self.solver,
            "iters": self.iters,
            "terminated_by": self.terminated_by,
            "rank": self.rank,
            "numerical_rank": self.numerical_rank,
            "rank_tol": self.rank_tol,
            "wall_ms": self.wall_ms,
            "phi_trace": self.phi_trace,
            "rank_trace": self.rank_trace,
            "residual_trace": self.residual_trace,
            "gamma_trace": self.gamma_trace,
            "config": self.config,
        }
        out.update(self.extras)
        if include_factors:
            out["U"] = self.U
            out["V"] = self.V
        return _jsonable(out)

    def to_json(self, **kwargs):
        indent = kwargs.pop("indent", None)
        return json.dumps(self.to_dict(**kwargs), indent=indent)
