"""Solver dispatch, the c_lambda recipe and the multi-seed benchmark harness."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .als import AlsConfig, als_solve
from .amm import AmmConfig, amm_solve
from .datagen import make_instance, normalize_scheme
from .factors import RegWeights
from .hybrid import HybridConfig, hybrid_solve
from .map_solver import MapConfig, map_solve
from .metrics import relative_error

SOLVERS = ("amm", "map", "hybrid", "als")
DEFAULT_MU = 1e-8
MAX_WIDTH = 150

CSV_FIELDS = (
    "solver", "n", "m", "r_star", "sr", "scheme", "c_lambda", "seed",
    "re", "nmae", "rank", "kappa", "iters", "wall_ms", "terminated_by",
)


def default_width(n, m):
    return min(n, m, MAX_WIDTH)


def lambda_from_c(solver, c_lambda, obs):
    """``10 c SR |M_Omega|_F`` for the column-penalized solvers, ``c SR |M_Omega|_2`` for ALS."""
    if solver == "als":
        return c_lambda * obs.sample_ratio * obs.spectral_norm()
    return 10.0 * c_lambda * obs.sample_ratio * obs.frobenius_norm()


def build_config(solver, lam, r, mu=DEFAULT_MU, **overrides):
    """Solver config from ``lam`` and ``r``; ``overrides`` go to the config dataclass."""
    if solver == "amm":
        return AmmConfig(RegWeights(lam, mu), r, **overrides)
    if solver == "map":
        return MapConfig(RegWeights(lam, mu), r, **overrides)
    if solver == "hybrid":
        return HybridConfig(RegWeights(lam, mu), r, **overrides)
    if solver == "als":
        return AlsConfig(lam, r, **overrides)
    raise ValueError(f"unknown solver {solver!r}; choose from {', '.join(SOLVERS)}")


def run_solver(solver, obs, cfg):
    if solver == "amm":
        return amm_solve(obs, cfg)
    if solver == "map":
        return map_solve(obs, cfg)
    if solver == "hybrid":
        return hybrid_solve(obs, cfg)
    if solver == "als":
        return als_solve(obs, cfg)
    raise ValueError(f"unknown solver {solver!r}")


# -- experiment specs -----------------------------------------------------------

_SPEC_SCHEMA = {
    "type": "object",
    "required": ["cells"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "sigma": {"type": "number", "minimum": 0},
        "scheme": {"type": ["string", "integer"]},
        "reps": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "mu": {"type": "number", "exclusiveMinimum": 0},
        "cells": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["n", "r_star", "sr", "solvers"],
                "additionalProperties": False,
                "properties": {
                    "n": {"type": "integer", "minimum": 2},
                    "m": {"type": "integer", "minimum": 2},
                    "r_star": {"type": "integer", "minimum": 1},
                    "sr": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "scheme": {"type": ["string", "integer"]},
                    "r": {"type": "integer", "minimum": 1},
                    "solvers": {
                        "type": "object",
                        "minProperties": 1,
                        "propertyNames": {"enum": list(SOLVERS)},
                        "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
    },
}


class SpecError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Cell:
    n: int
    m: int
    r_star: int
    sr: float
    scheme: str
    solvers: tuple  # ((name, c_lambda), ...)
    r: int | None = None


@dataclass
class ExperimentSpec:
    cells: list
    sigma: float = 0.1
    reps: int = 5
    seed: int = 0
    mu: float = DEFAULT_MU
    name: str = "experiment"

    @classmethod
    def from_dict(cls, data):
        validator = jsonschema.Draft202012Validator(_SPEC_SCHEMA)
        errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
        if errors:
            raise SpecError(errors[0].json_path, errors[0].message)
        scheme = data.get("scheme", "scheme1")
        cells = []
        for idx, c in enumerate(data["cells"]):
            try:
                cell_scheme = normalize_scheme(c.get("scheme", scheme))
            except ValueError as exc:
                where = f"$.cells[{idx}].scheme" if "scheme" in c else "$.scheme"
                raise SpecError(where, str(exc)) from None
            cells.append(
                Cell(
                    n=c["n"],
                    m=c.get("m", c["n"]),
                    r_star=c["r_star"],
                    sr=float(c["sr"]),
                    scheme=cell_scheme,
                    solvers=tuple((k, float(v)) for k, v in c["solvers"].items()),
                    r=c.get("r"),
                )
            )
        return cls(
            cells=cells,
            sigma=float(data.get("sigma", 0.1)),
            reps=int(data.get("reps", 5)),
            seed=int(data.get("seed", 0)),
            mu=float(data.get("mu", DEFAULT_MU)),
            name=data.get("name", "experiment"),
        )

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError("$", f"invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self):
        return {
            "name": self.name,
            "sigma": self.sigma,
            "reps": self.reps,
            "seed": self.seed,
            "mu": self.mu,
            "cells": [
                {"n": c.n, "m": c.m, "r_star": c.r_star, "sr": c.sr, "scheme": c.scheme,
                 "solvers": dict(c.solvers), **({"r": c.r} if c.r else {})}
                for c in self.cells
            ],
        }


# Published c_lambda values for the n = 1000 block: (r*, SR) -> (AMM, hybrid, ALS)
TABLE1_N1000 = {
    (8, 0.10): (50, 10, 0.80),
    (8, 0.15): (45, 10, 0.24),
    (8, 0.20): (45, 10, 0.16),
    (8, 0.25): (45, 10, 0.14),
    (10, 0.10): (45, 10, 3.5),
    (10, 0.15): (40, 10, 2.5),
    (10, 0.20): (40, 10, 1.8),
    (10, 0.25): (40, 10, 1.5),
    (20, 0.10): (40, 8.0, 1.0),
    (20, 0.15): (32, 6.0, 1.0),
    (20, 0.20): (32, 6.0, 1.0),
    (20, 0.25): (28, 5.0, 1.0),
}
TABLE1_N3000 = {
    (10, 0.10): (120, 30, 1.0),
    (10, 0.15): (95, 30, 1.0),
    (10, 0.20): (95, 30, 1.0),
    (10, 0.25): (95, 30, 1.0),
    (20, 0.10): (100, 25, 1.0),
    (20, 0.15): (80, 25, 1.0),
    (20, 0.20): (80, 25, 1.0),
    (20, 0.25): (80, 25, 1.0),
}
TABLE1_N5000 = {
    (10, 0.10): (200, 40, 1.0),
    (10, 0.15): (160, 30, 1.0),
    (10, 0.20): (160, 30, 1.0),
    (10, 0.25): (160, 30, 1.0),
    (20, 0.10): (200, 40, 1.0),
    (20, 0.15): (160, 30, 1.0),
    (20, 0.20): (160, 30, 1.0),
    (20, 0.25): (160, 30, 1.0),
}
# No published values exist for the SR sweep; these were picked on a pilot run.
FIG2_C_LAMBDA = (20.0, 4.0, 0.5)
FIG2_SR = (0.04, 0.06, 0.08, 0.10, 0.12, 0.14, 0.16, 0.18, 0.20)


def _table_cells(n, table, scheme="scheme1"):
    return [
        Cell(n, n, rs, sr, scheme, (("amm", a), ("hybrid", h), ("als", l)))
        for (rs, sr), (a, h, l) in table.items()
    ]


def preset(name, reps=5, seed=0):
    if name == "table1-small":
        cells = _table_cells(1000, TABLE1_N1000)
    elif name == "table1":
        cells = (
            _table_cells(1000, TABLE1_N1000)
            + _table_cells(3000, TABLE1_N3000)
            + _table_cells(5000, TABLE1_N5000)
        )
    elif name == "fig2":
        a, h, l = FIG2_C_LAMBDA
        cells = [
            Cell(1000, 1000, 5, sr, scheme, (("amm", a), ("hybrid", h), ("als", l)))
            for scheme in ("scheme1", "scheme2")
            for sr in FIG2_SR
        ]
    else:
        raise ValueError(f"unknown preset {name!r}; choose table1-small, table1 or fig2")
    return ExperimentSpec(cells=cells, reps=reps, seed=seed, name=name)


# -- running --------------------------------------------------------------------


def _blank_row(cell, solver, c_lambda, seed):
    return {
        "solver": solver, "n": cell.n, "m": cell.m, "r_star": cell.r_star, "sr": cell.sr,
        "scheme": cell.scheme, "c_lambda": c_lambda, "seed": seed,
        "re": math.nan, "nmae": math.nan, "rank": math.nan, "kappa": math.nan,
        "iters": math.nan, "wall_ms": math.nan, "terminated_by": "",
    }


def run_task(cell, seed, sigma, mu):
    """All solvers of one cell on the instance drawn from ``seed``."""
    obs, truth = make_instance(cell.n, cell.m, cell.r_star, cell.sr, cell.scheme, sigma, seed)
    r = cell.r or default_width(cell.n, cell.m)
    rows = []
    for solver, c_lambda in cell.solvers:
        row = _blank_row(cell, solver, c_lambda, seed)
        try:
            cfg = build_config(solver, lambda_from_c(solver, c_lambda, obs), r, mu)
            t0 = time.perf_counter()
            rep = run_solver(solver, obs, cfg)
            wall = 1e3 * (time.perf_counter() - t0)
            row.update(
                re=relative_error(rep.U, rep.V, truth),
                rank=rep.rank,
                kappa=rep.extras.get("kappa", math.nan),
                iters=rep.iters,
                wall_ms=wall,
                terminated_by=rep.terminated_by,
            )
        except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the run
            row["terminated_by"] = f"error: {type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _row_key(row):
    return (row["n"], row["m"], row["r_star"], row["sr"], row["scheme"], row["solver"],
            row["c_lambda"], -1 if row["seed"] == "avg" else row["seed"])


def _averages(rows):
    groups = {}
    for row in rows:
        groups.setdefault(_row_key(row)[:-1], []).append(row)
    out = []
    for group in groups.values():
        avg = dict(group[0], seed="avg")
        for key in ("re", "nmae", "rank", "kappa", "iters", "wall_ms"):
            avg[key] = float(np.mean([g[key] for g in group]))
        reasons = sorted({g["terminated_by"] for g in group})
        avg["terminated_by"] = reasons[0] if len(reasons) == 1 else "mixed"
        out.append(avg)
    return out


def run_experiment(spec, jobs=1):
    """Per-seed rows for every (cell, seed, solver), followed by averaged rows.

    Instance seeds are ``spec.seed + 1, ..., spec.seed + spec.reps``. Rows come
    back sorted by their key, so the output does not depend on ``jobs``.
    """
    tasks = [
        (cell, spec.seed + k, spec.sigma, spec.mu)
        for cell in spec.cells
        for k in range(1, spec.reps + 1)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_task, *zip(*tasks)))
    else:
        results = [run_task(*t) for t in tasks]
    rows = sorted((row for rs in results for row in rs), key=_row_key)
    return rows + sorted(_averages(rows), key=_row_key)


def _fmt(value):
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row[k]) for k in CSV_FIELDS})
    return buf.getvalue()


def rows_to_json(rows):
    clean = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
             for r in rows]
    return json.dumps(clean, indent=1)
