"""Command-line front end: ``l20mc {gen,solve,bench,eval}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 file errors,
4 solver breakdown.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .datagen import GroundTruth, load_triplets, make_instance, normalize_scheme, read_obs, target_count, write_obs
from .factors import FactorPair, read_factors, write_factors
from .metrics import nmae, relative_error
from .report import SolverBreakdown, _jsonable

log = logging.getLogger("l20mc")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_BREAKDOWN = 0, 2, 3, 4

# defaults used when neither flags nor the config file give a value
SOLVE_DEFAULTS = {"c_lambda": {"amm": 45.0, "map": 10.0, "hybrid": 10.0, "als": 1.0}, "mu": bench.DEFAULT_MU}


class UsageError(ValueError):
    pass


def _sample_ratio(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"sample ratio must lie in (0, 1), got {value}")
    return value


def _scheme(text):
    try:
        return normalize_scheme(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _load_config(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: $ must be an object")
    allowed = {"solver", "c_lambda", "lambda", "mu", "r", "options"}
    extra = set(cfg) - allowed
    if extra:
        raise UsageError(f"{path}: $.{sorted(extra)[0]} is not a recognized key")
    if "options" in cfg and not isinstance(cfg["options"], dict):
        raise UsageError(f"{path}: $.options must be an object")
    return cfg


def _effective(flag_value, cfg, key, default):
    if flag_value is not None:
        return flag_value
    return cfg.get(key, default)


def _resolve_solver_config(args, obs, cfg_file, solver):
    options = dict(cfg_file.get("options", {}))
    if getattr(args, "beta_safeguard", False):
        options["beta_safeguard"] = True
    if getattr(args, "max_iters", None) is not None:
        options["max_iters"] = args.max_iters
    if options.get("beta_safeguard") and solver != "amm":
        raise UsageError("--beta-safeguard applies to the amm solver only")
    mu = float(_effective(args.mu, cfg_file, "mu", SOLVE_DEFAULTS["mu"]))
    r = int(_effective(args.r, cfg_file, "r", bench.default_width(*obs.shape)))
    lam = args.lam if args.lam is not None else cfg_file.get("lambda")
    c_lambda = None
    if lam is None:
        c_lambda = float(_effective(args.clambda, cfg_file, "c_lambda",
                                    SOLVE_DEFAULTS["c_lambda"][solver]))
        lam = bench.lambda_from_c(solver, c_lambda, obs)
    try:
        cfg = bench.build_config(solver, float(lam), r, mu, **options)
    except TypeError as exc:
        raise UsageError(f"invalid solver option: {exc}") from None
    return cfg, c_lambda


def cmd_gen(args):
    make_dir = Path(args.out)
    make_dir.mkdir(parents=True, exist_ok=True)
    m = args.m if args.m is not None else args.n
    target_count(args.n, m, args.sr)
    obs, truth = make_instance(args.n, m, args.rstar, args.sr, args.scheme, args.sigma, args.seed)
    write_obs(make_dir / "obs.txt", obs)
    write_factors(make_dir / "truth.txt", FactorPair(truth.M_L, truth.M_R))
    meta = {"n": args.n, "m": m, "r_star": args.rstar, "sr": args.sr, "scheme": args.scheme,
            "sigma": args.sigma, "seed": args.seed, "nnz": obs.nnz}
    (make_dir / "meta.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {make_dir / 'obs.txt'} ({obs.nnz} entries) and {make_dir / 'truth.txt'}")
    return EXIT_OK


def cmd_solve(args):
    cfg_file = _load_config(args.config)
    solver = args.solver or cfg_file.get("solver")
    if solver not in bench.SOLVERS:
        raise UsageError(f"solver must be one of {', '.join(bench.SOLVERS)}, got {solver!r}")
    obs = read_obs(args.obs)
    cfg, c_lambda = _resolve_solver_config(args, obs, cfg_file, solver)
    rep = bench.run_solver(solver, obs, cfg)
    out = rep.to_dict()
    out["solver"] = solver
    out["c_lambda"] = c_lambda
    if args.truth:
        tp = read_factors(args.truth)
        out["re"] = relative_error(rep.U, rep.V, GroundTruth(tp.U, tp.V))
    text = json.dumps(_jsonable(out), indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if args.factors_out:
        write_factors(args.factors_out, rep.factors)
    log.info("%s: %d iterations, rank %d, %s", solver, rep.iters, rep.rank, rep.terminated_by)
    return EXIT_OK


def cmd_bench(args):
    if (args.preset is None) == (args.spec is None):
        raise UsageError("give exactly one of --preset or --spec")
    if args.preset:
        spec = bench.preset(args.preset, reps=args.reps or 5, seed=args.seed or 0)
    else:
        try:
            text = Path(args.spec).read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read spec {args.spec}: {exc.strerror}") from None
        spec = bench.ExperimentSpec.from_json(text)
        if args.reps is not None:
            spec.reps = args.reps
        if args.seed is not None:
            spec.seed = args.seed
    rows = bench.run_experiment(spec, jobs=args.jobs)
    csv_text = bench.rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    if args.json:
        Path(args.json).write_text(bench.rows_to_json(rows) + "\n", encoding="utf-8")
    failed = sum(1 for r in rows if str(r["terminated_by"]).startswith("error"))
    if failed:
        log.warning("%d rows failed; see the terminated_by column", failed)
    return EXIT_OK


def cmd_eval(args):
    cfg_file = _load_config(args.config)
    solver = args.solver or cfg_file.get("solver", "hybrid")
    if solver not in bench.SOLVERS:
        raise UsageError(f"solver must be one of {', '.join(bench.SOLVERS)}, got {solver!r}")
    value_range = tuple(args.range) if args.range else None
    split = load_triplets(
        args.ratings, sr=args.sr, scheme=args.scheme, seed=args.seed,
        recenter_offset=args.recenter, value_range=value_range,
        n_users=args.users, n_items=args.items,
    )
    if split.heldout_empty:
        raise UsageError("held-out set is empty; lower --sr")
    cfg, c_lambda = _resolve_solver_config(args, split.train, cfg_file, solver)
    rep = bench.run_solver(solver, split.train, cfg)
    U, V = rep.U, rep.V
    pred = np.einsum("ij,ij->i", U[split.heldout_rows], V[split.heldout_cols])
    out = {
        "solver": solver,
        "c_lambda": c_lambda,
        "n_users": split.train.n_rows,
        "n_items": split.train.n_cols,
        "train_entries": split.train.nnz,
        "heldout_entries": int(split.heldout_values.size),
        "nmae": nmae(pred, split.heldout_values, split.r_min, split.r_max),
        "rank": rep.rank,
        "iters": rep.iters,
        "wall_ms": rep.wall_ms,
        "terminated_by": rep.terminated_by,
        "recenter": args.recenter,
        "config": rep.config,
    }
    if "kappa" in rep.extras:
        out["kappa"] = rep.extras["kappa"]
    text = json.dumps(_jsonable(out), indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def _solver_flags(p):
    p.add_argument("--solver", choices=bench.SOLVERS)
    p.add_argument("--clambda", type=float, help="c_lambda of the lambda recipe")
    p.add_argument("--lambda", dest="lam", type=float, help="explicit lambda (overrides --clambda)")
    p.add_argument("--mu", type=float)
    p.add_argument("--r", type=int, help="factor width (default min(n, m, 150))")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--beta-safeguard", action="store_true",
                   help="AMM: cap extrapolation and certify the potential decrease")
    p.add_argument("--config", help="JSON file; flags override its values")
    p.add_argument("--out", help="write the JSON report here instead of stdout")


def build_parser():
    parser = argparse.ArgumentParser(prog="l20mc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic instance")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--rstar", type=int, required=True)
    p.add_argument("--sr", type=_sample_ratio, required=True)
    p.add_argument("--scheme", type=_scheme, default="scheme1")
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run one solver on an observation file")
    p.add_argument("--obs", required=True)
    p.add_argument("--truth", help="ground-truth factor file; adds RE to the report")
    p.add_argument("--factors-out")
    _solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run a multi-seed benchmark")
    p.add_argument("--preset", choices=("table1-small", "table1", "fig2"))
    p.add_argument("--spec", help="experiment spec JSON")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="CSV output (default stdout)")
    p.add_argument("--json", help="also write the rows as JSON here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="train on a rating file and report held-out NMAE")
    p.add_argument("--ratings", required=True)
    p.add_argument("--users", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--sr", type=_sample_ratio, required=True)
    p.add_argument("--scheme", type=_scheme, default="scheme1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--recenter", type=float, default=0.0)
    p.add_argument("--range", type=float, nargs=2, metavar=("MIN", "MAX"))
    _solver_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SolverBreakdown as exc:
        print(f"error: solver breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        name = getattr(exc, "filename", None)
        msg = f"{exc.strerror}: {name}" if name else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
