import json

import numpy as np
import pytest

from l20mc.cli import main
from l20mc.datagen import read_obs
from l20mc.factors import read_factors


def _gen(out, seed=7, extra=()):
    return main(["gen", "--n", "40", "--m", "30", "--rstar", "2", "--sr", "0.4", "--seed", str(seed),
                 "--out", str(out), *extra])


def test_gen_is_deterministic(tmp_path, capsys):
    assert _gen(tmp_path / "a") == 0
    assert _gen(tmp_path / "b") == 0
    for name in ("obs.txt", "truth.txt", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    meta = json.loads((tmp_path / "a" / "meta.json").read_text())
    assert meta["nnz"] == 480 and read_obs(tmp_path / "a" / "obs.txt").nnz == 480
    assert _gen(tmp_path / "c", seed=8) == 0
    assert (tmp_path / "a" / "obs.txt").read_bytes() != (tmp_path / "c" / "obs.txt").read_bytes()


@pytest.mark.parametrize("sr", ["1", "0", "1.5"])
def test_gen_rejects_sample_ratio_outside_open_interval(tmp_path, sr, capsys):
    code = main(["gen", "--n", "10", "--rstar", "1", "--sr", sr, "--out", str(tmp_path)])
    assert code == 2
    assert "sample ratio" in capsys.readouterr().err


def test_solve_with_truth_and_factor_dump(tmp_path, capsys):
    _gen(tmp_path)
    capsys.readouterr()
    code = main(["solve", "--obs", str(tmp_path / "obs.txt"), "--truth", str(tmp_path / "truth.txt"),
                 "--solver", "hybrid", "--clambda", "0.5", "--r", "8",
                 "--factors-out", str(tmp_path / "f.txt")])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["model"] == "hybrid" and out["rank"] == 2 and out["re"] < 0.2
    assert out["c_lambda"] == 0.5 and out["config"]["r"] == 8
    fp = read_factors(tmp_path / "f.txt")
    # the hybrid polishes on the detected support, so only those columns come back
    assert fp.U.shape == (40, 2) and np.all(np.any(fp.U != 0, axis=0))


def test_flags_override_config_file(tmp_path, capsys):
    _gen(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"solver": "als", "lambda": 0.7, "r": 5, "options": {"max_iters": 3}}))
    capsys.readouterr()
    assert main(["solve", "--obs", str(tmp_path / "obs.txt"), "--config", str(cfg), "--r", "4"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["model"] == "als-nuclear"
    assert out["config"]["lam"] == 0.7 and out["config"]["r"] == 4 and out["iters"] == 3


def test_missing_file_exits_3_and_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    assert main(["solve", "--obs", str(missing), "--solver", "amm"]) == 3
    assert str(missing) in capsys.readouterr().err


def test_bad_config_key_exits_2(tmp_path, capsys):
    _gen(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"solver": "amm", "speed": 3}))
    assert main(["solve", "--obs", str(tmp_path / "obs.txt"), "--config", str(cfg)]) == 2
    assert "$.speed" in capsys.readouterr().err


def test_safeguard_flag_only_for_amm(tmp_path, capsys):
    _gen(tmp_path)
    assert main(["solve", "--obs", str(tmp_path / "obs.txt"), "--solver", "map",
                 "--beta-safeguard"]) == 2


def test_malformed_bench_spec_reports_json_path(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"cells": [{"n": 30, "r_star": 2, "sr": 2.0, "solvers": {"amm": 1}}]}))
    assert main(["bench", "--spec", str(spec)]) == 2
    assert "$.cells[0].sr" in capsys.readouterr().err
    assert main(["bench", "--spec", str(tmp_path / "absent.json")]) == 3


def test_bench_jobs_give_identical_rows(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"reps": 2, "cells": [
        {"n": 30, "r_star": 2, "sr": 0.4, "r": 6, "solvers": {"hybrid": 0.5, "amm": 0.5}}]}))
    outs = []
    for jobs in ("1", "2"):
        dest = tmp_path / f"rows{jobs}.csv"
        assert main(["bench", "--spec", str(spec), "--jobs", jobs, "--out", str(dest),
                     "--json", str(tmp_path / f"rows{jobs}.json")]) == 0
        rows = json.loads((tmp_path / f"rows{jobs}.json").read_text())
        outs.append([{k: v for k, v in r.items() if k != "wall_ms"} for r in rows])
    assert outs[0] == outs[1]
    assert (tmp_path / "rows1.csv").read_text().startswith("solver,")


def _ratings(path, n=60, m=40, seed=0):
    rng = np.random.default_rng(seed)
    u, v = rng.uniform(-1, 1, n), rng.uniform(-2, 2, m)
    lines = [f"{i + 1} {j + 1} {3 + u[i] * v[j]:.6f}" for i in range(n) for j in range(m)]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_eval_reports_nmae_schema(tmp_path, capsys):
    path = _ratings(tmp_path / "r.txt")
    code = main(["eval", "--ratings", str(path), "--sr", "0.3", "--recenter", "3",
                 "--range", "1", "5", "--solver", "hybrid", "--clambda", "1"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    for key in ("nmae", "rank", "iters", "wall_ms", "kappa", "train_entries", "heldout_entries"):
        assert key in out
    assert out["train_entries"] + out["heldout_entries"] == 2400
    assert out["nmae"] < 0.05 and out["rank"] == 1


def test_unknown_subcommand_exits_2(capsys):
    assert main(["frobnicate"]) == 2
