import json

import numpy as np
import pytest

from anchor_mva.cli import load_model, main
from anchor_mva.config import ConfigError, load
from anchor_mva.estimators import predict

SMALL_SWEEP = [
    "--set", "scm.d=3", "--set", "scm.p=3", "--set", "scm.rank=1",
    "--set", "sweep.n=40", "--set", "sweep.replicates=2", "--set", "sweep.t_steps=2",
    "--set", "sweep.estimators=['MLR','RRR']", "--set", "sweep.gammas=['pa',1,5,'iv']",
]


def run(*argv):
    return main([str(a) for a in argv])


def read(path):
    return path.read_text(encoding="utf-8")


def test_minimal_sweep(tmp_path):
    out = tmp_path / "s.csv"
    code = run("sweep", "--out", out, "--set", "sweep.estimators=['MLR']", "--set", "sweep.gammas=[1]",
               "--set", "sweep.t_steps=1", "--set", "sweep.replicates=1", "--set", "sweep.n=50")
    assert code == 0
    assert len(read(out).splitlines()) == 2
    summary = read(tmp_path / "s_summary.csv").splitlines()
    assert summary[0].startswith("estimator,gamma,t,metric,count,mean,sem")
    assert len(summary) == 2


def test_sweep_rerun_and_threads_identical(tmp_path):
    paths = [tmp_path / f"{k}.csv" for k in ("a", "b", "c")]
    assert run("sweep", *SMALL_SWEEP, "--out", paths[0]) == 0
    assert run("sweep", *SMALL_SWEEP, "--out", paths[1]) == 0
    assert run("sweep", *SMALL_SWEEP, "--threads", 8, "--out", paths[2]) == 0
    texts = [read(p) for p in paths]
    assert texts[0] == texts[1] == texts[2]
    assert len(texts[0].splitlines()) == 1 + 2 * 4 * 2 * 2


def test_sweep_seed_changes_output(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("sweep", *SMALL_SWEEP, "--out", a, "--seed", 1)
    run("sweep", *SMALL_SWEEP, "--out", b, "--seed", 2)
    assert read(a) != read(b)


def test_env_seed_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("ANCHOR_MVA_SEED", "7")
    assert load("sweep", None, [])["run"]["seed"] == 7
    assert load("sweep", None, [("run", "seed", 3)])["run"]["seed"] == 3
    monkeypatch.delenv("ANCHOR_MVA_SEED")
    assert load("sweep", None, [])["run"]["seed"] == 0


@pytest.mark.parametrize("argv", [
    ["sweep", "--set", "sweep.bogus=1"],
    ["sweep", "--set", "nosection.key=1"],
    ["sweep", "--set", "scm.rank=99"],
    ["sweep", "--set", "sweep.estimators=['LASSO']"],
    ["benchmark-env", "--models", "LR,SVR"],
    ["fit"],
    ["predict", "--data", "x.csv"],
    ["select", "--set", "select.w_error=0.9"],
])
def test_config_errors_exit_2(tmp_path, argv, capsys):
    assert run(*argv, "--out", tmp_path / "o") == 2
    assert "error" in capsys.readouterr().err


def test_unknown_model_lists_valid(tmp_path, capsys):
    run("benchmark-env", "--models", "LR,SVR", "--out", tmp_path / "b.csv")
    err = capsys.readouterr().err
    assert "A-PLS" in err and "SVR" in err


def test_config_file(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        "[scm]\nd = 2\np = 2\nrank = 1\n[sweep]\nestimators = ['MLR']\ngammas = [1]\n"
        "t_steps = 1\nreplicates = 1\nn = 30\n", encoding="utf-8")
    assert run("sweep", "-c", cfg, "--out", tmp_path / "s.csv") == 0
    with pytest.raises(ConfigError):
        bad = tmp_path / "bad.toml"
        bad.write_text("[sweep]\nn = 'many'\n", encoding="utf-8")
        load("sweep", bad, [])


def test_benchmark_synthetic_structure(tmp_path):
    out = tmp_path / "b.csv"
    code = run("benchmark-env", "--models", "LR,AR", "--out", out, "--set", "benchmark.gammas=[1,5]",
               "--set", "benchmark.synthetic_n_per_group=40")
    assert code == 0
    rows = read(out).splitlines()
    assert len(rows) == 1 + 2 * 24
    summary = read(tmp_path / "b_summary.csv").splitlines()
    assert summary[0] == "model,splits,mean,median,max,min,better_than_lr"
    assert summary[1].startswith("LR,24,") and summary[1].endswith(",0")


def test_benchmark_threads_identical(tmp_path):
    common = ["--models", "LR,A-Ridge", "--set", "benchmark.gammas=[1,5]", "--set", "benchmark.alphas=[0.1,1]",
              "--set", "benchmark.synthetic_n_per_group=30"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("benchmark-env", *common, "--out", a, "--threads", 1) == 0
    assert run("benchmark-env", *common, "--out", b, "--threads", 8) == 0
    assert read(a) == read(b)


def write_dataset(path, n=60, seed=0):
    rng = np.random.default_rng(seed)
    env = np.repeat(["s", "w", "u"], n // 3)
    shift = np.select([env == "s", env == "w"], [-1.0, 1.0], 0.0)
    x = rng.normal(size=(n, 3)) + shift[:, None]
    y = x @ rng.normal(size=(3, 2)) + shift[:, None] + 0.1 * rng.normal(size=(n, 2))
    lines = ["x0,x1,x2,y0,y1,g"]
    lines += [",".join([*(repr(float(v)) for v in (*xi, *yi)), e]) for xi, yi, e in zip(x, y, env)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return x


ROLES = ["--role", "x0=predictor", "--role", "x1=predictor", "--role", "x2=predictor",
         "--role", "y0=target", "--role", "y1=target"]


def test_fit_predict_round_trip(tmp_path):
    data = tmp_path / "d.csv"
    x = write_dataset(data)
    model_path, pred_path = tmp_path / "m.json", tmp_path / "p.csv"
    assert run("fit", "--data", data, *ROLES, "--role", "g=environment", "--set", "fit.gamma=5",
               "--set", "fit.kind='RRRR'", "--set", "fit.rank=1", "--set", "fit.alpha=0.5",
               "--out", model_path) == 0
    before = read(data)
    assert run("predict", "--data", data, "--model", model_path, "--set", "data.default_role='ignore'",
               "--out", pred_path) == 0
    assert read(data) == before
    lines = read(pred_path).splitlines()
    assert lines[0] == "y0,y1"
    got = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    want = predict(load_model(model_path), x)
    assert np.abs(got - want).max() < 1e-12
    doc = json.loads(read(model_path))
    assert doc["metadata"]["anchor_names"] == ["env=s", "env=u", "env=w"]


def test_predict_wrong_columns(tmp_path):
    data = tmp_path / "d.csv"
    write_dataset(data)
    model_path = tmp_path / "m.json"
    assert run("fit", "--data", data, *ROLES, "--role", "g=ignore", "--out", model_path) == 0
    code = run("predict", "--data", data, "--model", model_path, "--role", "x0=predictor",
               "--role", "x1=predictor", "--set", "data.default_role='ignore'", "--out", tmp_path / "p.csv")
    assert code == 2


def test_predict_missing_model(tmp_path):
    data = tmp_path / "d.csv"
    write_dataset(data)
    assert run("predict", "--data", data, "--model", tmp_path / "none.json", "--out", tmp_path / "p") == 2


def test_gamma_one_json_matches_without_anchor(tmp_path):
    data = tmp_path / "d.csv"
    write_dataset(data)
    with_anchor, without = tmp_path / "a.json", tmp_path / "b.json"
    rng = np.random.default_rng(1)
    # append a numeric anchor column
    lines = read(data).splitlines()
    lines = [lines[0] + ",a0"] + [ln + f",{rng.normal()!r}" for ln in lines[1:]]
    anchored = tmp_path / "da.csv"
    anchored.write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert run("fit", "--data", anchored, *ROLES, "--role", "g=ignore", "--role", "a0=anchor",
               "--set", "fit.gamma=1", "--out", with_anchor) == 0
    assert run("fit", "--data", anchored, *ROLES, "--role", "g=ignore", "--role", "a0=ignore",
               "--set", "fit.gamma=1", "--out", without) == 0
    a, b = json.loads(read(with_anchor)), json.loads(read(without))
    assert a["model"] == b["model"]
    assert a["metadata"] != b["metadata"]


def test_select_single_point(tmp_path):
    out = tmp_path / "sel.csv"
    code = run("select", "--out", out, "--set", "select.gammas=[2.0]", "--set", "select.alphas=[10.0]",
               "--set", "select.ranks=[2]", "--set", "scm.d=6", "--set", "scm.p=6", "--set", "scm.rank=2",
               "--set", "select.n_test=50")
    assert code == 0
    chosen = json.loads(read(tmp_path / "sel_chosen.json"))
    assert (chosen["gamma"], chosen["alpha"], chosen["rank"]) == ("2.0", 10.0, 2)
    assert chosen["grid_size"] == 1 and np.isfinite(chosen["test_mse"])
    assert len(read(tmp_path / "sel_pareto.csv").splitlines()) == 2


def test_select_error_only_weights_pick_mse_argmin(tmp_path):
    out = tmp_path / "sel.csv"
    code = run("select", "--out", out, "--set", "select.gammas=[1.0, 10.0, 100.0]",
               "--set", "select.alphas=[0.1, 100.0]", "--set", "select.ranks=[1, 3]",
               "--set", "select.w_error=1.0", "--set", "select.w_corr=0.0",
               "--set", "scm.d=6", "--set", "scm.p=6", "--set", "scm.rank=3")
    assert code == 0
    lines = read(out).splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
    best = min(rows, key=lambda r: float(r["val_mse"]))
    chosen = json.loads(read(tmp_path / "sel_chosen.json"))
    assert chosen["val_mse"] == float(best["val_mse"])
    assert len(rows) == 12


def test_select_default_grid_cardinality():
    cfg = load("select", None, [])
    sel = cfg["select"]
    assert len(sel["gammas"]) * len(sel["alphas"]) * len(sel["ranks"]) == 2000


def test_select_on_dataset_groups(tmp_path):
    data = tmp_path / "d.csv"
    write_dataset(data)
    out = tmp_path / "sel.csv"
    code = run("select", "--data", data, *ROLES, "--role", "g=environment", "--set", "select.source='data'",
               "--set", "select.splits='groups'", "--set", "select.kind='MLR'",
               "--set", "select.gammas=[1.0, 4.0]", "--out", out)
    assert code == 0
    assert len(read(out).splitlines()) == 3


def test_verify_passes(capsys):
    assert run("verify") == 0
    out = capsys.readouterr().out
    assert "[FAIL]" not in out and "checks passed" in out
