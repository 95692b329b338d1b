"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line that is printed in the terminal
summary (and immediately with ``pytest -s``).
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from anchor_mva import checks
from anchor_mva.baselines import GdConfig, fit_cvp, fit_irm, gradient_check
from anchor_mva.benchmark import BenchmarkGrids, run_env_benchmark, summarize, synthetic_env_dataset
from anchor_mva.cli import main
from anchor_mva.config import load as load_config
from anchor_mva.data import load_csv
from anchor_mva.estimators import EstimatorSpec, fit_anchor, predict
from anchor_mva.metrics import mse
from anchor_mva.scm import ScmSpec, make_lowrank_coefficients, perturbation_sweep, sample

from conftest import ACCEPTANCE_LINES

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def report(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def test_01_transform_identity():
    t0 = time.perf_counter()
    r = checks.transform_identity_sweep(instances=200, seed=0)
    dt = time.perf_counter() - t0
    report(1, "transform identity", r.passed and dt < 10,
           f"max rel. deviation {r.value:.2e} < 1e-10 over 200 instances, {dt:.2f}s < 10s")


def test_02_worst_case_risk_monte_carlo():
    t0 = time.perf_counter()
    cmps = checks.worst_case_risk_mc(gammas=(1.0, 2.0, 5.0), n=200_000, seed=0)
    dt = time.perf_counter() - t0
    worst = max(c.z for c in cmps)
    rel = max(abs(c.test_risk - c.bound) / c.bound for c in cmps)
    parts = ", ".join(f"gamma={c.gamma:g}: {c.test_risk:.4f} vs {c.bound:.4f}" for c in cmps)
    report(2, "worst-case risk Monte Carlo", worst < 3 and dt < 60,
           f"max |z| {worst:.2f} < 3 (max rel. gap {rel:.2%}; {parts}), {dt:.1f}s < 60s")


def test_03_limit_estimators():
    res = checks.limit_estimators(seed=0)
    detail = "; ".join(f"{r.name} {r.value:.1e}" for r in res)
    report(3, "limit estimators", all(r.passed and r.threshold <= 1e-8 for r in res), detail + " (all < 1e-8)")


def test_04_degeneracies():
    res = checks.degeneracies(seed=0)
    detail = "; ".join(f"{r.name} {r.value:.1e}" for r in res)
    report(4, "estimator degeneracies", all(r.passed and r.threshold <= 1e-8 for r in res), detail + " (all < 1e-8)")


def test_05_perturbation_orderings():
    t0 = time.perf_counter()
    spec = ScmSpec(make_lowrank_coefficients(10, 10, 3, seed=0))
    kinds = ("MLR", "RRR", "OPLS", "PLS")
    modes = ("pa", 1.0, 5.0, "iv")
    ests = [(EstimatorSpec(k, rank=None if k == "MLR" else 3), g) for k in kinds for g in modes]
    t_grid = np.linspace(0, 4, 20)
    res = perturbation_sweep(spec, ests, t_grid, n=300, replicates=20, base_seed=0)
    dt = time.perf_counter() - t0
    t1 = float(t_grid[np.argmin(np.abs(t_grid - 1.0))])
    failures = []
    for est, _ in ests[:: len(modes)]:
        cells = {g: res.values(est.label, g) for g in modes}
        mean = {g: {t: v.mean() for t, v in c.items()} for g, c in cells.items()}
        sem = {g: {t: v.std(ddof=1) / np.sqrt(v.size) for t, v in c.items()} for g, c in cells.items()}
        if min(modes, key=lambda g: mean[g][0.0]) != "pa":
            failures.append(f"{est.kind}(a)")
        if not mean[5.0][4.0] < mean[1.0][4.0]:
            failures.append(f"{est.kind}(b)")
        gap = mean[1.0][t1] - mean[5.0][t1]
        if not (gap < 0 or abs(gap) <= 2 * max(sem[1.0][t1], sem[5.0][t1])):
            failures.append(f"{est.kind}(c)")
        rise = {g: mean[g][4.0] - mean[g][t1] for g in modes}
        if min(rise, key=rise.get) != "iv":
            failures.append(f"{est.kind}(d)")
    report(5, "perturbation-sweep orderings", not failures and dt < 600,
           f"4 estimators x 4 orderings, failures: {failures or 'none'}; {dt:.1f}s < 600s")


def test_06_reduced_rank_beats_per_output():
    t0 = time.perf_counter()
    spec = ScmSpec(make_lowrank_coefficients(400, 400, 10, seed=0))
    ests = [(EstimatorSpec("MLR"), 5.0), (EstimatorSpec("RRR", rank=10), 5.0)]
    res = perturbation_sweep(spec, ests, [2.0], n=200, replicates=50, base_seed=0)
    dt = time.perf_counter() - t0
    # anchor MLR is separable across outputs, so it equals one anchor regression per output
    ar = res.values("MLR", 5.0)[2.0]
    rrr = res.values("(RRR,rank=10)", 5.0)[2.0]
    gap = 1 - rrr.mean() / ar.mean()
    ci = {k: 1.96 * v.std(ddof=1) / np.sqrt(v.size) for k, v in (("rrr", rrr), ("ar", ar))}
    report(6, "A-RRR vs per-output AR", gap >= 0.15 and dt < 900,
           f"A-RRR {rrr.mean():.3f}+-{ci['rrr']:.3f} vs AR {ar.mean():.3f}+-{ci['ar']:.3f} (95% CI), "
           f"gap {gap:.1%} >= 15% (reference 1.45+-0.24 vs 1.91+-0.26); {dt:.1f}s < 900s")


def _validated_alpha(spec, kind, rank=None):
    """Ridge strength with the lowest gamma=1 MSE on an independent draw."""
    train = sample(spec, 200, 1.0, seed=[99, 0])
    val = sample(spec, 200, 1.0, seed=[99, 1])
    alphas = np.logspace(0, 5, 20)
    errs = [mse(val.y, predict(fit_anchor(EstimatorSpec(kind, rank=rank, alpha=a), train, 1.0), val.x))
            for a in alphas]
    return float(alphas[int(np.argmin(errs))])


def test_07_high_dimensional_robustness():
    t0 = time.perf_counter()
    spec = ScmSpec(make_lowrank_coefficients(300, 300, 100, seed=0))
    ridge = EstimatorSpec("Ridge", alpha=_validated_alpha(spec, "Ridge"))
    rrrr = EstimatorSpec("RRRR", rank=100, alpha=_validated_alpha(spec, "RRRR", 100))
    ests = [(e, g) for e in (ridge, rrrr) for g in (1.0, 5.0)]
    res = perturbation_sweep(spec, ests, [4.0], n=200, replicates=10, base_seed=0)
    dt = time.perf_counter() - t0
    parts, ok = [], True
    for e, name in ((ridge, "Ridge"), (rrrr, "RRRR")):
        m1, m5 = (res.values(e.label, g)[4.0].mean() for g in (1.0, 5.0))
        ok &= m5 < m1
        parts.append(f"{name} gamma=5 {m5:.3f} < gamma=1 {m1:.3f}")
    report(7, "high-dimensional robustness", ok and dt < 600, "; ".join(parts) + f"; {dt:.1f}s < 600s")


def test_08_baseline_sanity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 3))
    y = x @ rng.normal(size=(3, 2)) + 0.3 * rng.normal(size=(200, 2))
    env = np.repeat(["a", "b"], 100)
    ols = np.linalg.lstsq(x, y, rcond=None)[0]
    tight = GdConfig(tolerance=1e-12, patience=10**6)
    gaps = {}
    for name, m in (("IRM", fit_irm(x, y, env, tight, validation=(x, y))),
                    ("CVP", fit_cvp(x, y, env, tight, validation=(x, y)))):
        gaps[name] = np.linalg.norm(x @ m.coef - x @ ols) / np.linalg.norm(y)
    xs, ys, es = x[:20], y[:20], np.array(["a"] * 10 + ["b"] * 9 + ["c"])
    theta = (np.eye(3) + 0.1 * rng.normal(size=(3, 3)), rng.normal(size=(3, 2)))
    grad = max(gradient_check("irm", xs, ys, es, 1.0, theta), gradient_check("cvp", xs, ys, es, 1.0, theta[1]))
    xv, yv = rng.normal(size=(50, 3)), rng.normal(size=(50, 2))
    early = all(
        m.best_val_mse == min(m.val_history)
        for m in (fit_irm(x, y, env, GdConfig(penalty=0.5, patience=20), validation=(xv, yv)),
                  fit_cvp(x, y, env, GdConfig(penalty=0.5, patience=20), validation=(xv, yv)))
    )
    ok = max(gaps.values()) < 1e-3 and grad < 1e-5 and early
    report(8, "baseline sanity", ok,
           f"lambda=0 rel. gap to OLS IRM {gaps['IRM']:.1e}, CVP {gaps['CVP']:.1e} (< 1e-3); "
           f"gradient check {grad:.1e} < 1e-5; best-validation return {early}")


def _air_quality_path():
    env = os.environ.get("ANCHOR_MVA_AIR_QUALITY")
    return Path(env) if env else None


def test_09_air_quality_protocol():
    path = _air_quality_path()
    if path is not None and path.exists():
        cfg = load_config("benchmark-env", CONFIGS / "air_quality.toml", [])["data"]
        block = load_csv(path, cfg["roles"], delimiter=cfg["delimiter"], decimal=cfg["decimal"],
                         missing_sentinel=cfg["missing_sentinel"], default_role=cfg["default_role"])
        res = run_env_benchmark(block, ["LR", "A-PLS"], BenchmarkGrids(), GdConfig())
        table = {row[0]: row for row in summarize(res)}
        wins = int(table["A-PLS"][-1])
        report(9, "air-quality protocol", len(res) == 48 and wins >= 18,
               f"A-PLS beats LR in {wins}/24 splits (>= 18; reference 22)")
        return
    block = synthetic_env_dataset(200, seed=0)
    res = run_env_benchmark(block, ["LR", "A-PLS"], BenchmarkGrids(gammas=(0.1, 1.0, 10.0, 100.0)),
                            GdConfig(), scheme="ordered")
    leak = 0
    for r in res:
        tr, va, te = (set(g) for g in r.groups)
        leak += bool(tr & va or tr & te or va & te) or len(tr) != 2
    table = {row[0]: row for row in summarize(res)}
    ok = len(res) == 48 and leak == 0 and table["LR"][1] == "24" and table["LR"][-1] == "0"
    report(9, "air-quality protocol", ok,
           f"UCI file not supplied (set ANCHOR_MVA_AIR_QUALITY); synthetic 4-group run: {len(res)} rows "
           f"(24 splits x 2 models), {leak} leaking splits, LR-vs-LR count {table['LR'][-1]}, "
           f"A-PLS beats LR {table['A-PLS'][-1]}/24")


def _data_file(path: Path) -> None:
    rng = np.random.default_rng(0)
    env = np.repeat(["s", "w", "u"], 20)
    x = rng.normal(size=(60, 3)) + (env == "s")[:, None]
    y = x @ rng.normal(size=(3, 2)) + 0.1 * rng.normal(size=(60, 2))
    lines = ["x0,x1,x2,y0,y1,g"]
    lines += [",".join([*(repr(float(v)) for v in (*xi, *yi)), e]) for xi, yi, e in zip(x, y, env)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_10_determinism(tmp_path, capsys):
    data = tmp_path / "d.csv"
    _data_file(data)
    roles = ["--data", data, "--role", "x0=predictor", "--role", "x1=predictor", "--role", "x2=predictor",
             "--role", "y0=target", "--role", "y1=target", "--role", "g=environment"]
    commands = {
        "sweep": ["sweep", "--set", "sweep.replicates=3", "--set", "sweep.t_steps=3", "--set", "scm.d=5",
                  "--set", "scm.p=5"],
        "benchmark-env": ["benchmark-env", "--models", "LR,AR,A-PLS,CVP", "--max-epochs", "200",
                          "--set", "benchmark.synthetic_n_per_group=40", "--set", "benchmark.gammas=[0.5,5]",
                          "--set", "benchmark.lambdas=[0.1]"],
        "select": ["select", "--set", "scm.d=8", "--set", "scm.p=8", "--set", "scm.rank=2",
                   "--set", "select.gammas=[1,10]", "--set", "select.alphas=[1,100]", "--set", "select.ranks=[1,2]"],
        "fit": ["fit", *roles, "--set", "fit.gamma=4"],
    }
    mismatched = []
    for name, argv in commands.items():
        outputs = []
        for k, threads in enumerate((1, 1, 8)):
            d = tmp_path / f"{name}{k}"
            d.mkdir()
            out = d / ("model.json" if name == "fit" else "out.csv")
            code = main([str(a) for a in (*argv, "--threads", threads, "--out", out)])
            assert code == 0, name
            outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        if not outputs[0] == outputs[1] == outputs[2]:
            mismatched.append(name)
    preds = []
    for k, threads in enumerate((1, 1, 8)):
        out = tmp_path / f"pred{k}.csv"
        main([str(a) for a in ("predict", *roles[:2], "--model", tmp_path / "fit0" / "model.json",
                                "--set", "data.default_role='ignore'", "--threads", threads, "--out", out)])
        preds.append(out.read_bytes())
    if not preds[0] == preds[1] == preds[2]:
        mismatched.append("predict")
    verify = []
    for threads in (1, 8):
        capsys.readouterr()
        main(["verify", "--threads", str(threads)])
        verify.append(capsys.readouterr().out)
    if verify[0] != verify[1]:
        mismatched.append("verify")
    report(10, "determinism", not mismatched,
           "sweep, benchmark-env, select, fit, predict, verify byte-identical across reruns and "
           f"--threads 1 vs 8; mismatches: {mismatched or 'none'}")


@pytest.mark.skipif(_air_quality_path() is not None, reason="synthetic fallback only")
def test_air_quality_config_parses():
    cfg = load_config("benchmark-env", CONFIGS / "air_quality.toml", [])
    assert len([r for r in cfg["data"]["roles"].values() if r == "target"]) == 9
