"""Linear structural causal model simulator with anchor interventions.

Three topologies, all with one-dimensional anchor A and hidden H:

``iv``          A -> X -> Y, H -> X, H -> Y
                X = A 1^T + H 1^T + e_X,  Y = X W + H 1^T + e_Y
``confounded``  H = A + e_H, X = A 1^T + H 1^T + e_X,  Y = X W + H 1^T + e_Y
``direct``      X = A/2 1^T + H 1^T + e_X,  Y = 2 A 1^T + X W + H 1^T + e_Y

Test distributions intervene on the anchor by rescaling its noise; ``t`` is
the perturbation strength (t = 1 reproduces training).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import metrics
from .anchor import gamma_label, parse_gamma
from .data import DataBlock
from .estimators import EstimatorSpec, fit_anchor, predict

TOPOLOGIES = ("iv", "confounded", "direct")
NOISE_FAMILIES = ("gaussian", "exponential", "gamma", "poisson")

# (A -> H, A -> X, H -> X, A -> Y, H -> Y)
_COEFS = {
    "iv": (0.0, 1.0, 1.0, 0.0, 1.0),
    "confounded": (1.0, 1.0, 1.0, 0.0, 1.0),
    "direct": (0.0, 0.5, 1.0, 2.0, 1.0),
}


def make_lowrank_coefficients(
    d: int, p: int, rank: int, seed=0, low: float = 1.0, high: float = 2.0
) -> np.ndarray:
    """``W = U V`` with U (d, rank), V (rank, p) i.i.d. Uniform(low, high),
    each factor divided by the sum of its entries.
    """
    if not 1 <= rank <= min(d, p):
        raise ValueError(f"rank must lie in [1, {min(d, p)}], got {rank}")
    rng = np.random.default_rng(seed)
    u = rng.uniform(low, high, size=(d, rank))
    v = rng.uniform(low, high, size=(rank, p))
    return (u / u.sum()) @ (v / v.sum())


@dataclass(frozen=True)
class ScmSpec:
    w_true: np.ndarray
    topology: str = "iv"
    noise: str = "gaussian"
    t_is_variance: bool = True

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w_true, dtype=float))
        object.__setattr__(self, "w_true", w)
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}; valid: {TOPOLOGIES}")
        if self.noise not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.noise!r}; valid: {NOISE_FAMILIES}")

    @property
    def d(self) -> int:
        return self.w_true.shape[0]

    @property
    def p(self) -> int:
        return self.w_true.shape[1]

    def anchor_scale(self, t: float) -> float:
        if t < 0:
            raise ValueError("perturbation strength must be >= 0")
        return math.sqrt(t) if self.t_is_variance else float(t)


def _noise(rng: np.random.Generator, family: str, size) -> np.ndarray:
    if family == "gaussian":
        e = rng.standard_normal(size)
    elif family == "exponential":
        e = rng.exponential(1.0, size)
    elif family == "gamma":
        e = rng.gamma(1.0, 1.0, size)
    elif family == "poisson":
        e = rng.poisson(1.0, size).astype(float)
    else:
        raise ValueError(f"unknown noise family {family!r}")
    return e - e.mean(axis=0)


def sample(spec: ScmSpec, n: int, t: float = 1.0, seed=0) -> DataBlock:
    """Draw n centered observations of (X, Y, A) with anchor strength ``t``.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts, including a
    sequence of ints.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    d, p = spec.d, spec.p
    e_a = _noise(rng, spec.noise, (n, 1)) * spec.anchor_scale(t)
    e_h = _noise(rng, spec.noise, (n, 1))
    e_x = _noise(rng, spec.noise, (n, d))
    e_y = _noise(rng, spec.noise, (n, p))
    a_h, a_x, h_x, a_y, h_y = _COEFS[spec.topology]
    a = e_a
    h = a_h * a + e_h
    x = a_x * a + h_x * h + e_x
    y = x @ spec.w_true + a_y * a + h_y * h + e_y
    return DataBlock(x=x - x.mean(axis=0), y=y - y.mean(axis=0), a=a - a.mean(axis=0))


def population_covariances(spec: ScmSpec, t: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Population second moments of stacked (X, Y): total and anchor-explained.

    All noise families have unit variance, so (X, Y) = e L for the exogenous
    vector e = (e_A, e_H, e_X, e_Y) and the moments are L^T diag(var) L.
    """
    d, p = spec.d, spec.p
    a_h, a_x, h_x, a_y, h_y = _COEFS[spec.topology]
    w = spec.w_true
    k = 2 + d + p
    # rows: exogenous sources; columns: (X, Y)
    lx = np.zeros((k, d))
    lx[0] = a_x + h_x * a_h
    lx[1] = h_x
    lx[2 : 2 + d] = np.eye(d)
    ly = lx @ w
    ly[0] += a_y + h_y * a_h
    ly[1] += h_y
    ly[2 + d :] = np.eye(p)
    load = np.hstack([lx, ly])
    var = np.ones(k)
    var[0] = spec.anchor_scale(t) ** 2
    joint = load.T @ (var[:, None] * load)
    explained = var[0] * np.outer(load[0], load[0])
    return joint, explained


def population_anchor_mlr(spec: ScmSpec, gamma: float) -> np.ndarray:
    """Population anchor-regularised least-squares coefficients."""
    gamma = parse_gamma(gamma)
    joint, explained = population_covariances(spec)
    d = spec.d
    if math.isinf(gamma):
        m = explained
    else:
        m = joint + (gamma - 1.0) * explained
    return np.linalg.lstsq(m[:d, :d], m[:d, d:], rcond=None)[0]


@dataclass(frozen=True)
class SweepRecord:
    estimator: str
    gamma: str
    t: float
    replicate: int
    metric: str
    value: float


@dataclass
class SweepResult:
    records: list[SweepRecord] = field(default_factory=list)

    HEADER = ("estimator", "gamma", "t", "replicate", "metric", "value")

    def rows(self) -> Iterable[tuple]:
        for r in self.records:
            yield (r.estimator, r.gamma, repr(float(r.t)), str(r.replicate), r.metric, repr(float(r.value)))

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.HEADER)
            wr.writerows(self.rows())

    def values(self, estimator: str, gamma, metric: str = "mse") -> dict[float, np.ndarray]:
        """``{t: array over replicates}`` for one estimator/gamma cell."""
        g = gamma if isinstance(gamma, str) else gamma_label(parse_gamma(gamma))
        out: dict[float, list[float]] = {}
        for r in self.records:
            if r.estimator == estimator and r.gamma == g and r.metric == metric:
                out.setdefault(r.t, []).append(r.value)
        return {t: np.asarray(v) for t, v in sorted(out.items())}

    def summary(self) -> list[dict]:
        """Mean and 2*SEM band per (estimator, gamma, t, metric)."""
        groups: dict[tuple, list[float]] = {}
        for r in self.records:
            groups.setdefault((r.estimator, r.gamma, r.t, r.metric), []).append(r.value)
        out = []
        for (est, g, t, m), vals in groups.items():
            v = np.asarray(vals, dtype=float)
            v = v[np.isfinite(v)]
            mean = float(v.mean()) if v.size else float("nan")
            sem = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
            out.append({
                "estimator": est, "gamma": g, "t": t, "metric": m, "count": int(v.size),
                "mean": mean, "sem": sem, "lower": mean - 2 * sem, "upper": mean + 2 * sem,
            })
        return out


def _replicate(args) -> list[SweepRecord]:
    spec, estimators, t_grid, n, n_test, b, base_seed, metric_names = args
    train = sample(spec, n, 1.0, seed=[base_seed, b, 0])
    tests = [sample(spec, n_test, t, seed=[base_seed, b, 1 + i]) for i, t in enumerate(t_grid)]
    out = []
    for est, gamma in estimators:
        g = parse_gamma(gamma)
        try:
            model = fit_anchor(est, train, g)
        except Exception:  # recorded per cell, sweep continues
            model = None
        for t, test in zip(t_grid, tests):
            if model is None:
                scores = {m: float("nan") for m in metric_names}
            else:
                y_hat = predict(model, test.x)
                scores = {"mse": metrics.mse(test.y, y_hat)}
                if "r2" in metric_names:
                    scores["r2"] = metrics.r2(test.y, y_hat)
                if "abscorr" in metric_names:
                    scores["abscorr"] = metrics.anchor_residual_corr(test.y, y_hat, test.a)
            for m in metric_names:
                out.append(SweepRecord(est.label, gamma_label(g), float(t), b, m, scores[m]))
    return out


def perturbation_sweep(
    spec: ScmSpec,
    estimators: Sequence[tuple[EstimatorSpec, object]],
    t_grid: Sequence[float],
    n: int = 300,
    replicates: int = 20,
    base_seed: int = 0,
    *,
    n_test: int | None = None,
    metric_names: Sequence[str] = ("mse",),
    threads: int = 1,
    on_replicate=None,
) -> SweepResult:
    """Train each (estimator, gamma) on a t = 1 draw and score it on fresh
    draws at each strength in ``t_grid``, for ``replicates`` replicates.

    Replicate ``b`` trains on seed ``(base_seed, b, 0)`` and tests at the i-th
    strength on seed ``(base_seed, b, 1 + i)``, so results do not depend on
    scheduling or on ``threads``. ``on_replicate`` is called with each
    replicate's records, in replicate order, as soon as they are available.
    """
    if not estimators or not len(t_grid) or replicates < 1:
        raise ValueError("estimators, t_grid and replicates must be non-empty")
    unknown = set(metric_names) - {"mse", "r2", "abscorr"}
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    jobs = [
        (spec, list(estimators), [float(t) for t in t_grid], n, n_test or n, b, base_seed, tuple(metric_names))
        for b in range(replicates)
    ]
    records: list[SweepRecord] = []

    def collect(chunks):
        for chunk in chunks:
            records.extend(chunk)
            if on_replicate is not None:
                on_replicate(chunk)

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            collect(pool.map(_replicate, jobs))
    else:
        collect(_replicate(j) for j in jobs)
    return SweepResult(records)
