"""Hyperparameter grids, splitters and error/invariance trade-off selection."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import metrics
from .anchor import gamma_label, parse_gamma
from .data import DataBlock
from .estimators import PENALISED, RANKED, EstimatorSpec, fit_anchor, predict


def log_grid(low: float, high: float, num: int) -> list[float]:
    return [float(v) for v in np.logspace(math.log10(low), math.log10(high), num)]


def int_grid(low: int, high: int, num: int) -> list[int]:
    return sorted({int(round(v)) for v in np.linspace(low, high, num)})


@dataclass(frozen=True)
class Grid:
    gammas: tuple = (1.0,)
    alphas: tuple = (0.0,)
    ranks: tuple = (1,)

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(parse_gamma(g) for g in self.gammas))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        if not (self.gammas and self.alphas and self.ranks):
            raise ValueError("grid axes must be non-empty")
        if any(a < 0 or math.isnan(a) for a in self.alphas):
            raise ValueError("alphas must be >= 0")
        if any(r < 1 for r in self.ranks):
            raise ValueError("ranks must be >= 1")

    def points(self, kind: str) -> list[dict]:
        """Parameter dicts for ``kind``; axes the estimator ignores collapse to None."""
        alphas = self.alphas if kind in PENALISED else (None,)
        ranks = self.ranks if kind in RANKED else (None,)
        return [
            {"gamma": g, "alpha": a, "rank": r}
            for g, a, r in itertools.product(self.gammas, alphas, ranks)
        ]


@dataclass(frozen=True)
class TradeoffWeights:
    w_error: float = 0.5
    w_corr: float = 0.5
    eta_error: float | None = None
    eta_corr: float | None = None

    def __post_init__(self):
        if self.w_error < 0 or self.w_corr < 0:
            raise ValueError("weights must be nonnegative")
        if abs(self.w_error + self.w_corr - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        for eta in (self.eta_error, self.eta_corr):
            if eta is not None and eta <= 0:
                raise ValueError("rescalers must be positive")


def kfold_splits(n: int, k: int, seed=0) -> list[tuple[np.ndarray, np.ndarray]]:
    if not 2 <= k <= n:
        raise ValueError(f"k must lie in [2, {n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(val)))
    return out


def env_role_splits(
    labels: Sequence,
    k_train: int = 2,
    k_val: int = 1,
    k_test: int = 1,
    scheme: str = "ordered",
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Enumerate group-level (train, val, test) row index sets.

    ``ordered`` assigns distinct groups to each of the ``k_train + k_val +
    k_test`` role slots in every possible order, so permutations within the
    training slots are counted separately (4 groups with roles
    train/train/val/test give 24). ``unique`` keeps each distinct triple of
    index sets once (12 in that case).
    """
    labels = np.asarray(labels).astype(str)
    groups = sorted(set(labels.tolist()))
    need = k_train + k_val + k_test
    if min(k_train, k_val, k_test) < 0 or k_train < 1:
        raise ValueError("invalid role counts")
    if len(groups) < need:
        raise ValueError(f"need {need} distinct groups, found {len(groups)}")
    if scheme not in ("ordered", "unique"):
        raise ValueError(f"unknown scheme {scheme!r}")

    def rows(gs) -> np.ndarray:
        return np.flatnonzero(np.isin(labels, list(gs)))

    out, seen = [], set()
    for perm in itertools.permutations(groups, need):
        tr, va, te = perm[:k_train], perm[k_train : k_train + k_val], perm[k_train + k_val :]
        if scheme == "unique":
            key = (frozenset(tr), frozenset(va), frozenset(te))
            if key in seen:
                continue
            seen.add(key)
        out.append((rows(tr), rows(va), rows(te)))
    return out


def split_groups(labels: Sequence, split) -> tuple[tuple[str, ...], ...]:
    """Group names present in each index set of ``split``."""
    labels = np.asarray(labels).astype(str)
    return tuple(tuple(sorted(set(labels[idx].tolist()))) for idx in split)


def random_group_splits(
    labels: Sequence, k_train: int, k_val: int, repeats: int, seed=0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Repeated random group-level train/validation splits (leave-groups-out)."""
    labels = np.asarray(labels).astype(str)
    groups = np.array(sorted(set(labels.tolist())))
    if len(groups) < k_train + k_val:
        raise ValueError("not enough groups")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(repeats):
        perm = rng.permutation(groups)
        tr, va = perm[:k_train], perm[k_train : k_train + k_val]
        out.append((np.flatnonzero(np.isin(labels, tr)), np.flatnonzero(np.isin(labels, va))))
    return out


@dataclass
class SelectionRow:
    gamma: float
    alpha: float | None
    rank: int | None
    val_mse: float
    val_r2: float
    val_abscorr: float
    n_failed: int = 0
    score: float = float("nan")

    @property
    def ok(self) -> bool:
        return math.isfinite(self.val_mse) and math.isfinite(self.val_abscorr)

    def params(self) -> dict:
        return {"gamma": self.gamma, "alpha": self.alpha, "rank": self.rank}

    def csv_fields(self) -> list[str]:
        fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
        return [
            gamma_label(self.gamma),
            fmt(self.alpha),
            "" if self.rank is None else str(self.rank),
            fmt(self.val_mse),
            fmt(self.val_r2),
            fmt(self.val_abscorr),
            fmt(self.score),
        ]


SELECTION_HEADER = ("gamma", "alpha", "rank", "val_mse", "val_r2", "val_abscorr", "score")


def evaluate_split(kind: str, params: dict, block: DataBlock, train, val, scale: bool = False):
    """Fit on ``train`` rows, score on ``val`` rows; (mse, r2, |corr|)."""
    spec = EstimatorSpec(kind, rank=params.get("rank"), alpha=params.get("alpha") or 0.0)
    model = fit_anchor(spec, block.subset(train), params["gamma"], scale=scale)
    vb = block.subset(val)
    y_hat = predict(model, vb.x)
    try:
        r2v = metrics.r2(vb.y, y_hat)
    except ValueError:
        r2v = float("nan")
    corr = metrics.anchor_residual_corr(vb.y, y_hat, vb.a) if vb.a is not None else float("nan")
    return metrics.mse(vb.y, y_hat), r2v, corr


def _cell(args):
    kind, params, block, train, val, scale = args
    try:
        return evaluate_split(kind, params, block, train, val, scale)
    except (ValueError, np.linalg.LinAlgError):
        return None


def grid_search(
    block: DataBlock,
    kind: str,
    grid: Grid,
    splits: Sequence,
    *,
    scale: bool = False,
    threads: int = 1,
) -> list[SelectionRow]:
    """Validation scores averaged over ``splits`` for every grid point.

    Each split is ``(train, val, ...)``; anything after the validation rows is
    ignored so test rows are never touched. Centering/scaling and anchor
    centering are refitted on each training portion.
    """
    if not splits:
        raise ValueError("no splits")
    points = grid.points(kind)
    jobs = [(kind, pt, block, sp[0], sp[1], scale) for pt in points for sp in splits]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_cell, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        results = [_cell(j) for j in jobs]
    rows = []
    ns = len(splits)
    for i, pt in enumerate(points):
        cell = [r for r in results[i * ns : (i + 1) * ns] if r is not None]
        failed = ns - len(cell)
        if cell:
            m = np.asarray(cell, dtype=float)
            with np.errstate(all="ignore"):
                vals = [float(np.nanmean(m[:, j])) if np.any(np.isfinite(m[:, j])) else float("nan") for j in range(3)]
        else:
            vals = [float("nan")] * 3
        rows.append(SelectionRow(pt["gamma"], pt["alpha"], pt["rank"], *vals, n_failed=failed))
    return rows


def pareto_select(
    table: Sequence[SelectionRow], weights: TradeoffWeights = TradeoffWeights()
) -> SelectionRow:
    """Minimise ``w_error * mse / eta_error + w_corr * |corr| / eta_corr``.

    Rescalers default to the column maxima over the valid rows. Every row's
    ``score`` is filled in. Among tied rows the non-dominated ones are kept,
    then the larger gamma wins.
    """
    valid = [r for r in table if r.ok]
    if not valid:
        raise ValueError("every grid cell failed")
    eta_e = weights.eta_error or max(r.val_mse for r in valid) or 1.0
    eta_c = weights.eta_corr or max(r.val_abscorr for r in valid) or 1.0
    for r in table:
        r.score = (
            weights.w_error * r.val_mse / eta_e + weights.w_corr * r.val_abscorr / eta_c
            if r.ok
            else float("nan")
        )
    best = min(r.score for r in valid)
    tied = [r for r in valid if r.score == best]
    # a zero weight can tie a row with one that beats it on the ignored objective
    tied = [r for r, keep in zip(tied, pareto_front(tied)) if keep]
    return max(tied, key=lambda r: r.gamma)


def pareto_front(table: Sequence[SelectionRow]) -> list[bool]:
    """Non-dominated flags in (val_mse, val_abscorr), both minimised."""
    pts = [(r.val_mse, r.val_abscorr) if r.ok else None for r in table]
    flags = []
    for i, p in enumerate(pts):
        if p is None:
            flags.append(False)
            continue
        dominated = any(
            q is not None and q[0] <= p[0] and q[1] <= p[1] and q != p for j, q in enumerate(pts) if j != i
        )
        flags.append(not dominated)
    return flags
