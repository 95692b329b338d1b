"""Evaluation metrics: MSE, multioutput R^2 and anchor/residual correlation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _as_2d(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v.reshape(-1, 1) if v.ndim == 1 else v


def _check_shapes(y: np.ndarray, y_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y, y_hat = _as_2d(y), _as_2d(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: y {y.shape} vs y_hat {y_hat.shape}")
    return y, y_hat


def mse(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Mean squared error over all n*p entries."""
    y, y_hat = _check_shapes(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def r2_per_output(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Per-column coefficient of determination; NaN for constant columns."""
    y, y_hat = _check_shapes(y, y_hat)
    ss_res = np.sum((y - y_hat) ** 2, axis=0)
    ss_tot = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    out = np.full(y.shape[1], np.nan)
    ok = ss_tot > 0
    out[ok] = 1.0 - ss_res[ok] / ss_tot[ok]
    return out


def r2(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Uniform average of per-output R^2, constant target columns excluded."""
    scores = r2_per_output(y, y_hat)
    if np.all(np.isnan(scores)):
        raise ValueError("all target columns are constant; R^2 undefined")
    return float(np.nanmean(scores))


def _corr_matrix(r: np.ndarray, a: np.ndarray) -> np.ndarray:
    # constant columns produce 0 correlations
    rc = r - r.mean(axis=0)
    ac = a - a.mean(axis=0)
    rn = np.sqrt(np.sum(rc**2, axis=0))
    an = np.sqrt(np.sum(ac**2, axis=0))
    num = rc.T @ ac
    denom = np.outer(rn, an)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(c, -1.0, 1.0)


def anchor_residual_corr(
    y: np.ndarray, y_hat: np.ndarray, a: np.ndarray, signed: bool = False
) -> float:
    """Mean |Pearson correlation| between residual columns and anchor columns.

    Every (residual column, anchor column) pair contributes one term; pairs
    with a constant column contribute 0. With ``signed=True`` the signed
    correlations are averaged instead.
    """
    y, y_hat = _check_shapes(y, y_hat)
    a = _as_2d(a)
    if a.shape[0] != y.shape[0]:
        raise ValueError("anchor rows do not match targets")
    c = _corr_matrix(y - y_hat, a)
    return float(np.mean(c if signed else np.abs(c)))


@dataclass(frozen=True)
class EvalReport:
    mse: float
    r2: float
    mean_abs_corr: float = float("nan")
    excluded_outputs: tuple[int, ...] = field(default_factory=tuple)


def evaluate(y: np.ndarray, y_hat: np.ndarray, a: np.ndarray | None = None) -> EvalReport:
    per = r2_per_output(y, y_hat)
    excluded = tuple(int(i) for i in np.flatnonzero(np.isnan(per)))
    r2_val = float(np.nanmean(per)) if len(excluded) < per.size else float("nan")
    corr = anchor_residual_corr(y, y_hat, a) if a is not None else float("nan")
    return EvalReport(mse(y, y_hat), r2_val, corr, excluded)
