"""Linear IRM and conditional-variance-penalty baselines, fitted by
full-batch gradient descent with validation early stopping.

Both objectives are quadratic or quartic polynomials of the parameters that
only involve per-group Gram matrices, so every epoch costs O(groups * d^2 p)
independently of n. Gradients are analytic; :func:`gradient_check` compares
them with central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class GdConfig:
    learning_rate: float = 0.1
    max_epochs: int = 50_000
    patience: int = 200
    tolerance: float = 1e-4
    penalty: float = 0.0
    max_halvings: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_epochs < 1 or self.patience < 1 or self.tolerance <= 0:
            raise ValueError("learning_rate, max_epochs, patience and tolerance must be positive")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")


@dataclass(frozen=True)
class _Moments:
    """Sufficient statistics of one row group."""

    n: int
    xx: np.ndarray  # X^T X
    xy: np.ndarray  # X^T Y
    yy: float  # ||Y||_F^2
    xx_c: np.ndarray  # X^T (I - 11^T/n) X

    @classmethod
    def of(cls, x: np.ndarray, y: np.ndarray) -> "_Moments":
        xc = x - x.mean(axis=0)
        return cls(x.shape[0], x.T @ x, x.T @ y, float(np.sum(y * y)), xc.T @ xc)

    def sse(self, b: np.ndarray) -> float:
        """||X b - Y||_F^2 for a (d, p) coefficient matrix."""
        return float(np.sum(b * (self.xx @ b)) - 2 * np.sum(b * self.xy) + self.yy)


def _groups(labels: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(labels == g) for g in sorted(set(labels.tolist()))]


def _default_val_split(n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(0.2 * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


# -- IRM ---------------------------------------------------------------------


def irm_objective(phi, w, env_moments: Sequence[_Moments], p: int, lam: float):
    """Sum of per-environment MSE plus ``lam`` times the squared gradient of
    each environment's MSE with respect to the head ``w``.

    Returns (value, grad_phi, grad_w).
    """
    value = 0.0
    g_phi = np.zeros_like(phi)
    g_w = np.zeros_like(w)
    b = phi @ w
    for m in env_moments:
        c = 2.0 / (m.n * p)
        loss = m.sse(b) / (m.n * p)
        resid = m.xx @ b - m.xy  # X^T (X phi w - Y)
        g_head = c * phi.T @ resid  # d loss / d w
        value += loss
        g_w += g_head
        g_phi += c * resid @ w.T
        if lam:
            value += lam * float(np.sum(g_head * g_head))
            s_phi = m.xx @ phi
            g_w += lam * 2 * c * (phi.T @ s_phi) @ g_head
            g_phi += lam * 2 * c * (resid @ g_head.T + s_phi @ g_head @ w.T)
    return value, g_phi, g_w


@dataclass(frozen=True)
class IrmModel:
    phi: np.ndarray
    w: np.ndarray
    converged: bool
    epochs_run: int
    best_val_mse: float
    lr_halvings: int = 0
    val_history: tuple[float, ...] = ()

    @property
    def coef(self) -> np.ndarray:
        return self.phi @ self.w

    def predict(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.coef


@dataclass(frozen=True)
class CvpModel:
    w: np.ndarray
    converged: bool
    epochs_run: int
    best_val_mse: float
    lr_halvings: int = 0
    val_history: tuple[float, ...] = ()

    @property
    def coef(self) -> np.ndarray:
        return self.w

    def predict(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.w


def _descend(objective, params, val_mse, cfg: GdConfig):
    """Gradient descent with lr halving on increase and patience stopping.

    A step whose objective increases is retried with half the learning rate,
    at most ``cfg.max_halvings`` times in a row; the reduced rate is kept.

    Any validation improvement updates the stored best parameters; only an
    improvement larger than ``cfg.tolerance`` resets the patience counter.
    """
    lr = cfg.learning_rate
    value, *grads = objective(*params)
    if not math.isfinite(value):
        raise FloatingPointError("objective is not finite at the initial point")
    best_val = val_mse(*params)
    best = params
    anchor_val = best_val
    stale = 0
    halvings = 0
    history = [best_val]
    converged = False
    diverged = False
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        exhausted = False
        tries = 0
        while True:
            cand = tuple(p - lr * g for p, g in zip(params, grads))
            cand_value, *cand_grads = objective(*cand)
            if math.isfinite(cand_value) and cand_value <= value:
                break
            diverged = diverged or not math.isfinite(cand_value)
            if tries >= cfg.max_halvings:
                exhausted = True
                break
            lr /= 2
            tries += 1
            halvings += 1
        if exhausted:
            # no finite descent left: blown up, or already at a float-precision minimum
            converged = not diverged
            break
        params, value, grads = cand, cand_value, cand_grads
        v = val_mse(*params)
        history.append(v)
        if v < best_val:
            best_val, best = v, params
        if v < anchor_val - cfg.tolerance:
            anchor_val = v
            stale = 0
        else:
            stale += 1
        if stale >= cfg.patience:
            converged = True
            break
    return best, best_val, converged, epoch, halvings, tuple(history)


def _prep(x, y, env, val):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    y = y.reshape(-1, 1) if y.ndim == 1 else y
    x = x.reshape(-1, 1) if x.ndim == 1 else x
    env = np.asarray(env).astype(str)
    if env.shape[0] != x.shape[0] or y.shape[0] != x.shape[0]:
        raise ValueError("x, y and environment labels must have the same number of rows")
    return x, y, env


def _val_moments(x, y, env, validation, seed):
    """Training rows/labels and validation moments."""
    if validation is None:
        tr, va = _default_val_split(x.shape[0], seed)
        return x[tr], y[tr], env[tr], _Moments.of(x[va], y[va])
    xv, yv = (np.asarray(m, dtype=float) for m in validation)
    yv = yv.reshape(-1, 1) if yv.ndim == 1 else yv
    return x, y, env, _Moments.of(xv, yv)


def fit_irm(x, y, env, cfg: GdConfig = GdConfig(), validation=None) -> IrmModel:
    """Linear IRM with representation ``phi`` (d, d, identity start) and head
    ``w`` (d, p, zero start).

    ``validation`` is an optional ``(x_val, y_val)`` pair used for early
    stopping; without it a seeded 80/20 row split of the inputs is used.
    """
    x, y, env = _prep(x, y, env, validation)
    x, y, env, vm = _val_moments(x, y, env, validation, cfg.seed)
    d, p = x.shape[1], y.shape[1]
    moms = [_Moments.of(x[g], y[g]) for g in _groups(env)]
    lam = cfg.penalty
    obj = lambda phi, w: irm_objective(phi, w, moms, p, lam)  # noqa: E731
    val = lambda phi, w: vm.sse(phi @ w) / (vm.n * p)  # noqa: E731
    best, best_val, conv, epochs, halvings, hist = _descend(obj, (np.eye(d), np.zeros((d, p))), val, cfg)
    return IrmModel(best[0], best[1], conv, epochs, best_val, halvings, hist)


def cvp_groups(y: np.ndarray, env: np.ndarray, bins: int | None) -> np.ndarray:
    """Environment labels, optionally crossed with outcome quantile bins.

    Multi-output targets are binned on their row mean.
    """
    if bins is None:
        return env
    if bins < 2:
        raise ValueError("bins must be >= 2")
    score = y.mean(axis=1)
    edges = np.quantile(score, np.linspace(0, 1, bins + 1)[1:-1])
    idx = np.searchsorted(edges, score, side="right")
    return np.array([f"{e}|{b}" for e, b in zip(env, idx)])


def cvp_objective(w, pooled: _Moments, group_moments: Sequence[_Moments], p: int, lam: float):
    """Pooled MSE plus ``lam`` times the summed per-group prediction variance
    (denominator n_g - 1; singleton groups contribute 0). Returns (value, grad).
    """
    value = pooled.sse(w) / (pooled.n * p)
    grad = 2.0 * (pooled.xx @ w - pooled.xy) / (pooled.n * p)
    if lam:
        for m in group_moments:
            if m.n < 2:
                continue
            sw = m.xx_c @ w
            value += lam * float(np.sum(w * sw)) / (m.n - 1)
            grad = grad + lam * 2.0 * sw / (m.n - 1)
    return value, grad


def fit_cvp(x, y, env, cfg: GdConfig = GdConfig(), bins: int | None = None, validation=None) -> CvpModel:
    x, y, env = _prep(x, y, env, validation)
    x, y, env, vm = _val_moments(x, y, env, validation, cfg.seed)
    d, p = x.shape[1], y.shape[1]
    labels = cvp_groups(y, env, bins)
    pooled = _Moments.of(x, y)
    moms = [_Moments.of(x[g], y[g]) for g in _groups(labels)]
    obj = lambda w: cvp_objective(w, pooled, moms, p, cfg.penalty)  # noqa: E731
    val = lambda w: vm.sse(w) / (vm.n * p)  # noqa: E731
    best, best_val, conv, epochs, halvings, hist = _descend(obj, (np.zeros((d, p)),), val, cfg)
    return CvpModel(best[0], conv, epochs, best_val, halvings, hist)


def gradient_check(kind: str, x, y, env, lam: float, theta, h: float = 1e-6, bins=None) -> float:
    """Max relative deviation between analytic and central-difference gradients.

    ``theta`` is ``(phi, w)`` for ``kind="irm"`` and ``w`` for ``kind="cvp"``.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-7, 1e-4]")
    x, y, env = _prep(x, y, env, None)
    p = y.shape[1]
    if kind == "irm":
        moms = [_Moments.of(x[g], y[g]) for g in _groups(env)]
        params = [np.asarray(t, dtype=float) for t in theta]
        f = lambda ps: irm_objective(ps[0], ps[1], moms, p, lam)  # noqa: E731
    elif kind == "cvp":
        labels = cvp_groups(y, env, bins)
        pooled = _Moments.of(x, y)
        moms = [_Moments.of(x[g], y[g]) for g in _groups(labels)]
        params = [np.asarray(theta, dtype=float)]
        f = lambda ps: cvp_objective(ps[0], pooled, moms, p, lam)  # noqa: E731
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    _, *analytic = f(params)
    worst = 0.0
    scale = max(max(float(np.max(np.abs(g))) for g in analytic), 1e-12)
    for k, prm in enumerate(params):
        for idx in np.ndindex(prm.shape):
            up = [q.copy() for q in params]
            dn = [q.copy() for q in params]
            up[k][idx] += h
            dn[k][idx] -= h
            fd = (f(up)[0] - f(dn)[0]) / (2 * h)
            worst = max(worst, abs(fd - analytic[k][idx]))
    return worst / scale
