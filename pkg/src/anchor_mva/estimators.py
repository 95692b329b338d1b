"""Multivariate linear estimators and their anchor-regularised fits.

All ``fit_*`` functions expect centered ``x`` (n, d) and ``y`` (n, p) and
return a :class:`FittedModel` whose coefficient matrix ``w`` (d, p) predicts
``y_hat = x @ w``. :func:`fit_anchor` wraps them: it centers a
:class:`~anchor_mva.data.DataBlock`, applies the gamma transform to the
training data and fits on the result. The coefficients are then applied to
untransformed inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import scipy.linalg

from . import anchor as _anchor
from .data import DataBlock, StandardizationState, standardize

KINDS = ("MLR", "Ridge", "RRR", "RRRR", "OPLS", "PLS", "CCA")
RANKED = frozenset({"RRR", "RRRR", "OPLS", "PLS", "CCA"})
PENALISED = frozenset({"Ridge", "RRRR"})
GAP_RTOL = 1e-10


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    rank: int | None = None
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EstimatorError(f"unknown estimator {self.kind!r}; valid: {', '.join(KINDS)}")
        if self.kind in RANKED and self.rank is None:
            raise EstimatorError(f"{self.kind} needs a rank")
        if self.alpha < 0:
            raise EstimatorError("alpha must be >= 0")

    @property
    def anchor_compatible(self) -> bool:
        # CCA's normalisers make its loss nonlinear in the second-moment matrix
        return self.kind != "CCA"

    @property
    def label(self) -> str:
        parts = [self.kind]
        if self.kind in RANKED:
            parts.append(f"rank={self.rank}")
        if self.kind in PENALISED:
            parts.append(f"alpha={self.alpha!r}")
        return "(" + ",".join(parts) + ")" if len(parts) > 1 else self.kind


@dataclass(frozen=True)
class FittedModel:
    kind: str
    w: np.ndarray
    rank: int | None = None
    alpha: float = 0.0
    gamma: float = 1.0
    wx: np.ndarray | None = None
    wy: np.ndarray | None = None
    standardization: StandardizationState | None = None
    x_names: tuple[str, ...] = ()
    y_names: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()
    extras: Mapping[str, object] = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.w.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "gamma": _anchor.gamma_label(self.gamma),
            "rank": self.rank,
            "alpha": self.alpha,
            "d": self.d,
            "p": self.p,
            "w": self.w.tolist(),
            "x_names": list(self.x_names),
            "y_names": list(self.y_names),
            "standardization": None if self.standardization is None else self.standardization.to_dict(),
            "flags": list(self.flags),
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "FittedModel":
        w = np.asarray(d["w"], dtype=float)
        if w.shape != (d["d"], d["p"]):
            raise EstimatorError("coefficient matrix does not match declared shape")
        st = d.get("standardization")
        return cls(
            kind=d["kind"],
            w=w,
            rank=d.get("rank"),
            alpha=float(d.get("alpha", 0.0)),
            gamma=_anchor.parse_gamma(d.get("gamma", 1.0)),
            standardization=None if st is None else StandardizationState.from_dict(st),
            x_names=tuple(d.get("x_names", ())),
            y_names=tuple(d.get("y_names", ())),
            flags=tuple(d.get("flags", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))


def _c(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v.reshape(-1, 1) if v.ndim == 1 else v


def _check_rank(rank: int, d: int, p: int) -> int:
    if not isinstance(rank, (int, np.integer)) or not 1 <= rank <= min(d, p):
        raise EstimatorError(f"rank must be an integer in [1, {min(d, p)}], got {rank!r}")
    return int(rank)


def _gap_flag(spectrum: np.ndarray, rank: int) -> tuple[str, ...]:
    if rank < spectrum.size and spectrum[0] > 0:
        if spectrum[rank - 1] - spectrum[rank] < GAP_RTOL * spectrum[0]:
            return ("spectral_tie",)
    return ()


def _lstsq(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(x, y, rcond=None)[0]


def fit_mlr(x, y) -> FittedModel:
    """Minimum-norm least squares ``w = pinv(x) y``."""
    x, y = _c(x), _c(y)
    return FittedModel("MLR", _lstsq(x, y))


def _ridge_coef(x: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    if alpha == 0:
        return _lstsq(x, y)
    n, d = x.shape
    if d > n:
        # dual form: x^T (x x^T + alpha I)^-1 y, same solution, n x n system
        k = x @ x.T
        k[np.diag_indices_from(k)] += alpha
        return x.T @ scipy.linalg.solve(k, y, assume_a="pos")
    g = x.T @ x
    g[np.diag_indices_from(g)] += alpha
    return scipy.linalg.solve(g, x.T @ y, assume_a="pos")


def fit_ridge(x, y, alpha: float) -> FittedModel:
    """``w = (x^T x + alpha I)^-1 x^T y``; alpha = 0 falls back to least squares."""
    if alpha < 0:
        raise EstimatorError("alpha must be >= 0")
    x, y = _c(x), _c(y)
    return FittedModel("Ridge", _ridge_coef(x, y, alpha), alpha=float(alpha))


def _reduce_rank(x: np.ndarray, w_full: np.ndarray, alpha: float, rank: int):
    """Project ``w_full`` on the top right singular vectors of the (ridge
    augmented) fitted values ``[x; sqrt(alpha) I] w_full``.
    """
    fitted = x @ w_full
    if alpha > 0:
        fitted = np.vstack([fitted, math.sqrt(alpha) * w_full])
    _, s, vt = np.linalg.svd(fitted, full_matrices=False)
    v = vt[:rank].T
    return w_full @ v @ v.T, v, _gap_flag(s, rank)


def fit_rrr(x, y, rank: int) -> FittedModel:
    x, y = _c(x), _c(y)
    rank = _check_rank(rank, x.shape[1], y.shape[1])
    w, v, flags = _reduce_rank(x, _lstsq(x, y), 0.0, rank)
    return FittedModel("RRR", w, rank=rank, wy=v, flags=flags)


def fit_rrrr(x, y, rank: int, alpha: float) -> FittedModel:
    """Reduced-rank ridge regression.

    The rank truncation is taken on the fitted values of the augmented
    problem ``[y; 0] ~ [x; sqrt(alpha) I] w``, so that the result is the exact
    rank-constrained minimiser of the ridge objective. With alpha = 0 this is
    plain reduced-rank regression.
    """
    if alpha < 0:
        raise EstimatorError("alpha must be >= 0")
    x, y = _c(x), _c(y)
    rank = _check_rank(rank, x.shape[1], y.shape[1])
    w, v, flags = _reduce_rank(x, _ridge_coef(x, y, alpha), float(alpha), rank)
    return FittedModel("RRRR", w, rank=rank, alpha=float(alpha), wy=v, flags=flags)


def fit_opls(x, y, rank: int) -> FittedModel:
    """Orthonormalised PLS in its eigendecomposition form (U^T U = I)."""
    x, y = _c(x), _c(y)
    rank = _check_rank(rank, x.shape[1], y.shape[1])
    cxy = x.T @ y
    b = np.linalg.pinv(x.T @ x) @ cxy
    m = cxy.T @ b
    m = (m + m.T) / 2
    evals, evecs = np.linalg.eigh(m)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    u = evecs[:, :rank]
    v = b @ u
    return FittedModel(
        "OPLS", v @ u.T, rank=rank, wx=v, wy=u, flags=_gap_flag(np.clip(evals, 0, None), rank),
        extras={"eigenvalues": evals[:rank]},
    )


def _sign_fix(wx: np.ndarray, wy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-magnitude entry of the x weight positive; y weight flipped with it
    s = np.sign(wx[np.argmax(np.abs(wx))])
    s = 1.0 if s == 0 else s
    return wx * s, wy * s


def fit_pls(x, y, ncomp: int) -> FittedModel:
    """PLS2 regression by score deflation.

    Each component takes the leading singular pair of the current cross
    product ``x_k^T y``, deflates ``x`` by regression on the score, and the
    final coefficients regress ``y`` on the orthogonal scores.
    """
    x, y = _c(x), _c(y)
    ncomp = _check_rank(ncomp, x.shape[1], y.shape[1])
    n, d = x.shape
    xk = x.copy()
    ws, cs, ps, qs = [], [], [], []
    first_sv = None
    flags: list[str] = []
    for _ in range(ncomp):
        u, s, vt = np.linalg.svd(xk.T @ y / (n - 1), full_matrices=False)
        if first_sv is None:
            first_sv = s[0]
        if s[0] <= 1e-12 * max(first_sv, np.finfo(float).tiny) or s[0] == 0:
            flags.append("early_stop")
            break
        if s.size > 1 and s[0] - s[1] < GAP_RTOL * first_sv:
            flags.append("spectral_tie")
        wk, ck = _sign_fix(u[:, 0], vt[0])
        t = xk @ wk
        tt = t @ t
        pk = xk.T @ t / tt
        qk = y.T @ t / tt
        xk = xk - np.outer(t, pk)
        ws.append(wk), cs.append(ck), ps.append(pk), qs.append(qk)
    W, C = np.column_stack(ws), np.column_stack(cs)
    P, Q = np.column_stack(ps), np.column_stack(qs)
    rotations = W @ np.linalg.pinv(P.T @ W)
    return FittedModel(
        "PLS", rotations @ Q.T, rank=W.shape[1], wx=W, wy=C,
        flags=tuple(dict.fromkeys(flags)), extras={"rotations": rotations, "requested": ncomp},
    )


def _jitter(c: np.ndarray) -> np.ndarray:
    c = c.copy()
    c[np.diag_indices_from(c)] += 1e-8 * np.trace(c) / c.shape[0]
    return c


def fit_cca(x, y, ncomp: int) -> FittedModel:
    """Canonical correlation analysis via the symmetric generalized eigenproblem

        [[0, Cxy], [Cyx, 0]] v = rho [[Cxx, 0], [0, Cyy]] v

    with a small diagonal jitter on each auto-covariance. Predictions regress
    ``y`` on the canonical x-scores.
    """
    x, y = _c(x), _c(y)
    ncomp = _check_rank(ncomp, x.shape[1], y.shape[1])
    n, d = x.shape
    p = y.shape[1]
    cxx = _jitter(x.T @ x / (n - 1))
    cyy = _jitter(y.T @ y / (n - 1))
    cxy = x.T @ y / (n - 1)
    lhs = np.zeros((d + p, d + p))
    lhs[:d, d:] = cxy
    lhs[d:, :d] = cxy.T
    rhs = scipy.linalg.block_diag(cxx, cyy)
    evals, evecs = scipy.linalg.eigh(lhs, rhs)
    order = np.argsort(evals)[::-1][:ncomp]
    corr = evals[order]
    wx, wy = evecs[:d, order], evecs[d:, order]
    wx = wx / np.sqrt(np.einsum("ij,jk,ki->i", wx.T, cxx, wx))
    wy = wy / np.sqrt(np.einsum("ij,jk,ki->i", wy.T, cyy, wy))
    for k in range(ncomp):
        wx[:, k], wy[:, k] = _sign_fix(wx[:, k], wy[:, k])
    scores = x @ wx
    q = _lstsq(scores, y)
    flags = _gap_flag(np.sort(evals)[::-1], ncomp)
    return FittedModel(
        "CCA", wx @ q, rank=ncomp, wx=wx, wy=wy, flags=flags,
        extras={"correlations": np.clip(corr, 0.0, None)},
    )


def fit(spec: EstimatorSpec, x, y) -> FittedModel:
    """Dispatch on ``spec.kind`` for already centered (and transformed) data."""
    if spec.kind == "MLR":
        return fit_mlr(x, y)
    if spec.kind == "Ridge":
        return fit_ridge(x, y, spec.alpha)
    if spec.kind == "RRR":
        return fit_rrr(x, y, spec.rank)
    if spec.kind == "RRRR":
        return fit_rrrr(x, y, spec.rank, spec.alpha)
    if spec.kind == "OPLS":
        return fit_opls(x, y, spec.rank)
    if spec.kind == "PLS":
        return fit_pls(x, y, spec.rank)
    return fit_cca(x, y, spec.rank)


def fit_anchor(
    spec: EstimatorSpec,
    block: DataBlock,
    gamma=1.0,
    *,
    scale: bool = False,
) -> FittedModel:
    """Center (optionally scale) ``block``, gamma-transform it and fit ``spec``.

    gamma = 1 never touches the anchors, so blocks without anchors are fine.
    """
    gamma = _anchor.parse_gamma(gamma)
    std_block, state = standardize(block, "center_scale" if scale else "center")
    x, y = std_block.x, std_block.y
    if gamma != 1.0:
        if std_block.a is None:
            raise EstimatorError("gamma != 1 requires anchor columns")
        t = _anchor.fit_projection(std_block.a)
        x, y = _anchor.transform(t, x, y, gamma)
    model = fit(spec, x, y)
    flags = model.flags
    if not spec.anchor_compatible and gamma != 1.0:
        flags = flags + ("not_anchor_compatible",)
    return replace(
        model,
        gamma=gamma,
        standardization=state,
        x_names=block.x_names,
        y_names=block.y_names,
        flags=flags,
    )


def predict(model: FittedModel, x_new) -> np.ndarray:
    """Predict in raw coordinates using the training location/scale."""
    x_new = _c(x_new)
    if x_new.shape[1] != model.d:
        raise EstimatorError(f"expected {model.d} predictor columns, got {x_new.shape[1]}")
    st = model.standardization
    if st is None:
        return x_new @ model.w
    return st.invert_y(st.apply_x(x_new) @ model.w)
