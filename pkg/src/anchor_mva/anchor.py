"""Anchor projection and the gamma data transform.

Fitting an anchor-compatible estimator with regularisation ``gamma`` is the
same as fitting the plain estimator on

    x_tilde = (I + (sqrt(gamma) - 1) P_A) x,   y_tilde likewise,

where ``P_A`` projects onto the column space of the anchors. ``gamma = 0``
partials the anchor out, ``gamma = inf`` keeps only the anchor-explained part
(instrumental-variable limit) and ``gamma = 1`` is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PINV_RTOL = 1e-12

_GAMMA_ALIASES = {"pa": 0.0, "partial_out": 0.0, "iv": math.inf, "inf": math.inf}


def parse_gamma(value) -> float:
    """Accept a nonnegative number or one of ``pa``/``iv``/``inf``."""
    if isinstance(value, str):
        key = value.strip().lower()
        if key in _GAMMA_ALIASES:
            return _GAMMA_ALIASES[key]
        try:
            value = float(key)
        except ValueError:
            raise ValueError(f"invalid gamma {value!r}") from None
    g = float(value)
    if math.isnan(g) or g < 0:
        raise ValueError(f"gamma must be nonnegative, got {value!r}")
    return g


def gamma_label(gamma: float) -> str:
    if gamma == 0:
        return "pa"
    if math.isinf(gamma):
        return "iv"
    return repr(float(gamma))


@dataclass(frozen=True)
class AnchorTransform:
    """Orthogonal projection onto col(A), stored as an orthonormal basis.

    ``basis`` is (n, r) with r the numerical rank of A; the n x n projector is
    never formed.
    """

    basis: np.ndarray

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        self._check_rows(v)
        return self.basis @ (self.basis.T @ v)

    def residual(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return v - self.project(v)

    def _check_rows(self, v: np.ndarray) -> None:
        if v.shape[0] != self.n:
            raise ValueError(f"expected {self.n} rows, got {v.shape[0]}")

    def apply(self, v: np.ndarray, gamma: float) -> np.ndarray:
        """Apply ``I + (sqrt(gamma) - 1) P_A`` (or its limits) to one matrix."""
        gamma = parse_gamma(gamma)
        v = np.asarray(v, dtype=float)
        self._check_rows(v)
        if gamma == 1.0:
            return v
        if math.isinf(gamma):
            return self.project(v)
        return v + (math.sqrt(gamma) - 1.0) * self.project(v)


def fit_projection(a: np.ndarray) -> AnchorTransform:
    """Orthonormal basis of col(a) via thin SVD.

    Singular values below ``1e-12 * s_max`` are discarded, which makes this a
    pseudo-inverse projection when A^T A is singular.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return AnchorTransform(np.zeros((a.shape[0], 0)))
    keep = s > PINV_RTOL * s[0]
    return AnchorTransform(u[:, keep])


def transform(t: AnchorTransform, x: np.ndarray, y: np.ndarray, gamma) -> tuple[np.ndarray, np.ndarray]:
    return t.apply(x, gamma), t.apply(y, gamma)


@dataclass(frozen=True)
class CovariancePair:
    """Second moment of stacked (x, y) and of its anchor projection, both /(n-1)."""

    s_joint: np.ndarray
    s_explained: np.ndarray

    def combined(self, gamma: float) -> np.ndarray:
        """``s_joint + (gamma - 1) s_explained``; the moment matrix the gamma fit sees."""
        return self.s_joint + (gamma - 1.0) * self.s_explained


def covariances(x: np.ndarray, y: np.ndarray, t: AnchorTransform) -> CovariancePair:
    z = np.hstack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)])
    n = z.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows")
    pz = t.basis.T @ z  # P_A symmetric idempotent: z^T P z = (Q^T z)^T (Q^T z)
    return CovariancePair(z.T @ z / (n - 1), pz.T @ pz / (n - 1))


def verify_transform_identity(x, y, a, gamma) -> float:
    """Relative Frobenius deviation between the moment matrix of the transformed
    data and ``S_XY + (gamma - 1) S_XY|A``.
    """
    gamma = parse_gamma(gamma)
    if math.isinf(gamma):
        raise ValueError("identity is stated for finite gamma")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    x, y, a = (m.reshape(-1, 1) if m.ndim == 1 else m for m in (x, y, a))
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    a = a - a.mean(axis=0)
    t = fit_projection(a)
    pair = covariances(x, y, t)
    xt, yt = transform(t, x, y, gamma)
    zt = np.hstack([xt, yt])
    s_tilde = zt.T @ zt / (zt.shape[0] - 1)
    dev = np.linalg.norm(s_tilde - pair.combined(gamma))
    return float(dev / max(1.0, np.linalg.norm(pair.s_joint)))
