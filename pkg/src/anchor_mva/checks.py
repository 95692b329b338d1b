"""Numerical self-checks behind ``anchor-mva verify``.

Each check returns a :class:`CheckResult` with the measured deviation and the
threshold it is held to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .anchor import fit_projection, parse_gamma, verify_transform_identity
from .data import DataBlock
from .estimators import EstimatorSpec, fit_anchor, fit_mlr, fit_opls, fit_pls, fit_ridge, fit_rrr, fit_rrrr
from .metrics import anchor_residual_corr
from .scm import ScmSpec, make_lowrank_coefficients, sample


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.value < self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.value:.3e} < {self.threshold:.1e}{extra}"


def transform_identity_sweep(instances: int = 200, seed: int = 0) -> CheckResult:
    """Worst relative deviation of the moment identity over random instances."""
    rng = np.random.default_rng(seed)
    gammas = (0.0, 0.5, 1.0, 2.0, 5.0, 100.0)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.choice((10, 100)))
        d, p = (int(v) for v in rng.choice((1, 5, 20), size=2))
        q = int(rng.choice((1, 3)))
        g = float(rng.choice(gammas))
        x, y, a = rng.normal(size=(n, d)), rng.normal(size=(n, p)), rng.normal(size=(n, q))
        worst = max(worst, verify_transform_identity(x, y, a, g))
    return CheckResult("transform identity", worst, 1e-10, f"{instances} instances")


def _two_stage(x, y, a):
    """Textbook 2SLS: regress x on a, then y on the fitted x."""
    x_hat = a @ np.linalg.solve(a.T @ a, a.T @ x)
    return np.linalg.solve(x_hat.T @ x, x_hat.T @ y)


def limit_estimators(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    n = 500
    a = rng.normal(size=(n, 1))
    h = rng.normal(size=(n, 1))
    x = a + h + rng.normal(size=(n, 1))
    y = 1.5 * x + h + rng.normal(size=(n, 1))
    block = DataBlock(x=x, y=y, a=a)
    xc, yc, ac = (m - m.mean(axis=0) for m in (x, y, a))

    iv = fit_anchor(EstimatorSpec("MLR"), block, "iv")
    iv_dev = float(np.max(np.abs(iv.w - _two_stage(xc, yc, ac))))

    pa = fit_anchor(EstimatorSpec("MLR"), block, 0.0)
    t = fit_projection(ac)
    w_pa = np.linalg.lstsq(t.residual(xc), t.residual(yc), rcond=None)[0]
    pa_dev = float(np.max(np.abs(pa.w - w_pa)))
    # residuals of the PA fit live in the partialled-out space
    corr = anchor_residual_corr(t.residual(yc), t.residual(xc) @ pa.w, ac)
    return [
        CheckResult("IV limit vs 2SLS", iv_dev, 1e-8),
        CheckResult("PA limit vs partialled-out OLS", pa_dev, 1e-8),
        CheckResult("PA residual/anchor correlation", corr, 1e-8),
    ]


def degeneracies(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    n, d, p = 60, 5, 4
    x = rng.normal(size=(n, d))
    y = x @ rng.normal(size=(d, p)) + 0.5 * rng.normal(size=(n, p))
    x, y = x - x.mean(axis=0), y - y.mean(axis=0)
    r = min(d, p)
    mlr = fit_mlr(x, y).w
    loss = lambda w: float(np.sum((y - x @ w) ** 2))  # noqa: E731
    out = [
        CheckResult("RRR(full rank) = MLR", float(np.max(np.abs(fit_rrr(x, y, r).w - mlr))), 1e-8),
        CheckResult("RRRR(alpha=0) = RRR", float(np.max(np.abs(fit_rrrr(x, y, 2, 0.0).w - fit_rrr(x, y, 2).w))), 1e-8),
        CheckResult("RRRR(full rank) = Ridge",
                    float(np.max(np.abs(fit_rrrr(x, y, r, 3.0).w - fit_ridge(x, y, 3.0).w))), 1e-8),
        CheckResult("OPLS(full rank) loss = MLR loss", abs(loss(fit_opls(x, y, r).w) - loss(mlr)) / loss(mlr), 1e-8),
        CheckResult("Ridge(alpha=0) = MLR", float(np.max(np.abs(fit_ridge(x, y, 0.0).w - mlr))), 1e-8),
    ]
    pls = fit_pls(x, y, 1)
    u, s, vt = np.linalg.svd(x.T @ y / (n - 1))
    u1, v1 = u[:, 0], vt[0]
    sign = np.sign(u1[np.argmax(np.abs(u1))])
    dev = max(np.max(np.abs(pls.wx[:, 0] - sign * u1)), np.max(np.abs(pls.wy[:, 0] - sign * v1)))
    out.append(CheckResult("PLS first component = top singular pair", float(dev), 1e-8))
    return out


@dataclass(frozen=True)
class RiskComparison:
    gamma: float
    test_risk: float
    bound: float
    se: float

    @property
    def z(self) -> float:
        return abs(self.test_risk - self.bound) / self.se


def worst_case_risk_mc(
    gammas=(1.0, 2.0, 5.0), n: int = 200_000, d: int = 3, p: int = 3, seed: int = 0
) -> list[RiskComparison]:
    """Monte Carlo check that the squared loss of a fixed coefficient matrix
    under an anchor intervention with variance gamma equals the training
    quantity f(S_XY) + (gamma - 1) f(S_XY|A).

    The standard error combines the per-sample spread of the test loss and a
    delta-method influence term for the training estimate.
    """
    rng = np.random.default_rng(seed)
    spec = ScmSpec(make_lowrank_coefficients(d, p, 1, seed=seed), topology="iv")
    w = rng.normal(size=(d, p))
    train = sample(spec, n, 1.0, seed=[seed, 1])
    r = train.y - train.x @ w
    a = train.a[:, 0]
    sq = np.sum(r * r, axis=1)
    s_a = float(a @ a) / (n - 1)
    c = (a @ r) / (n - 1)  # per output cross moment with the anchor
    out = []
    for i, g in enumerate(gammas):
        g = parse_gamma(g)
        test = sample(spec, n, g, seed=[seed, 2 + i])
        rt = test.y - test.x @ w
        lt = np.sum(rt * rt, axis=1)
        lhs = float(lt.mean())
        rhs = float(sq.sum() / (n - 1) + (g - 1.0) * np.sum(c * c) / s_a)
        infl = sq + (g - 1.0) * (2 * (a[:, None] * r) @ c / s_a - np.sum(c * c) * a * a / s_a**2)
        se = math.sqrt(lt.var(ddof=1) / n + infl.var(ddof=1) / n)
        out.append(RiskComparison(g, lhs, rhs, se))
    return out


def run_all(seed: int = 0, monte_carlo: bool = True) -> list[CheckResult]:
    results = [transform_identity_sweep(seed=seed), *limit_estimators(seed), *degeneracies(seed)]
    if monte_carlo:
        for cmp in worst_case_risk_mc(seed=seed):
            results.append(CheckResult(
                f"worst-case risk identity gamma={cmp.gamma:g} (z-score)", cmp.z, 3.0,
                f"test {cmp.test_risk:.4f} vs bound {cmp.bound:.4f}",
            ))
    return results
