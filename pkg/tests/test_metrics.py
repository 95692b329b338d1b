import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchor_mva.metrics import anchor_residual_corr, evaluate, mse, r2, r2_per_output


def test_mse_examples():
    y = np.array([[0.0], [2.0]])
    assert mse(y, y) == 0
    assert mse(y, np.ones((2, 1))) == 1.0
    assert mse(3 * y, 3 * np.ones((2, 1))) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        mse(y, np.ones((3, 1)))


def test_r2_examples():
    y = np.array([0.0, 1.0, 2.0])
    assert r2(y, np.zeros(3)) == pytest.approx(-1.5)
    assert r2(y, y) == 1.0
    y2 = np.array([[0.0, 1.0], [1.0, 5.0], [5.0, 0.0]])
    assert r2(y2, np.tile(y2.mean(axis=0), (3, 1))) == pytest.approx(0.0, abs=1e-15)


def test_r2_constant_columns():
    y = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
    per = r2_per_output(y, y)
    assert np.isnan(per[0]) and per[1] == 1.0
    assert evaluate(y, y).excluded_outputs == (0,)
    with pytest.raises(ValueError):
        r2(np.ones((3, 1)), np.ones((3, 1)))


def test_corr_examples():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(50, 1))
    r = rng.normal(size=(50, 2))
    ac = a - a.mean()
    r -= r.mean(axis=0)
    r -= ac @ np.linalg.lstsq(ac, r, rcond=None)[0]
    assert anchor_residual_corr(r, np.zeros_like(r), a) < 1e-10
    assert anchor_residual_corr(a, np.zeros_like(a), a) == pytest.approx(1.0)
    assert anchor_residual_corr(-a, np.zeros_like(a), a, signed=True) == pytest.approx(-1.0)


def test_corr_constant_pair_is_zero():
    y = np.ones((4, 1))
    assert anchor_residual_corr(y, np.zeros((4, 1)), np.arange(4.0)) == 0.0


def test_evaluate_report():
    y = np.array([[0.0], [1.0], [2.0]])
    rep = evaluate(y, np.zeros_like(y), a=np.array([1.0, 0.0, 2.0]))
    assert rep.mse == pytest.approx(5 / 3) and rep.r2 == pytest.approx(-1.5)
    assert 0 <= rep.mean_abs_corr <= 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_invariances(seed, c):
    rng = np.random.default_rng(seed)
    y, yh, a = rng.normal(size=(12, 2)), rng.normal(size=(12, 2)), rng.normal(size=(12, 3))
    perm = rng.permutation(12)
    assert mse(y[perm], yh[perm]) == pytest.approx(mse(y, yh), rel=1e-12)
    assert r2(y[perm], yh[perm]) == pytest.approx(r2(y, yh), rel=1e-10, abs=1e-12)
    assert anchor_residual_corr(y, yh, c * a) == pytest.approx(anchor_residual_corr(y, yh, a), rel=1e-9)
    v = anchor_residual_corr(y, yh, a)
    assert 0 <= v <= 1 and mse(y, yh) >= 0 and r2(y, yh) <= 1
