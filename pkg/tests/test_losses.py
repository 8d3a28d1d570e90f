import math

import numpy as np
import pytest

from falign.linalg import Rng
from falign.losses import LabelError, cross_entropy, exp_margin


def test_exp_margin_spot_values():
    ev = exp_margin(np.array([[0.0]]), np.array([1]))
    assert ev.value == 1.0 and ev.grad[0, 0] == -1.0 and not ev.saturated
    ev = exp_margin(np.array([[math.log(2.0)]]), np.array([1]))
    assert ev.value == pytest.approx(0.5)
    ev = exp_margin(np.array([[6.0]]), np.array([1]))
    assert ev.value == pytest.approx(math.exp(-6.0))
    assert ev.grad[0, 0] == pytest.approx(-math.exp(-6.0))


def test_exp_margin_batch_mean_and_scaling():
    out = np.array([[1.0], [-2.0]])
    y = np.array([1, -1])
    ev = exp_margin(out, y)
    assert ev.value == pytest.approx((math.exp(-1.0) + math.exp(-2.0)) / 2)
    assert ev.grad[0, 0] == pytest.approx(-math.exp(-1.0) / 2)
    assert ev.grad[1, 0] == pytest.approx(math.exp(-2.0) / 2)


def test_exp_margin_positive_and_monotone():
    margins = np.linspace(-3, 3, 13)
    values = [exp_margin(np.array([[m]]), np.array([1])).value for m in margins]
    assert all(v > 0 for v in values)
    assert all(a > b for a, b in zip(values, values[1:]))


def test_exp_margin_saturation_clamp():
    ev = exp_margin(np.array([[-800.0]]), np.array([1]))
    assert ev.saturated
    assert ev.value == pytest.approx(math.exp(700.0))
    assert math.isfinite(ev.value) and math.isfinite(ev.grad[0, 0])
    # a merely large margin does not trip the flag
    assert not exp_margin(np.array([[600.0]]), np.array([-1])).saturated


def test_exp_margin_label_validation():
    with pytest.raises(LabelError):
        exp_margin(np.array([[0.0]]), np.array([2]))
    with pytest.raises(LabelError):
        exp_margin(np.array([[0.0], [0.0]]), np.array([1]))
    with pytest.raises(ValueError):
        exp_margin(np.zeros((2, 2)), np.array([1, -1]))


def test_exp_margin_gradient_matches_finite_differences():
    rng = Rng(51)
    f = rng.uniform(6, 1, -2.0, 2.0)
    y = np.where(np.asarray(rng.integers(0, 2, size=6)) == 0, -1, 1)
    ev = exp_margin(f, y)
    h = 1e-6
    for i in range(6):
        fp = f.copy(); fp[i, 0] += h
        fm = f.copy(); fm[i, 0] -= h
        fd = (exp_margin(fp, y).value - exp_margin(fm, y).value) / (2 * h)
        assert abs(fd - ev.grad[i, 0]) / max(abs(fd), 1e-12) < 1e-6


def test_cross_entropy_uniform_logits():
    for k in (2, 5, 10):
        ev = cross_entropy(np.zeros((3, k)), np.array([0, 1, k - 1]))
        assert ev.value == pytest.approx(math.log(k))


def test_cross_entropy_gradient_rows_sum_to_zero():
    rng = Rng(52)
    logits = rng.uniform(8, 4, -3.0, 3.0)
    labels = np.asarray(rng.integers(0, 4, size=8))
    ev = cross_entropy(logits, labels)
    assert np.abs(ev.grad.sum(axis=1)).max() < 1e-12


def test_cross_entropy_gradient_matches_finite_differences():
    rng = Rng(53)
    logits = rng.uniform(5, 4, -2.0, 2.0)
    labels = np.asarray(rng.integers(0, 4, size=5))
    ev = cross_entropy(logits, labels)
    h = 1e-6
    for i in range(5):
        for j in range(4):
            lp = logits.copy(); lp[i, j] += h
            lm = logits.copy(); lm[i, j] -= h
            fd = (cross_entropy(lp, labels).value - cross_entropy(lm, labels).value) / (2 * h)
            assert abs(fd - ev.grad[i, j]) / max(abs(fd), 1e-9) < 1e-6


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(LabelError) as exc:
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
    assert "3" in str(exc.value)
    with pytest.raises(LabelError):
        cross_entropy(np.zeros((2, 3)), np.array([0, -1]))


def test_cross_entropy_is_stable_for_large_logits():
    ev = cross_entropy(np.array([[1000.0, 0.0], [0.0, 1000.0]]), np.array([0, 1]))
    assert ev.value == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(ev.grad))
