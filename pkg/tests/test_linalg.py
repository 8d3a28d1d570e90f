import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from falign.linalg import (Rng, ShapeError, as_matrix, frobenius_inner, frobenius_norm,
                           hadamard, matmul, rng_uniform, sign_of)

finite_entries = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def small_matrix(rows, cols):
    return arrays(np.float64, (rows, cols), elements=finite_entries)


def test_matmul_identity():
    m = np.array([[1.5, -2.0], [0.25, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_matmul_hand():
    out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
    assert out.shape == (1, 1)
    assert out[0, 0] == 11.0


def test_matmul_against_triple_loop():
    rng = Rng(101)
    a = rng.uniform(5, 7, -2.0, 2.0)
    b = rng.uniform(7, 3, -2.0, 2.0)
    expected = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                expected[i, j] += a[i, k] * b[k, j]
    assert np.abs(matmul(a, b) - expected).max() < 1e-12


def test_matmul_dimension_mismatch_names_shapes():
    with pytest.raises(ShapeError) as exc:
        matmul(np.ones((2, 3)), np.ones((4, 2)))
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


def test_matmul_associativity():
    rng = Rng(102)
    for _ in range(10):
        a = rng.uniform(4, 5, -1.0, 1.0)
        b = rng.uniform(5, 6, -1.0, 1.0)
        c = rng.uniform(6, 3, -1.0, 1.0)
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        scale = max(np.abs(left).max(), 1.0)
        assert np.abs(left - right).max() / scale < 1e-9


def test_hadamard_ones_zeros_hand():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(hadamard(m, np.ones_like(m)), m)
    assert np.array_equal(hadamard(m, np.zeros_like(m)), np.zeros_like(m))
    out = hadamard(m, np.array([[2.0, 0.0], [1.0, -1.0]]))
    assert np.array_equal(out, np.array([[2.0, 0.0], [3.0, -4.0]]))
    with pytest.raises(ShapeError):
        hadamard(m, np.ones((3, 2)))


def test_frobenius_inner_hand_and_positivity():
    ones = np.ones((2, 2))
    assert frobenius_inner(ones, ones) == 4.0
    m = np.array([[0.3, -1.2], [2.0, 0.0]])
    assert frobenius_inner(m, m) > 0.0
    z = np.zeros((3, 3))
    assert frobenius_inner(z, z) == 0.0
    assert frobenius_norm(m) == pytest.approx(np.sqrt(frobenius_inner(m, m)))


def test_frobenius_inner_matches_flatten_oracle():
    rng = Rng(103)
    a = rng.uniform(10, 10, -3.0, 3.0)
    b = rng.uniform(10, 10, -3.0, 3.0)
    oracle = float(sum(a.ravel()[i] * b.ravel()[i] for i in range(100)))
    assert abs(frobenius_inner(a, b) - oracle) < 1e-12


@settings(max_examples=50)
@given(small_matrix(3, 4), small_matrix(3, 4))
def test_frobenius_inner_symmetric_exactly(a, b):
    assert frobenius_inner(a, b) == frobenius_inner(b, a)


def test_sign_convention_zero_is_negative():
    out = sign_of(np.array([[3.0, 0.0], [-2.0, 1.0]]))
    assert np.array_equal(out, np.array([[1.0, -1.0], [-1.0, 1.0]]))


@settings(max_examples=50)
@given(small_matrix(3, 3))
def test_sign_entries_and_idempotence(m):
    s = sign_of(m)
    assert set(np.unique(s)).issubset({-1.0, 1.0})
    assert np.array_equal(sign_of(s), s)


def test_sign_all_positive():
    assert np.array_equal(sign_of(np.full((2, 3), 0.5)), np.ones((2, 3)))


def test_rng_determinism_and_bounds():
    a = rng_uniform(Rng(7), 20, 20, -0.25, 0.75)
    b = rng_uniform(Rng(7), 20, 20, -0.25, 0.75)
    assert np.array_equal(a, b)
    assert a.min() >= -0.25 and a.max() < 0.75


def test_rng_uniform_mean_law_of_large_numbers():
    samples = rng_uniform(Rng(8), 1000, 100, -1.0, 3.0)
    assert abs(samples.mean() - 1.0) < 0.01


def test_rng_uniform_rejects_bad_bounds():
    with pytest.raises(ValueError):
        rng_uniform(Rng(0), 2, 2, 1.0, 1.0)


def test_as_matrix_promotes_rows_and_rejects_3d():
    assert as_matrix([1.0, 2.0]).shape == (1, 2)
    with pytest.raises(ValueError):
        as_matrix(np.zeros((2, 2, 2)))


def test_rng_choice_without_replacement():
    rng = Rng(9)
    picked = rng.choice_without_replacement(10, 10)
    assert sorted(picked.tolist()) == list(range(10))
    with pytest.raises(ValueError):
        Rng(9).choice_without_replacement(3, 4)
