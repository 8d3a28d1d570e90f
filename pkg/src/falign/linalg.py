"""Dense float64 matrices and seeded, reproducible randomness.

Every matrix in this package is a 2-D C-contiguous ``numpy.ndarray`` of
float64. The helpers here add the shape checking and the fixed conventions
(entrywise sign with sign(0) = -1, left-to-right summation for inner
products) that the rest of the package relies on.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "Rng",
    "as_matrix",
    "matmul",
    "hadamard",
    "frobenius_inner",
    "frobenius_norm",
    "sign_of",
    "rng_uniform",
    "assert_finite",
]


class ShapeError(ValueError):
    """Raised when an operation receives matrices of incompatible shapes."""

    def __init__(self, op: str, a_shape, b_shape):
        self.op = op
        self.a_shape = tuple(a_shape)
        self.b_shape = tuple(b_shape)
        super().__init__(f"{op}: incompatible shapes {self.a_shape} and {self.b_shape}")


def as_matrix(values) -> np.ndarray:
    """Coerce ``values`` to a 2-D float64 matrix; a 1-D sequence becomes one row."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return np.ascontiguousarray(m)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with an explicit inner-dimension check."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two same-shape matrices."""
    if a.shape != b.shape:
        raise ShapeError("hadamard", a.shape, b.shape)
    return a * b


def frobenius_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of entrywise products.

    Both arguments are flattened in row-major order and reduced in the same
    order, so frobenius_inner(a, b) == frobenius_inner(b, a) exactly.
    """
    if a.shape != b.shape:
        raise ShapeError("frobenius_inner", a.shape, b.shape)
    return float(np.dot(a.ravel(), b.ravel()))


def frobenius_norm(a: np.ndarray) -> float:
    return math.sqrt(frobenius_inner(a, a))


def sign_of(a: np.ndarray) -> np.ndarray:
    """Entrywise sign with the convention +1 for positive, -1 otherwise.

    Zero maps to -1 so the result never contains zero entries.
    """
    return np.where(a > 0.0, 1.0, -1.0)


def assert_finite(a: np.ndarray, what: str = "matrix") -> None:
    """Raise ValueError if the array contains NaN or Inf."""
    if not np.isfinite(a).all():
        raise ValueError(f"{what} contains non-finite entries")


class Rng:
    """Deterministic random source: the same seed yields the same stream
    on every platform (PCG64 under the hood)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, rows: int, cols: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform bounds require lo < hi, got [{lo}, {hi})")
        return self._gen.uniform(lo, hi, size=(rows, cols))

    def normal(self, rows: int, cols: int) -> np.ndarray:
        return self._gen.standard_normal((rows, cols))

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k indices sampled without replacement from range(n)."""
        if k > n:
            raise ValueError(f"cannot draw {k} from {n} without replacement")
        return self._gen.choice(n, size=k, replace=False)

    def spawn(self, key: int) -> "Rng":
        """Independent child stream, deterministic in (seed, key)."""
        return Rng(self.seed * 1_000_003 + key)


def rng_uniform(rng: Rng, rows: int, cols: int, lo: float, hi: float) -> np.ndarray:
    """Matrix of i.i.d. uniform samples on [lo, hi), deterministic given the seed."""
    return rng.uniform(rows, cols, lo, hi)
