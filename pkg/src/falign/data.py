"""Datasets: synthetic separable/near-orthogonal generators, IDX ingestion,
subsetting, and label-noise injection.

Generators never trust their own construction: every generated dataset is
certified by an exhaustive pairwise scan of the defining condition, and the
measured margins (not the requested ones) are stored in the metadata.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import Rng

__all__ = [
    "Dataset",
    "GenerationError",
    "IdxError",
    "BadMagicError",
    "TruncatedFileError",
    "CountMismatchError",
    "gen_orthogonal_separable",
    "gen_nearly_orthogonal",
    "scan_orthogonal_separable",
    "scan_nearly_orthogonal",
    "load_idx",
    "write_idx",
    "inject_label_noise",
    "subset",
    "remap_to_indices",
    "export_csv",
    "save_cache",
    "load_cache",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
CACHE_FORMAT_VERSION = 1


class GenerationError(RuntimeError):
    """Dataset generation failed its definitional scan after bounded retries."""

    def __init__(self, message: str, best: float):
        super().__init__(f"{message} (best margin achieved: {best:.6g})")
        self.best = best


class IdxError(ValueError):
    """Base class for IDX parsing failures."""


class BadMagicError(IdxError):
    def __init__(self, path, expected: int, got: int):
        super().__init__(f"{path}: bad IDX magic, expected 0x{expected:08x}, read 0x{got:08x}")
        self.expected = expected
        self.got = got


class TruncatedFileError(IdxError):
    def __init__(self, path, needed: int, available: int):
        super().__init__(f"{path}: truncated IDX file, needed {needed} bytes, found {available}")


class CountMismatchError(IdxError):
    def __init__(self, n_images: int, n_labels: int):
        super().__init__(f"image/label count mismatch: {n_images} images vs {n_labels} labels")
        self.n_images = n_images
        self.n_labels = n_labels


@dataclass(frozen=True)
class Dataset:
    """Immutable labeled sample set. inputs is n x d, labels is length n.

    Labels are +-1 in binary mode and class indices otherwise. metadata keeps
    provenance plus measured (never merely requested) margins.
    """

    inputs: np.ndarray
    labels: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2 or labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise ValueError(f"inputs {inputs.shape} and labels {labels.shape} do not agree")
        if inputs.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def is_binary(self) -> bool:
        return set(np.unique(self.labels).tolist()) <= {-1, 1}


def scan_orthogonal_separable(inputs: np.ndarray, labels: np.ndarray) -> float:
    """Minimum of <x_i y_i, x_j y_j> over all pairs, the diagonal included."""
    z = labels[:, None].astype(np.float64) * inputs
    gram = z @ z.T
    return float(gram.min())


def scan_nearly_orthogonal(inputs: np.ndarray) -> tuple[float, float]:
    """Measured (gamma, epsilon): gamma is the largest off-diagonal absolute
    inner product, epsilon is min_i ||x_i||^2 / n - gamma."""
    n = inputs.shape[0]
    gram = inputs @ inputs.T
    norms_sq = np.diag(gram).copy()
    off = gram.copy()
    np.fill_diagonal(off, 0.0)
    gamma = float(np.abs(off).max()) if n > 1 else 0.0
    eps = float(norms_sq.min() / n - gamma)
    return gamma, eps


def gen_orthogonal_separable(n: int, d: int, gamma_target: float, rng: Rng,
                             max_tries: int = 20) -> Dataset:
    """Dataset with <x_i y_i, x_j y_j> >= gamma_target for every pair.

    Construction: the label-scaled points y_i x_i sit in a small ball around a
    common direction mu with ||mu||^2 = 2 * gamma_target; the ball radius is
    chosen so the worst-case pairwise bound clears the target with margin.
    The pairwise scan is the acceptance check; the construction is retried on
    the (measure-zero) event the scan fails.
    """
    if d < 2:
        raise ValueError("need d >= 2")
    if gamma_target <= 0:
        raise ValueError("gamma_target must be positive")
    best = -np.inf
    radius = 0.15 * np.sqrt(gamma_target)
    for _ in range(max_tries):
        mu = rng.normal(1, d)
        mu = mu / np.sqrt((mu ** 2).sum()) * np.sqrt(2.0 * gamma_target)
        raw = rng.normal(n, d)
        raw_norms = np.sqrt((raw ** 2).sum(axis=1, keepdims=True))
        lengths = radius * rng.uniform(n, 1, 0.0, 1.0) ** (1.0 / d)
        zeta = raw / np.maximum(raw_norms, 1e-300) * lengths
        z = mu + zeta
        labels = np.where(rng.uniform(n, 1, 0.0, 1.0)[:, 0] < 0.5, -1, 1).astype(np.int64)
        inputs = labels[:, None] * z  # so that y_i x_i = z_i
        measured = scan_orthogonal_separable(inputs, labels)
        best = max(best, measured)
        if measured >= gamma_target:
            meta = {"kind": "orthogonal-separable", "gamma_target": gamma_target,
                    "gamma": measured, "seed": rng.seed}
            return Dataset(inputs=inputs, labels=labels, metadata=meta)
    raise GenerationError(f"orthogonal-separable generation failed after {max_tries} tries", best)


def gen_nearly_orthogonal(n: int, d: int, eps_target: float, rng: Rng,
                          max_tries: int = 50) -> Dataset:
    """Dataset with min_i ||x_i||^2 >= n * (gamma + eps) for measured gamma.

    Rows start as random unit vectors; the common scale r is solved from the
    measured maximal off-diagonal inner product so the defining inequality
    holds with an epsilon margin at least eps_target. When the random rows are
    too correlated for any feasible r (small d), the rows are orthonormalized
    first. Either way the final scan certifies the result.
    """
    if d < 4 * n:
        raise ValueError(f"need d >= 4n for near-orthogonality, got d={d}, n={n}")
    if eps_target <= 0:
        raise ValueError("eps_target must be positive")
    best = -np.inf
    headroom = 1.05
    for attempt in range(max_tries):
        raw = rng.normal(n, d)
        rows = raw / np.sqrt((raw ** 2).sum(axis=1, keepdims=True))
        if attempt >= max_tries // 2:
            # fallback regime: exactly orthonormal rows, gamma ~ rounding noise
            rows = np.linalg.qr(raw.T)[0][:, :n].T
        gamma_unit = 0.0
        if n > 1:
            gram = rows @ rows.T
            np.fill_diagonal(gram, 0.0)
            gamma_unit = float(np.abs(gram).max())
        if n * gamma_unit >= 0.9:
            continue
        r_sq = n * eps_target * headroom / (1.0 - n * gamma_unit)
        inputs = rows * np.sqrt(r_sq)
        gamma, eps = scan_nearly_orthogonal(inputs)
        best = max(best, eps)
        if eps >= eps_target:
            labels = np.where(rng.uniform(n, 1, 0.0, 1.0)[:, 0] < 0.5, -1, 1).astype(np.int64)
            meta = {"kind": "nearly-orthogonal", "eps_target": eps_target,
                    "gamma": gamma, "eps": eps, "seed": rng.seed}
            return Dataset(inputs=inputs, labels=labels, metadata=meta)
    raise GenerationError(f"nearly-orthogonal generation failed after {max_tries} tries", best)


def _read_be32(buf: bytes, offset: int, path) -> int:
    if offset + 4 > len(buf):
        raise TruncatedFileError(path, offset + 4, len(buf))
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse the big-endian IDX image/label pair used by the MNIST distribution.

    Pixels are scaled to [0, 1] and flattened to d = rows * cols.
    """
    img_buf = Path(images_path).read_bytes()
    magic = _read_be32(img_buf, 0, images_path)
    if magic != IMAGE_MAGIC:
        raise BadMagicError(images_path, IMAGE_MAGIC, magic)
    n = _read_be32(img_buf, 4, images_path)
    rows = _read_be32(img_buf, 8, images_path)
    cols = _read_be32(img_buf, 12, images_path)
    need = 16 + n * rows * cols
    if len(img_buf) < need:
        raise TruncatedFileError(images_path, need, len(img_buf))
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n * rows * cols, offset=16)

    lab_buf = Path(labels_path).read_bytes()
    magic = _read_be32(lab_buf, 0, labels_path)
    if magic != LABEL_MAGIC:
        raise BadMagicError(labels_path, LABEL_MAGIC, magic)
    n_lab = _read_be32(lab_buf, 4, labels_path)
    if n_lab != n:
        raise CountMismatchError(n, n_lab)
    if len(lab_buf) < 8 + n_lab:
        raise TruncatedFileError(labels_path, 8 + n_lab, len(lab_buf))
    labels = np.frombuffer(lab_buf, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)

    inputs = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    meta = {"kind": "idx", "images_path": str(images_path), "labels_path": str(labels_path),
            "image_shape": (rows, cols)}
    return Dataset(inputs=inputs, labels=labels, metadata=meta)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n x rows x cols) and labels to IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, n))
        f.write(labels.tobytes())


def inject_label_noise(ds: Dataset, fraction: float, rng: Rng) -> Dataset:
    """Flip exactly floor(fraction * n) labels, each to a different label
    drawn uniformly from the other classes present. Flipped indices are
    recorded in the metadata."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"noise fraction must lie in [0, 1], got {fraction}")
    n_flip = int(np.floor(fraction * ds.n))
    labels = ds.labels.copy()
    flipped: np.ndarray
    if n_flip == 0:
        flipped = np.array([], dtype=np.int64)
    else:
        classes = np.unique(ds.labels)
        if classes.size < 2:
            raise ValueError("cannot inject label noise with fewer than two classes")
        flipped = np.sort(rng.choice_without_replacement(ds.n, n_flip))
        for i in flipped:
            others = classes[classes != labels[i]]
            labels[i] = others[int(rng.integers(0, others.size))]
    meta = dict(ds.metadata)
    meta.update({"noise_fraction": fraction, "n_flipped": int(n_flip),
                 "flipped_indices": flipped.tolist()})
    return Dataset(inputs=ds.inputs, labels=labels, metadata=meta)


def subset(ds: Dataset, n: int, rng: Rng, classes=None, binary: bool = False) -> Dataset:
    """Uniform sample of n points without replacement, deterministic given the
    seed. An optional class filter restricts the pool first; with binary=True
    the (exactly two) classes are remapped to -1/+1, smaller index to -1."""
    pool = np.arange(ds.n)
    if classes is not None:
        wanted = np.asarray(sorted(classes))
        pool = pool[np.isin(ds.labels, wanted)]
    if n > pool.size:
        raise ValueError(f"requested {n} samples but only {pool.size} available")
    pick = pool[rng.choice_without_replacement(pool.size, n)]
    inputs = ds.inputs[pick]
    labels = ds.labels[pick]
    meta = dict(ds.metadata)
    meta.update({"subset_of": ds.n, "subset_seed": rng.seed,
                 "class_filter": None if classes is None else [int(c) for c in np.asarray(sorted(classes))]})
    if binary:
        present = np.unique(labels)
        if present.size != 2:
            raise ValueError(f"binary mode needs exactly two classes, found {present.tolist()}")
        lo, hi = int(present[0]), int(present[1])
        labels = np.where(labels == lo, -1, 1).astype(np.int64)
        meta["binary_map"] = {str(lo): -1, str(hi): 1}
    return Dataset(inputs=inputs, labels=labels, metadata=meta)


def remap_to_indices(ds: Dataset) -> Dataset:
    """Remap whatever labels are present to contiguous class indices 0..K-1,
    sorted by original label. Needed before cross-entropy training."""
    classes = np.unique(ds.labels)
    lut = {int(c): i for i, c in enumerate(classes)}
    labels = np.array([lut[int(v)] for v in ds.labels], dtype=np.int64)
    meta = dict(ds.metadata)
    meta["class_map"] = {str(c): i for c, i in lut.items()}
    return Dataset(inputs=ds.inputs, labels=labels, metadata=meta)


def export_csv(ds: Dataset, path) -> None:
    """Plain CSV with header x_0..x_{d-1},y; floats keep full precision."""
    with open(path, "w") as f:
        f.write(",".join([f"x_{j}" for j in range(ds.d)] + ["y"]) + "\n")
        for i in range(ds.n):
            row = [f"{v:.17g}" for v in ds.inputs[i]]
            row.append(str(int(ds.labels[i])))
            f.write(",".join(row) + "\n")


def save_cache(ds: Dataset, path) -> None:
    """Compact binary cache (npz) with a format version tag."""
    np.savez_compressed(path, format_version=CACHE_FORMAT_VERSION,
                        inputs=ds.inputs, labels=ds.labels,
                        metadata=json.dumps(ds.metadata))


def load_cache(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CACHE_FORMAT_VERSION:
            raise ValueError(f"unsupported cache version {version}")
        return Dataset(inputs=z["inputs"], labels=z["labels"],
                       metadata=json.loads(str(z["metadata"])))
