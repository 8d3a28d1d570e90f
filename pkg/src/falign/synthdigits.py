"""Deterministic synthetic digit images in the IDX layout.

A seeded generator renders 28x28 grayscale digits from fixed stencils with
per-sample position jitter, stroke-intensity variation, pixel dropout, and
background noise. It exists so the image-classification experiment protocols
can run end to end (including IDX parsing, class filtering, and label noise)
on machines without the real dataset files; when real IDX files are supplied
they are used instead.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_idx
from .linalg import Rng

__all__ = ["render_digit", "make_corpus", "write_corpus_idx"]

_GLYPHS = [
    ("XXXXX", "X...X", "X...X", "X...X", "X...X", "X...X", "XXXXX"),  # 0
    ("..X..", ".XX..", "..X..", "..X..", "..X..", "..X..", "XXXXX"),  # 1
    ("XXXXX", "....X", "....X", "XXXXX", "X....", "X....", "XXXXX"),  # 2
    ("XXXX.", "....X", "....X", ".XXXX", "....X", "....X", "XXXX."),  # 3
    ("X...X", "X...X", "X...X", "XXXXX", "....X", "....X", "....X"),  # 4
    ("XXXXX", "X....", "X....", "XXXXX", "....X", "....X", "XXXXX"),  # 5
    ("XXXXX", "X....", "X....", "XXXXX", "X...X", "X...X", "XXXXX"),  # 6
    ("XXXXX", "....X", "...X.", "..X..", "..X..", ".X...", ".X..."),  # 7
    (".XXX.", "X...X", "X...X", ".XXX.", "X...X", "X...X", ".XXX."),  # 8
    ("XXXXX", "X...X", "X...X", "XXXXX", "....X", "....X", "....X"),  # 9
]

_SCALE = 3  # stencil cell -> pixels; glyphs are 21 x 15 on a 28 x 28 canvas


def _stencil(digit: int) -> np.ndarray:
    rows = _GLYPHS[digit]
    return np.array([[c == "X" for c in r] for r in rows], dtype=np.float64)


def render_digit(digit: int, rng: Rng, size: int = 28) -> np.ndarray:
    """One uint8 image of `digit` with randomized placement and texture.

    Each sample carries strong idiosyncrasies (speckle, dropout, stroke
    texture) so that memorization experiments on label-noised subsets behave
    like they do on handwritten data, where every sample is identifiable.
    """
    glyph = np.kron(_stencil(digit), np.ones((_SCALE, _SCALE)))
    gh, gw = glyph.shape
    dy = int(rng.integers(0, size - gh + 1))
    dx = int(rng.integers(0, size - gw + 1))
    intensity = float(rng.uniform(1, 1, 130.0, 255.0)[0, 0])
    texture = rng.uniform(gh, gw, 0.45, 1.0)
    keep = (rng.uniform(gh, gw, 0.0, 1.0) > 0.12).astype(np.float64)
    canvas = rng.uniform(size, size, 0.0, 50.0)
    speckle = rng.uniform(size, size, 0.0, 1.0) < 0.04
    canvas[speckle] += rng.uniform(1, 1, 120.0, 255.0)[0, 0]
    canvas[dy:dy + gh, dx:dx + gw] += glyph * texture * keep * intensity
    return np.clip(canvas, 0.0, 255.0).astype(np.uint8)


def make_corpus(n_per_class: int, rng: Rng, classes=range(10)) -> tuple[np.ndarray, np.ndarray]:
    """Balanced image/label arrays, shuffled deterministically."""
    classes = list(classes)
    images = np.zeros((n_per_class * len(classes), 28, 28), dtype=np.uint8)
    labels = np.zeros(n_per_class * len(classes), dtype=np.uint8)
    i = 0
    for c in classes:
        for _ in range(n_per_class):
            images[i] = render_digit(c, rng)
            labels[i] = c
            i += 1
    order = rng.choice_without_replacement(i, i)
    return images[order], labels[order]


def write_corpus_idx(out_dir, n_train_per_class: int = 2400, n_test_per_class: int = 400,
                     seed: int = 742001) -> dict[str, Path]:
    """Write train/test IDX file pairs under out_dir; returns the four paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train_images": out / "train-images-idx3-ubyte",
        "train_labels": out / "train-labels-idx1-ubyte",
        "test_images": out / "t10k-images-idx3-ubyte",
        "test_labels": out / "t10k-labels-idx1-ubyte",
    }
    tr_img, tr_lab = make_corpus(n_train_per_class, Rng(seed))
    te_img, te_lab = make_corpus(n_test_per_class, Rng(seed + 1))
    write_idx(tr_img, tr_lab, paths["train_images"], paths["train_labels"])
    write_idx(te_img, te_lab, paths["test_images"], paths["test_labels"])
    return paths
