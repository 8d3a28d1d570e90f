"""Shared fixtures.

The image-experiment tests run against real MNIST IDX files when
FALIGN_MNIST_DIR points at a directory containing the four standard files
(e.g. populated by `falign fetch-mnist`); otherwise they fall back to the
package's deterministic synthetic digit corpus, which exercises the identical
pipeline (IDX parsing, class filtering, label noise) at the same dimensions.
"""

import os
from pathlib import Path

import pytest

from falign.data import inject_label_noise, load_idx, remap_to_indices, subset
from falign.linalg import Rng
from falign.synthdigits import write_corpus_idx

MNIST_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@pytest.fixture(scope="session")
def idx_source(tmp_path_factory):
    """(paths dict, source name) for the image corpus."""
    env = os.environ.get("FALIGN_MNIST_DIR")
    if env:
        d = Path(env)
        paths = {k: d / v for k, v in MNIST_NAMES.items()}
        if all(p.exists() for p in paths.values()):
            return paths, "mnist"
    out = tmp_path_factory.mktemp("digits")
    return write_corpus_idx(out), "synthetic-digits"


@pytest.fixture(scope="session")
def image_corpus(idx_source):
    paths, source = idx_source
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    return train, test, source


@pytest.fixture(scope="session")
def binary500(image_corpus):
    """Noisy 500-sample binary (+-1) subset of classes 3 vs 7."""
    train, _, _ = image_corpus
    ds = subset(train, 500, Rng(11), classes={3, 7}, binary=True)
    return inject_label_noise(ds, 0.2, Rng(12))


@pytest.fixture(scope="session")
def noisy4k(image_corpus):
    """(noisy 4k train with 0/1 class indices, clean test) for classes 3 vs 7."""
    train, test, _ = image_corpus
    tr = remap_to_indices(subset(train, 4000, Rng(21), classes={3, 7}))
    tr = inject_label_noise(tr, 0.2, Rng(22))
    te = remap_to_indices(subset(test, min(800, test.n), Rng(23), classes={3, 7}))
    return tr, te
