"""Training losses and their output gradients.

Both losses return the batch-mean value together with the gradient of that
mean with respect to the network outputs, so downstream backward passes need
no extra 1/n scaling.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = ["LossKind", "LossEval", "LabelError", "exp_margin", "cross_entropy", "evaluate_loss"]

# Exponent clamp for the exponential margin loss. Margins beyond this are
# flagged as saturated instead of producing Inf.
EXP_CLAMP = 700.0


class LossKind(str, Enum):
    EXP_MARGIN = "exp"
    CROSS_ENTROPY = "ce"


class LabelError(ValueError):
    """Labels incompatible with the loss (wrong alphabet or out of range)."""


@dataclass
class LossEval:
    value: float
    grad: np.ndarray  # same shape as the outputs it was evaluated at
    saturated: bool = False


def exp_margin(outputs: np.ndarray, labels: np.ndarray) -> LossEval:
    """Mean exponential margin loss exp(-y*f) for scalar outputs and +-1 labels.

    The exponent is clamped at EXP_CLAMP before exponentiation; when the clamp
    binds the result is flagged saturated so verifiers can exclude the tail.
    """
    if outputs.ndim != 2 or outputs.shape[1] != 1:
        raise ValueError(f"exp_margin expects n x 1 outputs, got {outputs.shape}")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != outputs.shape[0]:
        raise LabelError(f"{y.shape[0]} labels for {outputs.shape[0]} outputs")
    if not np.all(np.abs(y) == 1.0):
        raise LabelError("exp_margin labels must be +1 or -1")
    n = y.shape[0]
    z = -y * outputs[:, 0]
    saturated = bool(np.any(z > EXP_CLAMP))
    z = np.minimum(z, EXP_CLAMP)
    per_sample = np.exp(z)
    value = float(per_sample.mean())
    grad = (-y * per_sample / n).reshape(-1, 1)
    return LossEval(value=value, grad=grad, saturated=saturated)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> LossEval:
    """Mean softmax cross-entropy; gradient is (softmax - onehot) / batch size."""
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects n x K logits, got {logits.shape}")
    n, k = logits.shape
    idx = np.asarray(labels)
    if idx.shape[0] != n:
        raise LabelError(f"{idx.shape[0]} labels for {n} logit rows")
    if np.any(idx < 0) or np.any(idx >= k):
        bad = int(idx[(idx < 0) | (idx >= k)][0])
        raise LabelError(f"label {bad} outside class range [0, {k})")
    idx = idx.astype(np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    logprob = shifted - np.log(expz.sum(axis=1, keepdims=True))
    value = float(-logprob[np.arange(n), idx].mean())
    grad = probs.copy()
    grad[np.arange(n), idx] -= 1.0
    grad /= n
    return LossEval(value=value, grad=grad, saturated=False)


def evaluate_loss(kind: LossKind, outputs: np.ndarray, labels: np.ndarray) -> LossEval:
    if kind is LossKind.EXP_MARGIN:
        return exp_margin(outputs, labels)
    if kind is LossKind.CROSS_ENTROPY:
        return cross_entropy(outputs, labels)
    raise ValueError(f"unknown loss kind {kind!r}")
