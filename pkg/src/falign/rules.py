"""Backward passes for backprop and the feedback-alignment family.

The backprop recursion propagates the output error through the transposed
forward weights; feedback alignment replaces each transposed weight matrix
with a feedback matrix of the same shape. Both passes share one recursion so
that forcing B = W reproduces backprop bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linalg import ShapeError, frobenius_inner, sign_of

__all__ = [
    "Rule",
    "UpdateBundle",
    "GlobalInner",
    "FeedbackMissingError",
    "backward_bp",
    "backward_fa",
    "refresh_feedback",
    "global_inner",
]

# Norms below this are treated as zero when computing cos(omega).
_NORM_FLOOR = 1e-300


class Rule(str, Enum):
    BP = "bp"
    FA = "fa"
    ADA_FA = "adafa"
    SIGN_FA = "signfa"


class FeedbackMissingError(RuntimeError):
    """A feedback-alignment rule was asked to run without feedback matrices."""


@dataclass
class UpdateBundle:
    """Per-layer proposed updates under a rule, plus the true gradient.

    ``updates[i]`` and ``grads[i]`` are both gradients of the batch-mean loss
    shaped like the corresponding weight matrix; a training step descends by
    W -= lr * update. For every rule the last-layer update equals the true
    last-layer gradient exactly.
    """

    rule: Rule
    updates: list[np.ndarray]
    grads: list[np.ndarray]
    loss_value: float = math.nan
    saturated: bool = False


@dataclass(frozen=True)
class GlobalInner:
    inner: float
    grad_norm: float
    fa_norm: float
    cos_omega: float


def _check_trace(trace, weights, loss_grad) -> None:
    if loss_grad.shape != trace.output.shape:
        raise ShapeError("loss_grad", loss_grad.shape, trace.output.shape)
    for k, w in enumerate(weights):
        a_in = trace.layer_input(k)
        if a_in.shape[1] != w.shape[0] or trace.pre[k].shape[1] != w.shape[1]:
            raise ShapeError(f"trace layer {k + 1}", a_in.shape, w.shape)


def _backward(trace, back_mats, loss_grad) -> list[np.ndarray]:
    """Shared recursion: delta_L = loss_grad, delta_i = (delta_{i+1} B_{i+1}^T) o g_i.

    ``back_mats[k]`` (k >= 1) is the matrix whose transpose carries the error
    from layer k+1 down to layer k: the forward weights for backprop, the
    feedback matrices for FA.
    """
    n_layers = len(back_mats)
    grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    delta = loss_grad
    grads[n_layers - 1] = trace.layer_input(n_layers - 1).T @ delta
    for k in range(n_layers - 2, -1, -1):
        delta = (delta @ back_mats[k + 1].T) * trace.gates[k]
        grads[k] = trace.layer_input(k).T @ delta
    return grads


def backward_bp(trace, net, loss_grad: np.ndarray) -> list[np.ndarray]:
    """Exact per-layer gradients of the batch-mean loss."""
    _check_trace(trace, net.weights, loss_grad)
    return _backward(trace, net.weights, loss_grad)


def refresh_feedback(net) -> None:
    """For sign-FA, reset every feedback matrix to sign(W); no-op otherwise.

    Called immediately before each backward pass, never mid-pass.
    """
    if net.rule is Rule.SIGN_FA:
        for k in range(1, len(net.weights)):
            net.feedback[k] = sign_of(net.weights[k])


def backward_fa(trace, net, loss_grad: np.ndarray, loss_value: float = math.nan,
                saturated: bool = False) -> UpdateBundle:
    """Proposed updates under net.rule together with the true gradients.

    Both passes reuse the same forward trace so the updates and the gradients
    are evaluated at the identical point.
    """
    grads = backward_bp(trace, net, loss_grad)
    if net.rule is Rule.BP:
        updates = grads
    else:
        if net.feedback is None:
            raise FeedbackMissingError(f"rule {net.rule.value} requires feedback matrices")
        refresh_feedback(net)
        updates = _backward(trace, net.feedback, loss_grad)
        if not np.array_equal(updates[-1], grads[-1]):
            raise AssertionError("last-layer FA update diverged from the gradient")
    return UpdateBundle(rule=net.rule, updates=updates, grads=grads,
                        loss_value=loss_value, saturated=saturated)


def propose_updates(trace, net, loss_grad: np.ndarray) -> list[np.ndarray]:
    """Updates only (single backward pass); used on non-logged training steps."""
    if net.rule is Rule.BP:
        return backward_bp(trace, net, loss_grad)
    if net.feedback is None:
        raise FeedbackMissingError(f"rule {net.rule.value} requires feedback matrices")
    refresh_feedback(net)
    _check_trace(trace, net.weights, loss_grad)
    return _backward(trace, net.feedback, loss_grad)


def global_inner(bundle: UpdateBundle) -> GlobalInner:
    """Whole-parameter-vector inner product and norms of (grad, update).

    cos_omega is defined as 0 when either norm underflows, so the identity
    cos_omega * grad_norm * fa_norm == inner holds at every regular point.
    """
    inner = 0.0
    g_sq = 0.0
    u_sq = 0.0
    for g, u in zip(bundle.grads, bundle.updates):
        inner += frobenius_inner(g, u)
        g_sq += frobenius_inner(g, g)
        u_sq += frobenius_inner(u, u)
    grad_norm = math.sqrt(g_sq)
    fa_norm = math.sqrt(u_sq)
    if grad_norm < _NORM_FLOOR or fa_norm < _NORM_FLOOR:
        cos_omega = 0.0
    else:
        cos_omega = inner / (grad_norm * fa_norm)
    return GlobalInner(inner=inner, grad_norm=grad_norm, fa_norm=fa_norm, cos_omega=cos_omega)
