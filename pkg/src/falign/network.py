"""Feedforward leaky-ReLU networks: architecture, initialization, forward pass.

Networks are bias-free and the output layer is linear, so f(x) is the last
pre-activation. The forward pass caches pre-activations, activations, and the
gate masks (the entrywise derivative of the activation) that the backward
recursions multiply by.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .linalg import Rng, ShapeError, as_matrix, assert_finite, sign_of
from .rules import Rule

__all__ = [
    "Architecture",
    "InitStrategy",
    "NetworkState",
    "ForwardTrace",
    "leaky_relu",
    "leaky_relu_prime",
    "init_network",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "falign-net"
CHECKPOINT_VERSION = 1


class InitStrategy(str, Enum):
    UNIFORM_SCALED = "uniform"
    ALIGNED_OUTPUT = "aligned"
    XAVIER = "xavier"


@dataclass(frozen=True)
class Architecture:
    """Layer widths [input, hidden..., output] and the leaky-ReLU slope."""

    layer_widths: tuple[int, ...]
    leaky_slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 3:
            raise ValueError("need at least two weight layers (input, hidden..., output)")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"all widths must be >= 1, got {self.layer_widths}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky slope must lie in (0, 1), got {self.leaky_slope}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def scalar_output(self) -> bool:
        return self.output_width == 1


@dataclass
class NetworkState:
    """Forward weights W_1..W_L plus, for non-backprop rules, feedback B_2..B_L.

    weights[k] is W_{k+1} in 1-based layer notation. feedback mirrors weights
    with feedback[0] unused (None): feedback[k] is B_{k+1}, always the same
    shape as weights[k].
    """

    weights: list[np.ndarray]
    feedback: list[np.ndarray | None] | None
    leaky_slope: float
    rule: Rule
    init_strategy: InitStrategy = InitStrategy.UNIFORM_SCALED

    def __post_init__(self):
        for k in range(1, len(self.weights)):
            if self.weights[k - 1].shape[1] != self.weights[k].shape[0]:
                raise ShapeError(f"layer chain {k}->{k + 1}",
                                 self.weights[k - 1].shape, self.weights[k].shape)
        if self.feedback is not None:
            for k in range(1, len(self.weights)):
                b = self.feedback[k]
                if b is None or b.shape != self.weights[k].shape:
                    got = None if b is None else b.shape
                    raise ShapeError(f"feedback layer {k + 1}",
                                     self.weights[k].shape, got or (0, 0))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_width(self) -> int:
        return self.weights[-1].shape[1]

    def architecture(self) -> Architecture:
        widths = [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]
        return Architecture(tuple(widths), self.leaky_slope)

    def copy(self) -> "NetworkState":
        fb = None
        if self.feedback is not None:
            fb = [None] + [b.copy() for b in self.feedback[1:]]
        return NetworkState(weights=[w.copy() for w in self.weights], feedback=fb,
                            leaky_slope=self.leaky_slope, rule=self.rule,
                            init_strategy=self.init_strategy)


@dataclass
class ForwardTrace:
    """Cached intermediates of one forward pass.

    pre[k] is h_{k+1}, acts[k] is the hidden activation a_{k+1} (the output
    layer is linear so acts has one fewer entry), gates[k] holds phi'(h_{k+1})
    with entries in {leaky_slope, 1}.
    """

    inputs: np.ndarray
    pre: list[np.ndarray]
    acts: list[np.ndarray]
    gates: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.pre[-1]

    def layer_input(self, k: int) -> np.ndarray:
        """The batch fed into weight layer k (0-based): a_k, with a_0 = inputs."""
        return self.inputs if k == 0 else self.acts[k - 1]


def leaky_relu(z, slope: float):
    """phi(z) = z for z > 0, slope * z otherwise."""
    return np.where(np.asarray(z) > 0.0, z, slope * np.asarray(z))


def leaky_relu_prime(z, slope: float):
    """phi'(z) = 1 for z > 0, slope otherwise (slope at z = 0 by convention)."""
    return np.where(np.asarray(z) > 0.0, 1.0, slope)


def _uniform_bounds(arch: Architecture) -> list[float]:
    # Hidden layers scale by their output width; the output layer by its
    # fan-in. For a two-layer net of hidden width m both bounds are 1/sqrt(m).
    widths = arch.layer_widths
    bounds = []
    for k in range(arch.n_layers):
        if k == arch.n_layers - 1:
            bounds.append(1.0 / np.sqrt(widths[k]))
        else:
            bounds.append(1.0 / np.sqrt(widths[k + 1]))
    return bounds


def init_network(arch: Architecture, strategy: InitStrategy, rule: Rule, rng: Rng) -> NetworkState:
    """Fresh network under an initialization strategy and learning rule.

    AlignedOutput sets the output weights and output feedback to all-ones and
    rescales the columns feeding the output layer to norm at most 1, which
    puts them strictly inside the sqrt(2) bound the aligned-initialization
    guarantees require. It is defined for scalar-output architectures only.
    """
    widths = arch.layer_widths
    if strategy is InitStrategy.ALIGNED_OUTPUT and not arch.scalar_output:
        raise ValueError("AlignedOutput initialization requires a scalar-output architecture")

    weights: list[np.ndarray] = []
    if strategy is InitStrategy.XAVIER:
        for k in range(arch.n_layers):
            bound = np.sqrt(6.0 / (widths[k] + widths[k + 1]))
            weights.append(rng.uniform(widths[k], widths[k + 1], -bound, bound))
    else:
        for k, bound in enumerate(_uniform_bounds(arch)):
            weights.append(rng.uniform(widths[k], widths[k + 1], -bound, bound))

    if strategy is InitStrategy.ALIGNED_OUTPUT:
        weights[-1] = np.ones_like(weights[-1])
        below = weights[-2]
        col_norms = np.sqrt((below ** 2).sum(axis=0))
        scale = np.where(col_norms > 1.0, 1.0 / np.maximum(col_norms, 1e-300), 1.0)
        weights[-2] = below * scale

    feedback: list[np.ndarray | None] | None
    if rule is Rule.BP:
        feedback = None
    else:
        feedback = [None]
        for k in range(1, arch.n_layers):
            if rule is Rule.ADA_FA:
                feedback.append(weights[k].copy())
            elif rule is Rule.SIGN_FA:
                feedback.append(sign_of(weights[k]))
            else:  # FA: fresh random feedback, same scale as the weights
                if strategy is InitStrategy.XAVIER:
                    bound = np.sqrt(6.0 / (widths[k] + widths[k + 1]))
                else:
                    bound = _uniform_bounds(arch)[k]
                feedback.append(rng.uniform(widths[k], widths[k + 1], -bound, bound))
        if strategy is InitStrategy.ALIGNED_OUTPUT:
            feedback[-1] = np.ones_like(weights[-1])

    net = NetworkState(weights=weights, feedback=feedback, leaky_slope=arch.leaky_slope,
                       rule=rule, init_strategy=strategy)
    for w in net.weights:
        assert_finite(w, "initial weights")
    return net


def forward(net: NetworkState, x) -> tuple[np.ndarray, ForwardTrace]:
    """Forward pass over a batch (rows are samples). Returns (outputs, trace).

    Outputs are the last pre-activation; no activation is applied to the
    output layer.
    """
    x0 = as_matrix(x)
    if x0.shape[1] != net.input_width:
        raise ShapeError("forward input", x0.shape, net.weights[0].shape)
    pre: list[np.ndarray] = []
    acts: list[np.ndarray] = []
    gates: list[np.ndarray] = []
    slope = net.leaky_slope
    a = x0
    for k, w in enumerate(net.weights):
        h = a @ w
        pre.append(h)
        if k < net.n_layers - 1:
            g = np.where(h > 0.0, 1.0, slope)
            a = h * g  # phi(h) = phi'(h) * h for leaky ReLU
            gates.append(g)
            acts.append(a)
    trace = ForwardTrace(inputs=x0, pre=pre, acts=acts, gates=gates)
    return pre[-1], trace


def save_checkpoint(net: NetworkState, path, seed: int | None = None, step: int = 0) -> None:
    """Write a self-describing JSON checkpoint (exact float round-trip)."""
    widths = [net.weights[0].shape[0]] + [w.shape[1] for w in net.weights]
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "rule": net.rule.value,
        "init": net.init_strategy.value,
        "leaky_slope": net.leaky_slope,
        "seed": seed,
        "step": step,
        "layer_widths": widths,
        "weights": [w.ravel().tolist() for w in net.weights],
        "feedback": None if net.feedback is None
        else [b.ravel().tolist() for b in net.feedback[1:]],
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[NetworkState, dict]:
    """Load a checkpoint; returns (network, meta) with meta holding seed/step."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a network checkpoint: format={payload.get('format')!r}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    widths = payload["layer_widths"]
    shapes = [(widths[k], widths[k + 1]) for k in range(len(widths) - 1)]
    weights = [np.array(flat, dtype=np.float64).reshape(shape)
               for flat, shape in zip(payload["weights"], shapes)]
    feedback = None
    if payload["feedback"] is not None:
        feedback = [None] + [np.array(flat, dtype=np.float64).reshape(shape)
                             for flat, shape in zip(payload["feedback"], shapes[1:])]
    net = NetworkState(weights=weights, feedback=feedback,
                       leaky_slope=payload["leaky_slope"], rule=Rule(payload["rule"]),
                       init_strategy=InitStrategy(payload["init"]))
    return net, {"seed": payload.get("seed"), "step": payload.get("step", 0)}
