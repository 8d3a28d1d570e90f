"""Feedback-alignment learning rules for leaky-ReLU networks, with the
instruments to verify their conservation, alignment, dominance, and
convergence behavior numerically."""

from .data import (Dataset, gen_nearly_orthogonal, gen_orthogonal_separable,
                   inject_label_noise, load_idx, subset)
from .linalg import Rng
from .losses import LossKind, cross_entropy, exp_margin
from .metrics import (conservation_residual, convergence_envelope, dale_check,
                      dominance_trace, envelope_bound, layer_alignment)
from .network import (Architecture, ForwardTrace, InitStrategy, NetworkState, forward,
                      init_network, leaky_relu, leaky_relu_prime, load_checkpoint,
                      save_checkpoint)
from .rules import Rule, UpdateBundle, backward_bp, backward_fa, global_inner
from .trainer import TrainConfig, TrajectoryLog, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Architecture", "Dataset", "ForwardTrace", "InitStrategy", "LossKind",
    "NetworkState", "Rng", "Rule", "TrainConfig", "TrajectoryLog", "UpdateBundle",
    "backward_bp", "backward_fa", "conservation_residual", "convergence_envelope",
    "cross_entropy", "dale_check", "dominance_trace", "envelope_bound", "evaluate",
    "exp_margin", "forward", "gen_nearly_orthogonal", "gen_orthogonal_separable",
    "global_inner", "init_network", "inject_label_noise", "layer_alignment",
    "leaky_relu", "leaky_relu_prime", "load_checkpoint", "load_idx",
    "save_checkpoint", "subset", "train",
]
