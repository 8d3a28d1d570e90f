"""Full-batch explicit-Euler training of the learning flow, with logging.

One trajectory is strictly sequential; every logged step records the loss,
the alignment/conservation instruments, and the gradient/update factorization
terms, all evaluated at the pre-update state, so the log doubles as the input
to the dominance and envelope verifiers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .linalg import ShapeError, sign_of
from .losses import LossEval, LossKind, evaluate_loss
from .metrics import conservation_layer, layer_alignment
from .network import NetworkState, forward
from .rules import Rule, backward_fa, global_inner, propose_updates

__all__ = [
    "Schedule",
    "TrainConfig",
    "LogEntry",
    "TrajectoryLog",
    "EvalResult",
    "NumericalAbortError",
    "train",
    "evaluate",
    "parse_schedule",
]

LOSS_STOP = 1e-12


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule: constant, or decay by `factor` every `every` steps."""

    kind: str = "constant"
    factor: float = 1.0
    every: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "step"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "step" and (self.every < 1 or self.factor <= 0):
            raise ValueError("step schedule needs every >= 1 and factor > 0")

    def lr_at(self, lr0: float, step: int) -> float:
        if self.kind == "constant":
            return lr0
        return lr0 * self.factor ** (step // self.every)

    def spec(self) -> str:
        if self.kind == "constant":
            return "constant"
        return f"step:{self.factor:g}:{self.every}"


def parse_schedule(spec: str) -> Schedule:
    """Parse 'constant' or 'step:FACTOR:EVERY'."""
    if spec == "constant":
        return Schedule()
    parts = spec.split(":")
    if len(parts) == 3 and parts[0] == "step":
        return Schedule(kind="step", factor=float(parts[1]), every=int(parts[2]))
    raise ValueError(f"cannot parse schedule {spec!r}")


@dataclass(frozen=True)
class TrainConfig:
    rule: Rule
    loss: LossKind
    lr: float
    steps: int
    schedule: Schedule = Schedule()
    momentum: float = 0.0
    log_every: int = 1
    seed: int = 0
    batch_size: int | None = None  # None = full batch; minibatch is exploratory only
    saturation_policy: str = "stop"  # "stop" | "continue"
    snapshot_steps: tuple[int, ...] = ()

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.saturation_policy not in ("stop", "continue"):
            raise ValueError(f"unknown saturation policy {self.saturation_policy!r}")


@dataclass
class LogEntry:
    """State of the trajectory at one step, measured before that step's update."""

    step: int
    time: float
    lr: float
    loss: float
    saturated: bool
    train_acc: float
    test_loss: float = math.nan
    test_acc: float = math.nan
    inner: float = math.nan
    grad_norm: float = math.nan
    fa_norm: float = math.nan
    cos_omega: float = math.nan
    align: dict[int, float] = field(default_factory=dict)
    align_floor: dict[int, float] = field(default_factory=dict)
    cons_residual_mean: dict[int, float] = field(default_factory=dict)
    cons_ratio_mean: dict[int, float] = field(default_factory=dict)
    cons_dev_mean: dict[int, float] = field(default_factory=dict)
    w_out_min: float = math.nan


@dataclass
class TrajectoryLog:
    config: TrainConfig
    n_layers: int
    entries: list[LogEntry] = field(default_factory=list)
    snapshots: dict[int, NetworkState] = field(default_factory=dict)
    stop_reason: str = "completed"
    aborted_at: int | None = None

    @property
    def initial(self) -> NetworkState:
        return self.snapshots[0]

    @property
    def final_loss(self) -> float:
        return self.entries[-1].loss


class NumericalAbortError(RuntimeError):
    """Weights left the finite range; carries the step index and partial log."""

    def __init__(self, step: int, log: TrajectoryLog):
        super().__init__(f"non-finite weights after step {step}")
        self.step = step
        self.log = log


@dataclass(frozen=True)
class EvalResult:
    loss: float
    accuracy: float
    saturated: bool


def _accuracy(outputs: np.ndarray, labels: np.ndarray) -> float:
    if outputs.shape[1] == 1:
        pred = sign_of(outputs)[:, 0]
        return float((pred == labels).mean())
    return float((outputs.argmax(axis=1) == labels).mean())


def evaluate(net: NetworkState, ds: Dataset, loss_kind: LossKind) -> EvalResult:
    """Forward-only loss and accuracy; side-effect free."""
    outputs, _ = forward(net, ds.inputs)
    ev = evaluate_loss(loss_kind, outputs, ds.labels)
    return EvalResult(loss=ev.value, accuracy=_accuracy(outputs, ds.labels),
                      saturated=ev.saturated)


def _check_compat(net: NetworkState, ds: Dataset, cfg: TrainConfig) -> None:
    if ds.d != net.input_width:
        raise ShapeError("dataset vs network", ds.inputs.shape, net.weights[0].shape)
    if cfg.loss is LossKind.EXP_MARGIN and net.output_width != 1:
        raise ValueError("exponential margin loss needs a scalar-output network")


def _log_state(net: NetworkState, net0: NetworkState, ds: Dataset, cfg: TrainConfig,
               step: int, t: float, lr: float, ev: LossEval, outputs: np.ndarray,
               bundle, test_ds: Dataset | None) -> LogEntry:
    gi = global_inner(bundle)
    entry = LogEntry(step=step, time=t, lr=lr, loss=ev.value, saturated=ev.saturated,
                     train_acc=_accuracy(outputs, ds.labels), inner=gi.inner,
                     grad_norm=gi.grad_norm, fa_norm=gi.fa_norm, cos_omega=gi.cos_omega)
    if net.feedback is not None:
        for layer in range(2, net.n_layers + 1):
            rec = layer_alignment(net, layer)
            entry.align[layer] = rec.cosine
            if rec.floor is not None:
                entry.align_floor[layer] = rec.floor
        for layer in range(1, net.n_layers):
            _, mean_abs_res, mean_ratio, mean_abs_dev = conservation_layer(net, net0, layer)
            entry.cons_residual_mean[layer] = mean_abs_res
            entry.cons_ratio_mean[layer] = mean_ratio
            entry.cons_dev_mean[layer] = mean_abs_dev
    if net.output_width == 1:
        entry.w_out_min = float(net.weights[-1].min())
    if test_ds is not None:
        te = evaluate(net, test_ds, cfg.loss)
        entry.test_loss = te.loss
        entry.test_acc = te.accuracy
    return entry


def train(net: NetworkState, ds: Dataset, cfg: TrainConfig,
          test_ds: Dataset | None = None) -> TrajectoryLog:
    """Run cfg.steps explicit-Euler steps W <- W - lr * update, mutating net.

    Deterministic given (net, ds, cfg). Sign-FA feedback is refreshed before
    every backward pass. Training stops early when the loss falls below 1e-12
    or, under the default policy, when the loss saturates; non-finite weights
    abort with the step index and the log so far.
    """
    if cfg.rule is not net.rule:
        raise ValueError(f"config rule {cfg.rule.value} does not match network rule {net.rule.value}")
    _check_compat(net, ds, cfg)
    log = TrajectoryLog(config=cfg, n_layers=net.n_layers)
    log.snapshots[0] = net.copy()
    net0 = log.snapshots[0]
    velocity = [np.zeros_like(w) for w in net.weights] if cfg.momentum > 0 else None
    batch_rng = np.random.Generator(np.random.PCG64(cfg.seed)) if cfg.batch_size else None

    boundary_steps = set(cfg.snapshot_steps)
    if cfg.schedule.kind == "step":
        boundary_steps.update(range(cfg.schedule.every, cfg.steps, cfg.schedule.every))

    for w in net.weights:
        if not np.isfinite(w).all():
            log.stop_reason = "aborted"
            log.aborted_at = 0
            raise NumericalAbortError(0, log)

    t = 0.0
    step = 0
    while step < cfg.steps:
        lr = cfg.schedule.lr_at(cfg.lr, step)
        if cfg.batch_size:
            idx = batch_rng.choice(ds.n, size=min(cfg.batch_size, ds.n), replace=False)
            bx, by = ds.inputs[idx], ds.labels[idx]
        else:
            bx, by = ds.inputs, ds.labels

        logging_now = step % cfg.log_every == 0
        if logging_now and cfg.batch_size:
            # logged metrics always reflect the full batch
            outputs, trace = forward(net, ds.inputs)
            ev = evaluate_loss(cfg.loss, outputs, ds.labels)
            bundle = backward_fa(trace, net, ev.grad, loss_value=ev.value, saturated=ev.saturated)
            log.entries.append(_log_state(net, net0, ds, cfg, step, t, lr, ev, outputs,
                                          bundle, test_ds))
            outputs, trace = forward(net, bx)
            ev = evaluate_loss(cfg.loss, outputs, by)
            updates = propose_updates(trace, net, ev.grad)
        else:
            outputs, trace = forward(net, bx)
            ev = evaluate_loss(cfg.loss, outputs, by)
            if logging_now:
                bundle = backward_fa(trace, net, ev.grad, loss_value=ev.value,
                                     saturated=ev.saturated)
                log.entries.append(_log_state(net, net0, ds, cfg, step, t, lr, ev, outputs,
                                              bundle, test_ds))
                updates = bundle.updates
            else:
                updates = propose_updates(trace, net, ev.grad)

        if ev.value < LOSS_STOP:
            log.stop_reason = "loss-floor"
            break
        if ev.saturated and cfg.saturation_policy == "stop":
            log.stop_reason = "saturated"
            break

        if velocity is None:
            for w, u in zip(net.weights, updates):
                w -= lr * u
        else:
            for w, v, u in zip(net.weights, velocity, updates):
                v *= cfg.momentum
                v += u
                w -= lr * v

        for w in net.weights:
            if not np.isfinite(w).all():
                log.stop_reason = "aborted"
                log.aborted_at = step
                raise NumericalAbortError(step, log)

        t += lr
        step += 1
        if step in boundary_steps:
            log.snapshots[step] = net.copy()

    # final entry at the post-training state (or the state where we stopped)
    if not log.entries or log.entries[-1].step < step:
        outputs, trace = forward(net, ds.inputs)
        ev = evaluate_loss(cfg.loss, outputs, ds.labels)
        bundle = backward_fa(trace, net, ev.grad, loss_value=ev.value, saturated=ev.saturated)
        lr = cfg.schedule.lr_at(cfg.lr, min(step, max(cfg.steps - 1, 0)))
        log.entries.append(_log_state(net, net0, ds, cfg, step, t, lr, ev, outputs,
                                      bundle, test_ds))
    log.snapshots[step] = net.copy()
    return log
