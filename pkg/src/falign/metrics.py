"""Verification instruments: conservation residuals, alignment cosines and
floors, sign-constancy (Dale) checks, alignment-dominance estimation, and
convergence envelopes.

The conservation identity is a statement about the continuous-time flow, so a
discrete trajectory is judged by the size and first-order-in-step-size scaling
of its residual, not by exact equality. All layer arguments are 1-based to
match the W_1..W_L naming used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import sign_of
from .network import NetworkState
from .rules import Rule

__all__ = [
    "ConservationRecord",
    "AlignmentRecord",
    "DaleReport",
    "DominanceRecord",
    "DominanceReport",
    "EnvelopeReport",
    "conservation_residual",
    "conservation_layer",
    "layer_alignment",
    "dale_check",
    "dominance_trace",
    "convergence_envelope",
    "envelope_bound",
    "alignment_floor_estimate",
    "benign_overfit_report",
    "eq1_max_relative_error",
    "write_metrics_csv",
    "read_metrics_csv",
]

# Denominators smaller than this make the normalized conservation ratio
# meaningless; the ratio is reported as undefined (None) in that case.
RATIO_DENOM_FLOOR = 1e-12


def _effective_feedback(net: NetworkState, k: int) -> np.ndarray:
    """Feedback matrix B_{k+1} as seen at measurement time (0-based k).

    Sign-FA feedback is a function of the current weights, so it is
    recomputed rather than read from the stored state.
    """
    if net.feedback is None:
        raise ValueError("network trained without feedback matrices (backprop)")
    if net.rule is Rule.SIGN_FA:
        return sign_of(net.weights[k])
    return net.feedback[k]


@dataclass(frozen=True)
class ConservationRecord:
    """Per-neuron conservation bookkeeping between two snapshots.

    lhs is the change of <W_{i+1}[j,:], B_{i+1}[j,:]> since the reference
    state, rhs the change of ||W_i[:,j]||^2 / 2; the flow keeps lhs == rhs, so
    residual = lhs - rhs measures discretization error. ratio is the
    init-normalized quantity (None when its denominator is ~0).
    """

    layer: int
    neuron: int
    lhs: float
    rhs: float
    residual: float
    ratio: float | None


def _conservation_arrays(net_t: NetworkState, net_0: NetworkState, layer: int):
    if not 1 <= layer <= net_t.n_layers - 1:
        raise ValueError(f"conservation layer must lie in [1, {net_t.n_layers - 1}], got {layer}")
    k = layer - 1
    w_up_t, b_up_t = net_t.weights[k + 1], _effective_feedback(net_t, k + 1)
    w_up_0, b_up_0 = net_0.weights[k + 1], _effective_feedback(net_0, k + 1)
    out_t = (w_up_t * b_up_t).sum(axis=1)
    out_0 = (w_up_0 * b_up_0).sum(axis=1)
    in_t = 0.5 * (net_t.weights[k] ** 2).sum(axis=0)
    in_0 = 0.5 * (net_0.weights[k] ** 2).sum(axis=0)
    lhs = out_t - out_0
    rhs = in_t - in_0
    num = out_t - in_t
    den = out_0 - in_0
    return lhs, rhs, num, den


def conservation_residual(net_t: NetworkState, net_0: NetworkState,
                          layer: int, neuron: int) -> ConservationRecord:
    """Conservation record for one neuron (1-based layer, 0-based neuron)."""
    lhs, rhs, num, den = _conservation_arrays(net_t, net_0, layer)
    j = neuron
    ratio = float(num[j] / den[j]) if abs(den[j]) >= RATIO_DENOM_FLOOR else None
    return ConservationRecord(layer=layer, neuron=j, lhs=float(lhs[j]), rhs=float(rhs[j]),
                              residual=float(lhs[j] - rhs[j]), ratio=ratio)


def conservation_layer(net_t: NetworkState, net_0: NetworkState, layer: int):
    """All per-neuron records of one layer plus summary means.

    Returns (records, mean |residual|, mean ratio, mean |ratio - 1|); the two
    ratio means are over neurons with a defined ratio and NaN if there are
    none.
    """
    lhs, rhs, num, den = _conservation_arrays(net_t, net_0, layer)
    residual = lhs - rhs
    defined = np.abs(den) >= RATIO_DENOM_FLOOR
    records = []
    for j in range(lhs.shape[0]):
        ratio = float(num[j] / den[j]) if defined[j] else None
        records.append(ConservationRecord(layer=layer, neuron=j, lhs=float(lhs[j]),
                                           rhs=float(rhs[j]), residual=float(residual[j]),
                                           ratio=ratio))
    mean_abs_residual = float(np.abs(residual).mean())
    if defined.any():
        ratios = num[defined] / den[defined]
        mean_ratio = float(ratios.mean())
        mean_abs_dev = float(np.abs(ratios - 1.0).mean())
    else:
        mean_ratio = math.nan
        mean_abs_dev = math.nan
    return records, mean_abs_residual, mean_ratio, mean_abs_dev


@dataclass(frozen=True)
class AlignmentRecord:
    """Alignment cosine of one layer's forward and feedback weights."""

    layer: int
    cosine: float  # NaN when either norm vanishes
    n_params: int
    floor: float | None  # 1/sqrt(n_params) where a theoretical floor applies
    defined: bool


def layer_alignment(net: NetworkState, layer: int) -> AlignmentRecord:
    """Cosine <W_i, B_i> / (||W_i||_F ||B_i||_F) for a layer with feedback.

    The 1/sqrt(n_params) floor is attached for sign-FA (any layer) and for the
    output layer under aligned-output initialization, where it is guaranteed
    along the flow.
    """
    if not 2 <= layer <= net.n_layers:
        raise ValueError(f"alignment layer must lie in [2, {net.n_layers}], got {layer}")
    k = layer - 1
    w = net.weights[k]
    b = _effective_feedback(net, k)
    wn = float(np.sqrt((w ** 2).sum()))
    bn = float(np.sqrt((b ** 2).sum()))
    n_params = w.size
    if wn == 0.0 or bn == 0.0:
        cosine, defined = math.nan, False
    else:
        cosine = float((w * b).sum() / (wn * bn))
        defined = True
    floor = None
    if net.rule is Rule.SIGN_FA:
        floor = 1.0 / math.sqrt(n_params)
    elif net.init_strategy.value == "aligned" and layer == net.n_layers:
        floor = 1.0 / math.sqrt(n_params)
    return AlignmentRecord(layer=layer, cosine=cosine, n_params=n_params,
                           floor=floor, defined=defined)


@dataclass(frozen=True)
class DaleReport:
    """Sign constancy of the output weights (scalar-output networks)."""

    all_positive: bool
    min_entry: float
    n_nonpositive: int


def dale_check(net: NetworkState) -> DaleReport:
    """True iff every output-layer weight is strictly positive.

    Meaningful as a guarantee only under aligned-output initialization; the
    check itself reports unconditionally.
    """
    if net.output_width != 1:
        raise ValueError("Dale check applies to scalar-output networks")
    w = net.weights[-1]
    return DaleReport(all_positive=bool((w > 0.0).all()),
                      min_entry=float(w.min()),
                      n_nonpositive=int((w <= 0.0).sum()))


@dataclass(frozen=True)
class DominanceRecord:
    step: int
    time: float
    inner: float
    gap: float
    implied_alpha: float


@dataclass
class DominanceReport:
    beta: float
    loss_floor: float
    records: list[DominanceRecord]
    alpha_hat: float
    violations: list[int] = field(default_factory=list)  # steps with inner < 0
    n_excluded_saturated: int = 0


def dominance_trace(log, beta: float, loss_floor: float = 0.0) -> DominanceReport:
    """Empirical alignment-dominance certificate over a logged trajectory.

    For each non-saturated logged step the implied constant is
    inner / (loss - floor)^beta; alpha_hat is the minimum over the trajectory.
    alpha_hat > 0 certifies empirical (alpha_hat, beta)-dominance for the
    observed steps. Steps with a negative inner product are flagged.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    entries = getattr(log, "entries", log)
    if not entries:
        raise ValueError("empty trajectory log")
    records: list[DominanceRecord] = []
    violations: list[int] = []
    n_sat = 0
    for e in entries:
        if e.saturated:
            n_sat += 1
            continue
        gap = e.loss - loss_floor
        if gap <= 0.0:
            continue
        implied = e.inner / gap ** beta
        records.append(DominanceRecord(step=e.step, time=e.time, inner=e.inner,
                                       gap=gap, implied_alpha=implied))
        if e.inner < 0.0:
            violations.append(e.step)
    if not records:
        raise ValueError("no usable (non-saturated, positive-gap) steps in log")
    alpha_hat = min(r.implied_alpha for r in records)
    return DominanceReport(beta=beta, loss_floor=loss_floor, records=records,
                           alpha_hat=alpha_hat, violations=violations,
                           n_excluded_saturated=n_sat)


def envelope_bound(loss0: float, alpha: float, beta: float, t: float) -> float:
    """Closed-form loss bound at time t under (alpha, beta)-dominance.

    beta = 1 gives exponential decay loss0 * exp(-alpha t); beta > 1 gives the
    polynomial envelope ((beta-1) / (alpha t + (beta-1)/loss0^(beta-1)))^(1/(beta-1)).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if beta == 1.0:
        return loss0 * math.exp(-alpha * t)
    bm1 = beta - 1.0
    return (bm1 / (alpha * t + bm1 / loss0 ** bm1)) ** (1.0 / bm1)


@dataclass
class EnvelopeReport:
    alpha: float
    beta: float
    tol: float
    loss0: float
    bounds: list[float]
    violation_count: int
    max_violation: float  # max of loss/bound - 1 over violating steps, 0 if none
    first_violation_step: int | None


def convergence_envelope(log, alpha: float, beta: float, tol: float = 0.05) -> EnvelopeReport:
    """Check every logged loss against the dominance envelope.

    Time is measured from the first logged entry and the envelope anchored at
    that entry's loss. A step violates when loss > bound * (1 + tol).
    """
    entries = getattr(log, "entries", log)
    if not entries:
        raise ValueError("empty trajectory log")
    t0 = entries[0].time
    loss0 = entries[0].loss
    bounds: list[float] = []
    violation_count = 0
    max_violation = 0.0
    first_step: int | None = None
    for e in entries:
        bound = envelope_bound(loss0, alpha, beta, e.time - t0)
        bounds.append(bound)
        if e.loss > bound * (1.0 + tol):
            violation_count += 1
            max_violation = max(max_violation, e.loss / bound - 1.0)
            if first_step is None:
                first_step = e.step
    return EnvelopeReport(alpha=alpha, beta=beta, tol=tol, loss0=loss0, bounds=bounds,
                          violation_count=violation_count, max_violation=max_violation,
                          first_violation_step=first_step)


def alignment_floor_estimate(log, layer: int, burn_in: float = 0.1) -> tuple[float, float]:
    """Empirical (c, T_c) estimate: the running-minimum alignment cosine of a
    layer after a burn-in fraction of the trajectory, with the burn-in time.

    This reports what was observed; it does not claim the asymptotic property.
    """
    entries = getattr(log, "entries", log)
    if not entries:
        raise ValueError("empty trajectory log")
    cut = entries[int(burn_in * (len(entries) - 1))].time
    tail = [e.align[layer] for e in entries if e.time >= cut and layer in e.align
            and not math.isnan(e.align[layer])]
    if not tail:
        raise ValueError(f"no alignment samples for layer {layer} after burn-in")
    return min(tail), cut


def eq1_max_relative_error(log) -> float:
    """Largest relative mismatch of cos(omega) * ||grad|| * ||update|| vs the
    global inner product across logged steps."""
    entries = getattr(log, "entries", log)
    worst = 0.0
    for e in entries:
        lhs = e.cos_omega * e.grad_norm * e.fa_norm
        denom = max(abs(e.inner), 1e-300)
        worst = max(worst, abs(lhs - e.inner) / denom)
    return worst


def benign_overfit_report(rows: list[dict]) -> list[dict]:
    """Width-sweep summary: mean final train/test accuracy and test loss per
    (width, rule), widths ascending.

    Input rows need width, rule, train_acc, test_acc, test_loss keys (one row
    per run; replicates are averaged).
    """
    groups: dict[tuple[int, str], list[dict]] = {}
    for r in rows:
        groups.setdefault((int(r["width"]), str(r["rule"])), []).append(r)
    out = []
    for (width, rule) in sorted(groups):
        members = groups[(width, rule)]
        out.append({
            "width": width,
            "rule": rule,
            "n_runs": len(members),
            "train_acc": float(np.mean([m["train_acc"] for m in members])),
            "test_acc": float(np.mean([m["test_acc"] for m in members])),
            "test_loss": float(np.mean([m["test_loss"] for m in members])),
        })
    return out


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def metrics_csv_columns(n_layers: int) -> list[str]:
    cols = ["step", "time", "loss_train", "loss_test", "acc_train", "acc_test"]
    cols += [f"cos_align_{i}" for i in range(2, n_layers + 1)]
    cols += [f"cons_residual_{i}_mean" for i in range(1, n_layers)]
    cols += [f"cons_ratio_{i}_mean" for i in range(1, n_layers)]
    cols += ["inner_global", "grad_norm", "fa_norm", "cos_omega"]
    return cols


def write_metrics_csv(log, path, n_layers: int) -> None:
    """One row per logged step in the fixed column order; floats carry 17
    significant digits so values round-trip exactly."""
    cols = metrics_csv_columns(n_layers)
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for e in log.entries:
            row = [str(e.step), _fmt(e.time), _fmt(e.loss), _fmt(e.test_loss),
                   _fmt(e.train_acc), _fmt(e.test_acc)]
            row += [_fmt(e.align.get(i, math.nan)) for i in range(2, n_layers + 1)]
            row += [_fmt(e.cons_residual_mean.get(i, math.nan)) for i in range(1, n_layers)]
            row += [_fmt(e.cons_ratio_mean.get(i, math.nan)) for i in range(1, n_layers)]
            row += [_fmt(e.inner), _fmt(e.grad_norm), _fmt(e.fa_norm), _fmt(e.cos_omega)]
            f.write(",".join(row) + "\n")


def read_metrics_csv(path) -> tuple[list[str], list[dict[str, float]]]:
    """Parse a metrics CSV back into (column names, list of row dicts)."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = []
        for line in f:
            vals = line.strip().split(",")
            rows.append({c: float(v) for c, v in zip(header, vals)})
    return header, rows
