import math

import numpy as np
import pytest

from falign.data import Dataset, gen_orthogonal_separable
from falign.linalg import Rng
from falign.losses import LossKind
from falign.network import Architecture, InitStrategy, init_network
from falign.rules import Rule
from falign.trainer import (NumericalAbortError, Schedule, TrainConfig, evaluate,
                            parse_schedule, train)


def make_setup(rule=Rule.FA, width=6, seed=60, n=12, d=5):
    ds = gen_orthogonal_separable(n, d, 0.5, Rng(seed))
    net = init_network(Architecture((d, width, 1)), InitStrategy.UNIFORM_SCALED,
                       rule, Rng(seed + 1))
    return net, ds


def cfg_for(rule, **kw):
    base = dict(rule=rule, loss=LossKind.EXP_MARGIN, lr=1e-3, steps=50, log_every=10)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_learning_rate_leaves_weights_unchanged():
    net, ds = make_setup()
    before = [w.copy() for w in net.weights]
    log = train(net, ds, cfg_for(Rule.FA, lr=0.0, steps=20))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.weights))
    losses = [e.loss for e in log.entries]
    assert max(losses) == min(losses)


def test_bp_loss_decreases_monotonically_on_separable_problem():
    inputs = np.array([[1.0, 0.5], [-1.0, -0.5]])
    labels = np.array([1, -1])
    ds = Dataset(inputs=inputs, labels=labels)
    net = init_network(Architecture((2, 1, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(61))
    log = train(net, ds, cfg_for(Rule.BP, lr=1e-2, steps=100, log_every=1))
    losses = [e.loss for e in log.entries]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_training_is_bit_deterministic():
    net1, ds = make_setup(seed=62)
    net2, _ = make_setup(seed=62)
    log1 = train(net1, ds, cfg_for(Rule.FA, steps=40, log_every=5))
    log2 = train(net2, ds, cfg_for(Rule.FA, steps=40, log_every=5))
    assert all(np.array_equal(a, b) for a, b in zip(net1.weights, net2.weights))
    assert [e.loss for e in log1.entries] == [e.loss for e in log2.entries]
    assert [e.inner for e in log1.entries] == [e.inner for e in log2.entries]


def test_log_cadence_and_final_entry():
    net, ds = make_setup(seed=63)
    log = train(net, ds, cfg_for(Rule.FA, steps=25, log_every=10))
    steps = [e.step for e in log.entries]
    assert steps == [0, 10, 20, 25]
    assert all(a < b for a, b in zip(steps, steps[1:]))
    assert 0 in log.snapshots and 25 in log.snapshots


def test_step_decay_schedule_exact():
    sched = Schedule(kind="step", factor=0.1, every=1000)
    assert sched.lr_at(0.05, 0) == 0.05
    assert sched.lr_at(0.05, 999) == 0.05
    assert sched.lr_at(0.05, 1000) == pytest.approx(0.005)
    assert sched.lr_at(0.05, 3500) == pytest.approx(0.05 * 0.1 ** 3)
    assert parse_schedule("step:0.1:1000") == sched
    assert parse_schedule("constant") == Schedule()
    with pytest.raises(ValueError):
        parse_schedule("warmup:1:2")


def test_one_step_loss_identity():
    # L(w - eta*u) - L(w) ~ -eta * <grad, update> at eta = 1e-6 within 1%
    from falign.losses import evaluate_loss
    from falign.network import forward
    from falign.rules import backward_fa, global_inner
    net, ds = make_setup(rule=Rule.FA, seed=64)
    out, trace = forward(net, ds.inputs)
    ev = evaluate_loss(LossKind.EXP_MARGIN, out, ds.labels)
    bundle = backward_fa(trace, net, ev.grad)
    gi = global_inner(bundle)
    eta = 1e-6
    for w, u in zip(net.weights, bundle.updates):
        w -= eta * u
    after = evaluate_loss(LossKind.EXP_MARGIN, forward(net, ds.inputs)[0], ds.labels).value
    predicted = -eta * gi.inner
    assert abs((after - ev.value) - predicted) < 0.01 * abs(predicted)


def test_momentum_trajectory_differs_and_is_recorded():
    net1, ds = make_setup(seed=65)
    net2, _ = make_setup(seed=65)
    train(net1, ds, cfg_for(Rule.FA, steps=30))
    log = train(net2, ds, cfg_for(Rule.FA, steps=30, momentum=0.9))
    assert log.config.momentum == 0.9
    assert any(not np.array_equal(a, b) for a, b in zip(net1.weights, net2.weights))
    with pytest.raises(ValueError):
        cfg_for(Rule.FA, momentum=1.0)


def test_verifiers_reject_momentum():
    from falign.verifiers import _momentum_free
    with pytest.raises(ValueError):
        _momentum_free(cfg_for(Rule.FA, momentum=0.5))


def test_rule_mismatch_rejected():
    net, ds = make_setup(rule=Rule.FA)
    with pytest.raises(ValueError):
        train(net, ds, cfg_for(Rule.BP))


def test_nan_abort_on_preexisting_nonfinite_weights():
    net, ds = make_setup(seed=66)
    net.weights[0][0, 0] = np.inf
    with pytest.raises(NumericalAbortError) as exc:
        train(net, ds, cfg_for(Rule.FA, steps=10, log_every=1))
    assert exc.value.step == 0
    assert exc.value.log.stop_reason == "aborted"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_abort_mid_run_carries_step_and_partial_log():
    ds = Dataset(inputs=np.array([[1.0, -0.5], [0.25, 1.0]]), labels=np.array([0, 1]))
    net = init_network(Architecture((2, 3, 2)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(66))
    cfg = TrainConfig(rule=Rule.BP, loss=LossKind.CROSS_ENTROPY, lr=1e20, steps=10,
                      log_every=1)
    with pytest.raises(NumericalAbortError) as exc:
        train(net, ds, cfg)
    assert exc.value.step >= 1
    assert exc.value.log.entries[0].step == 0  # finite prefix was logged


def test_loss_floor_early_stop():
    ds = Dataset(inputs=np.array([[1.0]]), labels=np.array([1]))
    net = init_network(Architecture((1, 1, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(67))
    net.weights[0][0, 0] = 30.0
    net.weights[1][0, 0] = 30.0  # f = 900, loss = exp(-900) underflows to 0
    log = train(net, ds, cfg_for(Rule.BP, steps=10))
    assert log.stop_reason == "loss-floor"
    assert log.entries[-1].loss < 1e-12


def test_saturation_stop_policy():
    ds = Dataset(inputs=np.array([[1.0]]), labels=np.array([-1]))
    net = init_network(Architecture((1, 1, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(68))
    net.weights[0][0, 0] = 30.0
    net.weights[1][0, 0] = 30.0  # margin -900: exponent clamps, flagged saturated
    log = train(net, ds, cfg_for(Rule.BP, steps=10))
    assert log.stop_reason == "saturated"
    assert log.entries[-1].saturated
    cont = init_network(Architecture((1, 1, 1)), InitStrategy.UNIFORM_SCALED,
                        Rule.BP, Rng(68))
    cont.weights[0][0, 0] = 30.0
    cont.weights[1][0, 0] = 30.0
    log2 = train(cont, ds, cfg_for(Rule.BP, lr=0.0, steps=3,
                                   saturation_policy="continue"))
    assert log2.entries[-1].step == 3
    assert all(e.saturated for e in log2.entries)


def test_minibatch_flag_runs_and_logs_full_batch_loss():
    net, ds = make_setup(seed=69)
    log = train(net, ds, cfg_for(Rule.FA, steps=20, batch_size=4, log_every=5))
    full_loss = evaluate(log.initial, ds, LossKind.EXP_MARGIN).loss
    assert log.entries[0].loss == pytest.approx(full_loss)


def test_evaluate_accuracy_and_purity():
    ds = Dataset(inputs=np.array([[1.0], [-1.0]]), labels=np.array([1, -1]))
    net = init_network(Architecture((1, 1, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(70))
    net.weights[0][0, 0] = 1.0
    net.weights[1][0, 0] = 2.0
    res = evaluate(net, ds, LossKind.EXP_MARGIN)
    assert res.accuracy == 1.0
    again = evaluate(net, ds, LossKind.EXP_MARGIN)
    assert res == again


def test_evaluate_random_labels_near_chance():
    rng = Rng(71)
    inputs = rng.uniform(4000, 5, -1.0, 1.0)
    labels = np.where(np.asarray(rng.integers(0, 2, size=4000)) == 0, -1, 1)
    ds = Dataset(inputs=inputs, labels=labels)
    net = init_network(Architecture((5, 6, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(72))
    res = evaluate(net, ds, LossKind.EXP_MARGIN)
    assert abs(res.accuracy - 0.5) < 0.05


def test_multiclass_accuracy_uses_argmax():
    ds = Dataset(inputs=np.array([[1.0, 0.0], [0.0, 1.0]]), labels=np.array([0, 1]))
    net = init_network(Architecture((2, 2, 2)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(73))
    net.weights[0][:] = np.eye(2)
    net.weights[1][:] = np.eye(2) * 5.0
    res = evaluate(net, ds, LossKind.CROSS_ENTROPY)
    assert res.accuracy == 1.0


def test_exp_loss_requires_scalar_output():
    ds = Dataset(inputs=np.ones((3, 4)), labels=np.array([1, -1, 1]))
    net = init_network(Architecture((4, 3, 2)), InitStrategy.UNIFORM_SCALED,
                       Rule.FA, Rng(74))
    with pytest.raises(ValueError):
        train(net, ds, cfg_for(Rule.FA))
