import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from falign.linalg import Rng, ShapeError
from falign.network import (Architecture, InitStrategy, NetworkState, forward,
                            init_network, leaky_relu, leaky_relu_prime,
                            load_checkpoint, save_checkpoint)
from falign.rules import Rule


def hand_net(w1=2.0, w2=3.0, b2=1.5, slope=0.01, rule=Rule.FA):
    feedback = None if rule is Rule.BP else [None, np.array([[b2]])]
    return NetworkState(weights=[np.array([[w1]]), np.array([[w2]])],
                        feedback=feedback, leaky_slope=slope, rule=rule)


def test_architecture_validation():
    with pytest.raises(ValueError):
        Architecture((4, 1))  # no hidden layer
    with pytest.raises(ValueError):
        Architecture((4, 0, 1))
    with pytest.raises(ValueError):
        Architecture((4, 3, 1), leaky_slope=1.0)
    arch = Architecture((4, 3, 1), leaky_slope=0.01)
    assert arch.n_layers == 2 and arch.scalar_output


def test_leaky_relu_values_and_zero_convention():
    assert leaky_relu(2.0, 0.01) == 2.0
    assert leaky_relu(-1.0, 0.01) == pytest.approx(-0.01)
    assert leaky_relu(0.0, 0.01) == 0.0
    assert leaky_relu_prime(2.0, 0.01) == 1.0
    assert leaky_relu_prime(-1.0, 0.01) == 0.01
    assert leaky_relu_prime(0.0, 0.01) == 0.01  # subgradient fixed at the slope


def test_forward_hand_chain():
    net = hand_net()
    out, trace = forward(net, [[1.0]])
    assert trace.pre[0][0, 0] == 2.0
    assert trace.acts[0][0, 0] == 2.0
    assert out[0, 0] == 6.0
    out, _ = forward(net, [[-1.0]])
    assert out[0, 0] == pytest.approx(-0.06)


def test_forward_zero_input_gives_zero_output():
    net = init_network(Architecture((5, 4, 3, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(3))
    out, _ = forward(net, np.zeros((2, 5)))
    assert np.all(out == 0.0)


@settings(max_examples=30)
@given(st.floats(min_value=0.1, max_value=10.0))
def test_forward_positive_homogeneity(lam):
    net = init_network(Architecture((4, 6, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(11))
    x = Rng(12).uniform(3, 4, -1.0, 1.0)
    base, _ = forward(net, x)
    scaled, _ = forward(net, lam * x)
    assert np.abs(scaled - lam * base).max() <= 1e-10 * max(1.0, np.abs(scaled).max())


def test_gate_mask_consistency():
    net = init_network(Architecture((6, 5, 4, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(13))
    _, trace = forward(net, Rng(14).uniform(8, 6, -1.0, 1.0))
    for h, a, g in zip(trace.pre, trace.acts, trace.gates):
        assert np.array_equal(a, h * g)
        assert set(np.unique(g)).issubset({net.leaky_slope, 1.0})


def test_forward_bit_identical_reruns():
    net = init_network(Architecture((6, 5, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(15))
    x = Rng(16).uniform(4, 6, -1.0, 1.0)
    a, _ = forward(net, x)
    b, _ = forward(net, x)
    assert np.array_equal(a, b)


def test_forward_shape_error():
    net = init_network(Architecture((6, 5, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(15))
    with pytest.raises(ShapeError):
        forward(net, np.ones((2, 7)))


def test_init_adafa_feedback_equals_weights():
    net = init_network(Architecture((5, 8, 4, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.ADA_FA, Rng(20))
    for k in range(1, net.n_layers):
        assert np.array_equal(net.feedback[k], net.weights[k])


def test_init_signfa_feedback_is_sign():
    net = init_network(Architecture((5, 8, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.SIGN_FA, Rng(21))
    assert set(np.unique(net.feedback[1])).issubset({-1.0, 1.0})


def test_init_aligned_output_guarantees():
    net = init_network(Architecture((10, 15, 1)), InitStrategy.ALIGNED_OUTPUT,
                       Rule.FA, Rng(22))
    w_out = net.weights[-1]
    b_out = net.feedback[-1]
    assert float((w_out * b_out).sum()) == 15.0
    assert float((w_out ** 2).sum()) == 15.0
    col_norms = np.sqrt((net.weights[0] ** 2).sum(axis=0))
    assert np.all(col_norms < np.sqrt(2.0))


def test_init_aligned_output_rescales_large_columns():
    # deeper net with a wide layer below the output so some columns exceed norm 1
    net = init_network(Architecture((50, 80, 30, 1)), InitStrategy.ALIGNED_OUTPUT,
                       Rule.FA, Rng(23))
    col_norms = np.sqrt((net.weights[-2] ** 2).sum(axis=0))
    assert np.all(col_norms <= 1.0 + 1e-12)


def test_init_aligned_output_rejects_vector_output():
    with pytest.raises(ValueError):
        init_network(Architecture((10, 15, 3)), InitStrategy.ALIGNED_OUTPUT,
                     Rule.FA, Rng(22))


def test_init_uniform_scaled_bound_tracks_width():
    net = init_network(Architecture((784, 100, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(24))
    assert net.weights[0].max() < 0.1 and net.weights[0].min() >= -0.1
    assert np.abs(net.weights[1]).max() < 0.1


def test_init_xavier_bound():
    net = init_network(Architecture((30, 20, 1)), InitStrategy.XAVIER, Rule.BP, Rng(25))
    bound = np.sqrt(6.0 / 50.0)
    assert np.abs(net.weights[0]).max() < bound


def test_init_bp_has_no_feedback():
    net = init_network(Architecture((5, 4, 1)), InitStrategy.UNIFORM_SCALED,
                       Rule.BP, Rng(26))
    assert net.feedback is None


def test_network_state_shape_validation():
    with pytest.raises(ShapeError):
        NetworkState(weights=[np.ones((3, 4)), np.ones((5, 1))], feedback=None,
                     leaky_slope=0.01, rule=Rule.BP)
    with pytest.raises(ShapeError):
        NetworkState(weights=[np.ones((3, 4)), np.ones((4, 1))],
                     feedback=[None, np.ones((4, 2))], leaky_slope=0.01, rule=Rule.FA)


def test_checkpoint_round_trip_exact(tmp_path):
    net = init_network(Architecture((7, 6, 2), leaky_slope=0.05),
                       InitStrategy.UNIFORM_SCALED, Rule.FA, Rng(30))
    path = tmp_path / "net.json"
    save_checkpoint(net, path, seed=30, step=17)
    loaded, meta = load_checkpoint(path)
    assert meta == {"seed": 30, "step": 17}
    assert loaded.rule is Rule.FA
    assert loaded.leaky_slope == net.leaky_slope
    for a, b in zip(net.weights, loaded.weights):
        assert np.array_equal(a, b)
    for a, b in zip(net.feedback[1:], loaded.feedback[1:]):
        assert np.array_equal(a, b)


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "bogus.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        load_checkpoint(path)
