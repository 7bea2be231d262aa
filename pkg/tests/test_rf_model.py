import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rfquant.errors import DimMismatch, EmptyDims, NonOddActivation, ZeroDim
from rfquant.rf_model import (
    ActivationKind,
    build_network,
    forward,
    make_labels,
    network_from_matrices,
    predict,
    quantize,
    sample_ground_truth,
)


def test_rademacher_entries_are_scaled_signs():
    net = build_network([2, 2], "identity", "rademacher", seed=3)
    W = net.layers[0].dense()
    assert set(np.unique(np.abs(W))) == {0.7071067811865475}


def test_gaussian_is_deterministic_and_seed_sensitive():
    a = build_network([64, 32], "tanh", "gaussian", seed=9).layers[0].dense()
    b = build_network([64, 32], "tanh", "gaussian", seed=9).layers[0].dense()
    c = build_network([64, 32], "tanh", "gaussian", seed=10).layers[0].dense()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("kind", ["gaussian", "rademacher"])
def test_second_moment_matches(kind):
    W = build_network([4096, 4096], "tanh", kind, seed=1).layers[0].dense()
    assert abs(np.mean(W * W) * 4096 - 1.0) < 0.05


def test_rademacher_is_sign_of_same_seed_gaussian():
    g = build_network([100, 70, 50], "tanh", "gaussian", seed=5)
    r = build_network([100, 70, 50], "tanh", "rademacher", seed=5)
    for lg, lr in zip(g.layers, r.layers):
        Wg = lg.dense()
        assert np.array_equal(lr.dense(), np.where(Wg >= 0, 1.0, -1.0) / np.sqrt(Wg.shape[1]))


def test_bad_dims():
    with pytest.raises(EmptyDims):
        build_network([5])
    with pytest.raises(ZeroDim):
        build_network([5, 0])


def test_relu_is_gated():
    with pytest.raises(NonOddActivation):
        build_network([4, 4], "relu")
    net = build_network([4, 4], "relu", allow_non_odd=True)
    assert not net.activation.odd


def test_identity_network_examples():
    net = network_from_matrices([np.eye(2)], "identity")
    assert np.array_equal(forward(net, np.array([3.0, -1.0])), [3.0, -1.0])
    assert predict(net, np.array([1.0, 1.0]), np.array([[3.0, -1.0]]))[0] == 2.0
    assert np.array_equal(make_labels(net, np.array([1.0, 0.0]), np.array([[3.0, -1.0]])), [3.0])


def test_tanh_hand_example():
    W = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    out = forward(network_from_matrices([W], "tanh"), np.array([1.0, 0.0]))
    assert np.allclose(out, np.tanh(1 / np.sqrt(2)) * np.ones(2), atol=1e-15)
    assert np.allclose(out, 0.60885, atol=1e-5)


def test_forward_dim_mismatch():
    net = build_network([4, 3], "tanh")
    with pytest.raises(DimMismatch):
        forward(net, np.ones((2, 5)))
    with pytest.raises(DimMismatch):
        predict(net, np.ones(4), np.ones((2, 4)))


def test_packed_forward_matches_dense_sign_forward(rng):
    g = build_network([300, 130, 65], "tanh", "gaussian", seed=2)
    packed = quantize(g, packed=True)
    dense = quantize(g, packed=False)
    X = rng.standard_normal((100, 300))
    assert np.max(np.abs(forward(packed, X) - forward(dense, X))) <= 1e-10 * 300


def test_return_all_layers():
    net = build_network([6, 5, 4], "tanh", seed=0)
    outs = forward(net, np.ones((2, 6)), return_all=True)
    assert [o.shape[1] for o in outs] == [6, 5, 4]
    assert np.array_equal(outs[-1], forward(net, np.ones((2, 6))))


@given(st.floats(-50, 50, allow_nan=False))
def test_odd_activations_are_odd(z):
    for kind in ActivationKind:
        if kind.odd:
            assert kind(np.array(-z)) == -kind(np.array(z))


def test_scaled_erf_slope_and_lipschitz():
    h = 1e-6
    slope = (ActivationKind.SCALED_ERF(np.array(h)) - ActivationKind.SCALED_ERF(np.array(-h))) / (2 * h)
    assert abs(slope - np.sqrt(2 / np.pi)) < 1e-9
    for kind in ActivationKind:
        assert kind.lipschitz <= 1.0


def test_ground_truth_variance():
    a = sample_ground_truth(20000, 4).a_star
    assert abs(np.var(a) * 20000 - 1.0) < 0.03
    assert np.array_equal(a, sample_ground_truth(20000, 4).a_star)
