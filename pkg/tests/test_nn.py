import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_network, reference_forward
from distcl.nn import (Dataset, DenseLayer, Network, NetworkFormatError, TrainConfig,
                       TrainingDiverged, dumps_network, forward, forward_batch, gaussian_nll,
                       gradient_check, load_dataset, load_network, loads_network,
                       loss_and_grad, mean_nll, save_dataset, save_network, split_indices,
                       train)


def identity_net(d=3, eps=1e-3):
    eye = np.eye(d)
    head = np.ones((1, d))
    return Network([DenseLayer(eye, np.zeros(d))], DenseLayer(head, [0.0]),
                   DenseLayer(head, [0.0]), np.zeros(d), np.ones(d), eps)


def linear_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, n)
    return Dataset(x[:, None], 2 * x, ["x"], [0], "y")


def test_zero_input_gives_floor():
    net = identity_net(eps=1e-3)
    mu, sigma = forward(net, np.zeros(3))
    assert mu == 0.0 and sigma == 1e-3


def test_relu_clamps_negative_preactivation():
    net = Network([DenseLayer([[1.0]], [-2.0])], DenseLayer([[1.0]], [0.0]),
                  DenseLayer([[1.0]], [0.0]), [0.0], [1.0], 1e-3)
    mu, sigma = forward(net, [1.0])
    assert mu == 0.0 and sigma == 1e-3


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError, match="expects 3"):
        forward(identity_net(3), np.zeros(4))


def test_forward_matches_reference(rng):
    net = random_network(rng, 5, [8])
    X = rng.normal(0, 2, (100, 5))
    for x in X:
        got = forward(net, x)
        ref = reference_forward(net, x)
        assert got[0] == pytest.approx(ref[0], abs=1e-10)
        assert got[1] == pytest.approx(ref[1], abs=1e-10)


@pytest.mark.parametrize("build", [
    lambda: Network([DenseLayer(np.ones((2, 3)), np.zeros(2))], DenseLayer(np.ones((1, 2)), [0]),
                    DenseLayer(np.ones((1, 2)), [0]), np.zeros(2), np.ones(2)),
    lambda: Network([], DenseLayer([[1.0]], [0]), DenseLayer([[1.0]], [0]), [0.0], [0.0]),
    lambda: Network([], DenseLayer([[1.0]], [0]), DenseLayer([[1.0]], [0]), [0.0], [1.0], 0.0),
    lambda: DenseLayer([[np.nan]], [0.0]),
    lambda: DenseLayer([[1.0, 2.0]], [0.0, 1.0]),
])
def test_network_invariants(build):
    with pytest.raises(ValueError):
        build()


@pytest.mark.parametrize("y,mu,sigma,expected", [
    (0.0, 0.0, 1.0, 0.0),
    (1.0, 0.0, 1.0, 0.5),
    (1.0, 0.0, 2.0, 0.5 * (math.log(4.0) + 0.25)),
])
def test_gaussian_nll_values(y, mu, sigma, expected):
    assert gaussian_nll(y, mu, sigma) == pytest.approx(expected, abs=1e-15)


def test_gaussian_nll_third_value_by_hand():
    assert gaussian_nll(1.0, 0.0, 2.0) == pytest.approx(0.818147180559945, abs=1e-12)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_gaussian_nll_rejects_nonpositive_sigma(sigma):
    with pytest.raises(ValueError):
        gaussian_nll(0.0, 0.0, sigma)


def test_mean_nll_is_mean_of_pointwise(rng):
    net = random_network(rng, 3, [6])
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    mu, sigma = forward_batch(net, X)
    ref = np.mean([gaussian_nll(a, b, c) for a, b, c in zip(y, mu, sigma)])
    assert mean_nll(net, X, y) == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("widths", [[8], [4, 4], [8, 3]])
def test_gradient_check_random(widths):
    rng = np.random.default_rng(len(widths) * 10 + widths[0])
    net = random_network(rng, 4, widths)
    X = rng.normal(size=(20, 4))
    y = rng.normal(size=20)
    report = gradient_check(net, X, y)
    assert report.n_params == net.n_params()
    assert report.passed(1e-4), report


def test_zero_residual_gives_zero_mu_gradient():
    d, w = 3, 5
    net = Network([DenseLayer(np.zeros((w, d)), np.zeros(w))], DenseLayer(np.zeros((1, w)), [0.0]),
                  DenseLayer(np.zeros((1, w)), [1.0]), np.zeros(d), np.ones(d))
    X = np.random.default_rng(1).normal(size=(10, d))
    _, grads = loss_and_grad(net, X, np.zeros(10))
    mu_w, mu_b = grads[2], grads[3]
    assert np.all(mu_w == 0.0) and np.all(mu_b == 0.0)


def test_single_parameter_slope_matches_secant(rng):
    net = random_network(rng, 2, [3])
    X = rng.normal(size=(15, 2))
    y = rng.normal(size=15)
    _, grads = loss_and_grad(net, X, y)
    h = 1e-6
    probe = net.copy()
    p = probe.mu_head.weights
    p[0, 1] += h
    up = mean_nll(probe, X, y)
    p[0, 1] -= 2 * h
    dn = mean_nll(probe, X, y)
    assert grads[2][0, 1] == pytest.approx((up - dn) / (2 * h), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(0.01, 100.0))
def test_first_layer_positive_homogeneity(seed, c):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 3, [5])
    x = (rng.normal(size=3) - net.shift) / net.scale
    layer = net.layers[0]
    base = np.maximum(layer.weights @ x + layer.biases, 0)
    scaled = np.maximum((c * layer.weights) @ x + c * layer.biases, 0)
    assert np.allclose(scaled, c * base, rtol=1e-12, atol=1e-12)


def test_sigma_floor_over_many_inputs(rng):
    net = random_network(rng, 4, [8], epsilon=2e-3)
    net.sigma_head.biases[:] = -5.0
    _, sigma = forward_batch(net, rng.normal(0, 3, (10_000, 4)))
    assert sigma.min() >= 2e-3
    assert np.any(sigma == 2e-3)


def test_layout_name():
    assert TrainConfig(hidden_layers=1, neurons=20).name == "DNN(1,20)"
    rng = np.random.default_rng(0)
    assert random_network(rng, 3, [20]).name == "DNN(1,20)"


def test_linear_target_recovered():
    data = linear_data()
    # no hidden layer: the mean head is exactly linear in x
    cfg = TrainConfig(hidden_layers=0, neurons=0, epochs=100, seed=0)
    net, report = train(data, cfg)
    first = report.val_loss[:10]
    assert all(b < a for a, b in zip(first, first[1:]))
    grid = np.linspace(0.05, 0.95, 50)
    mu, _ = forward_batch(net, grid[:, None])
    assert np.max(np.abs(mu - 2 * grid)) < 0.05


def test_reported_train_loss_matches_split():
    data = linear_data(200, seed=2)
    cfg = TrainConfig(hidden_layers=1, neurons=6, epochs=15, learning_rate=5e-3, seed=4)
    net, report = train(data, cfg)
    tr, va = split_indices(len(data), cfg)
    assert report.n_train == tr.size and report.n_val == va.size
    ref = np.mean([gaussian_nll(y, *forward(net, x))
                   for x, y in zip(data.features[tr], data.targets[tr])])
    assert report.train_loss[report.best_epoch - 1] == pytest.approx(ref, abs=1e-9)
    assert report.best_val_loss == min(report.val_loss)


def test_training_is_deterministic(tmp_path):
    data = linear_data(150, seed=3)
    cfg = TrainConfig(hidden_layers=2, neurons=5, epochs=10, seed=11)
    save_network(train(data, cfg)[0], tmp_path / "a.txt")
    save_network(train(data, cfg)[0], tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


@pytest.mark.filterwarnings("ignore:.*encountered in matmul:RuntimeWarning")
def test_training_divergence_names_epoch():
    data = linear_data(100)
    cfg = TrainConfig(hidden_layers=2, neurons=8, epochs=50, learning_rate=1e200, seed=0)
    with pytest.raises(TrainingDiverged, match="epoch"):
        train(data, cfg)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        Dataset(np.empty((0, 2)), np.empty(0), ["a", "b"])


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset([[1.0, np.nan]], [1.0], ["a", "b"])
    with pytest.raises(ValueError):
        Dataset([[1.0, 2.0]], [1.0], ["a", "b"], [2])


def test_dataset_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = Dataset(rng.normal(size=(7, 3)), rng.normal(size=7), ["a", "price", "c"], [1], "load")
    save_dataset(data, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    assert back.column_names == data.column_names
    assert back.decision_columns == [1] and back.target_name == "load"
    assert np.array_equal(back.features, data.features)
    assert np.array_equal(back.targets, data.targets)


def test_weights_round_trip_bit_exact(tmp_path, rng):
    data = linear_data(120, seed=5)
    net, _ = train(data, TrainConfig(hidden_layers=2, neurons=6, epochs=5, seed=1))
    save_network(net, tmp_path / "w.txt")
    back = load_network(tmp_path / "w.txt")
    X = rng.uniform(-1, 2, (100, 1))
    assert np.array_equal(forward_batch(net, X)[0], forward_batch(back, X)[0])
    assert np.array_equal(forward_batch(net, X)[1], forward_batch(back, X)[1])
    assert back.input_names == ["x"]
    assert dumps_network(back) == dumps_network(net)


def test_weights_header_and_digits(rng):
    text = dumps_network(random_network(rng, 2, [3]))
    assert text.splitlines()[0] == "DISTCL-NET v1"
    assert "0.33333333333333331" in dumps_network(
        Network([], DenseLayer([[1 / 3, 0.0]], [0.0]), DenseLayer([[0.0, 0.0]], [0.0]),
                [0.0, 0.0], [1.0, 1.0]))


def test_load_rejects_negative_scale(rng):
    text = dumps_network(random_network(rng, 2, [3]))
    lines = text.splitlines()
    k = next(i for i, ln in enumerate(lines) if ln.startswith("scaler_scale"))
    lines[k] = "scaler_scale -1 1"
    with pytest.raises(NetworkFormatError, match="scaler_scale"):
        loads_network("\n".join(lines))


def test_load_truncated_names_missing_section(rng):
    text = dumps_network(random_network(rng, 2, [3]))
    cut = text[: text.index("sigma_head")]
    with pytest.raises(NetworkFormatError, match="sigma_head"):
        loads_network(cut)


def test_load_rejects_other_version(rng):
    text = dumps_network(random_network(rng, 2, [3])).replace("v1", "v2", 1)
    with pytest.raises(NetworkFormatError, match="version"):
        loads_network(text)


def test_load_bad_number_reports_line(rng):
    lines = dumps_network(random_network(rng, 2, [3])).splitlines()
    k = next(i for i, ln in enumerate(lines) if ln.startswith("layer 0"))
    lines[k + 1] = "1.0 abc"
    with pytest.raises(NetworkFormatError, match=f"line {k + 2}"):
        loads_network("\n".join(lines))
