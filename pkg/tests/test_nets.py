import numpy as np
import pytest

from pullsim import autodiff as ad
from pullsim.nets import (AdamState, DivergenceError, EarlyStop, Mlp, adam_step, load_mlp,
                          mlp_forward, save_mlp, train_loop)


def reference_forward(weights, biases, x):
    """Independent forward pass: plain loops over layers."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h.dot(w) + b.ravel()
        if i < len(weights) - 1:
            h = np.where(h > 0, h, 0.0)
    return h


def test_param_count_formula():
    net = Mlp.init((4, 128, 128, 128, 2), np.random.default_rng(0))
    sizes = net.layer_sizes
    assert net.n_params == sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def test_zero_net_outputs_zero():
    net = Mlp.init((3, 5, 2), np.random.default_rng(0))
    net = net.with_params([np.zeros_like(p) for p in net.params()])
    np.testing.assert_array_equal(mlp_forward(net, [1.0, -2.0, 3.0]), [0.0, 0.0])


def test_identity_single_layer():
    net = Mlp((2, 2), [np.eye(2)], [np.zeros((1, 2))])
    np.testing.assert_array_equal(mlp_forward(net, [1.0, 2.0]), [1.0, 2.0])


def test_forward_matches_independent_reference():
    rng = np.random.default_rng(42)
    net = Mlp.init((4, 128, 128, 128, 2), rng)
    for i in range(len(net.biases)):
        net.biases[i] = rng.normal(size=net.biases[i].shape)
    x = np.array([0.3, -1.2, 2.5, 0.01])
    np.testing.assert_allclose(mlp_forward(net, x),
                               reference_forward(net.weights, net.biases, x), rtol=1e-12)


def test_input_dimension_mismatch():
    net = Mlp.init((4, 8, 2), np.random.default_rng(0))
    with pytest.raises(ValueError, match="expects 4"):
        mlp_forward(net, [1.0, 2.0])


def test_invalid_layer_shapes_rejected():
    with pytest.raises(ValueError):
        Mlp((2, 3), [np.zeros((3, 3))], [np.zeros((1, 3))])


def test_zero_output_init():
    net = Mlp.init((4, 8, 2), np.random.default_rng(0), zero_output=True)
    np.testing.assert_array_equal(net.forward(np.ones((3, 4))), np.zeros((3, 2)))


def test_adam_zero_gradient_keeps_params():
    p = [np.array([[1.0, -2.0]])]
    new = adam_step(AdamState(), p, [np.zeros((1, 2))])
    np.testing.assert_array_equal(new[0], p[0])


def test_adam_first_step():
    new = adam_step(AdamState(0.001, 0.9, 0.999, 1e-8), [np.array(0.0)], [np.array(1.0)])
    assert new[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_monotone_under_constant_gradient():
    state, p = AdamState(), [np.array([0.0])]
    trace = []
    for _ in range(10):
        p = adam_step(state, p, [np.array([2.0])])
        trace.append(p[0][0])
    assert np.all(np.diff(trace) < 0)


def test_adam_nan_names_block():
    with pytest.raises(FloatingPointError, match="W2"):
        adam_step(AdamState(), [np.zeros(2), np.zeros(2)], [np.zeros(2), np.array([0, np.nan])],
                  ["W1", "W2"])


def test_adam_per_block_learning_rates():
    new = adam_step(AdamState([1e-3, 1e-1]), [np.array(0.0), np.array(0.0)],
                    [np.array(1.0), np.array(1.0)])
    assert new[0] == pytest.approx(-1e-3)
    assert new[1] == pytest.approx(-1e-1)


def test_early_stop_best_loss_non_increasing():
    es = EarlyStop(patience=3)
    best = []
    for i, loss in enumerate([5.0, 4.0, 4.5, 3.0, 3.5, 3.6, 3.7]):
        stop = es.update(loss, [np.array(float(i))], i)
        best.append(es.best_loss)
    assert np.all(np.diff(best) <= 0)
    assert stop and es.best_iter == 3
    assert es.best_params[0] == 3.0


def _linear_loss(params, data):
    X, y = data
    return ad.mean(ad.square(X @ params[0] - y))


class _Data:
    def __init__(self, X, y):
        self.X, self.y = X, y

    def __len__(self):
        return len(self.X)

    def __iter__(self):
        return iter((self.X, self.y))


def test_train_loop_zero_loss_returns_initial_params():
    X = np.ones((4, 1))
    data = _Data(X, 2.0 * X)
    best, history = train_loop([np.array([[2.0]])], _linear_loss, data, data, max_iters=100,
                               early_stop=EarlyStop(patience=1))
    assert best[0][0, 0] == 2.0
    assert history[0][2] == 0.0


def test_train_loop_fits_linear_target():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(64, 1))
    Xv = rng.uniform(-1, 1, size=(32, 1))
    net = Mlp.init((1, 16, 1), rng)

    def loss(params, data):
        Xd, yd = data
        return ad.mean(ad.square(net.forward(Xd, params) - yd))

    best, history = train_loop(net.params(), loss, _Data(X, 2 * X), _Data(Xv, 2 * Xv),
                               max_iters=1000, optimizer=AdamState(1e-2))
    assert float(loss(best, _Data(Xv, 2 * Xv))[0, 0]) < 1e-3


def test_train_loop_stops_early_with_best_snapshot():
    X = np.linspace(-1, 1, 20).reshape(-1, 1)
    train, val = _Data(X, 2 * X), _Data(X, -2 * X)
    best, history = train_loop([np.array([[0.0]])], _linear_loss, train, val, max_iters=1000,
                               early_stop=EarlyStop(patience=5), optimizer=AdamState(0.05))
    assert len(history) == 6
    assert best[0][0, 0] == 0.0
    vals = [h[2] for h in history]
    assert min(vals) == vals[0]


def test_train_loop_rejects_empty_data():
    with pytest.raises(ValueError, match="empty"):
        train_loop([np.zeros((1, 1))], _linear_loss, _Data(np.zeros((0, 1)), np.zeros((0, 1))))


def test_train_loop_divergence_reports_iteration():
    def bad(params, data):
        return params[0] * np.nan

    with pytest.raises(DivergenceError, match="iteration 0"):
        train_loop([np.ones((1, 1))], bad, _Data(np.ones((1, 1)), np.ones((1, 1))))


def test_training_is_deterministic():
    def run():
        rng = np.random.default_rng(7)
        net = Mlp.init((1, 8, 1), rng)
        X = rng.normal(size=(16, 1))

        def loss(params, data):
            return ad.mean(ad.square(net.forward(data.X, params) - data.y))

        return train_loop(net.params(), loss, _Data(X, X ** 2), max_iters=50)[0]

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_roundtrip(tmp_path):
    net = Mlp.init((4, 8, 2), np.random.default_rng(1))
    stats = {"x_mean": np.arange(4.0)}
    save_mlp(tmp_path / "net.json", net, stats)
    loaded, loaded_stats = load_mlp(tmp_path / "net.json")
    for a, b in zip(net.params(), loaded.params()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(loaded_stats["x_mean"], stats["x_mean"])
