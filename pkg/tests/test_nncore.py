import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_net, separable_dataset
from eivuq.datagen import Dataset
from eivuq.errors import DataError, TrainingDivergedError
from eivuq.nncore import (Network, NetworkSpec, TrainConfig, accuracy, forward_logits, gradient,
                          init_network, logistic, loss, predict_proba, train, train_with_history)


def zero_net(input_dim=3, hidden=(4,)):
    spec = NetworkSpec(input_dim=input_dim, hidden_layers=hidden)
    return Network(spec, tuple(np.zeros_like(p) for p in init_network(spec).params))


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        np.testing.assert_array_equal(forward_logits(zero_net(), [1.0, -2.0, 3.0]), [0.0, 0.0])

    def test_single_linear_layer_matches_hand_product(self):
        # z_k = sum_i x_i W[i, k] + b_k
        net = linear_net([[2.0, -1.0], [0.5, 3.0]], bias=(0.25, -0.5))
        np.testing.assert_array_equal(forward_logits(net, [1.0, 0.0]), [2.25, -1.5])
        np.testing.assert_array_equal(forward_logits(net, [1.0, 2.0]), [3.25, 4.5])

    def test_hidden_layer_by_hand(self):
        spec = NetworkSpec(input_dim=2, hidden_layers=(2,))
        w1 = np.array([[1.0, -1.0], [2.0, 1.0]])
        b1 = np.array([0.0, -0.5])
        w2 = np.array([[1.0, 0.0], [0.0, 2.0]])
        net = Network(spec, (w1, b1, w2, np.zeros(2)))
        # x=(1,1): pre = (3, -0.5) -> relu (3, 0) -> logits (3, 0)
        np.testing.assert_array_equal(forward_logits(net, [1.0, 1.0]), [3.0, 0.0])

    def test_zero_rate_dropout_is_a_no_op(self):
        net = init_network(NetworkSpec(input_dim=3, hidden_layers=(5, 4), seed=1))
        x = np.array([0.3, -1.2, 2.0])
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(forward_logits(net, x, True, rng), forward_logits(net, x))

    def test_dropout_scaling(self):
        spec = NetworkSpec(input_dim=1, hidden_layers=(1,), dropout_rate=0.5)
        net = Network(spec, (np.ones((1, 1)), np.zeros(1), np.array([[0.0, 1.0]]), np.zeros(2)))
        rng = np.random.default_rng(3)
        z1 = forward_logits(net, np.ones((200, 1)), True, rng)[:, 1]
        assert set(np.unique(z1)) <= {0.0, 2.0}
        assert 0 < (z1 == 2.0).sum() < 200

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            forward_logits(zero_net(), [1.0, 2.0])

    def test_non_finite_input(self):
        with pytest.raises(DataError):
            forward_logits(zero_net(), [1.0, np.nan, 0.0])

    def test_batch_and_single_agree(self):
        net = init_network(NetworkSpec(input_dim=3, seed=4))
        x = np.random.default_rng(1).normal(size=(5, 3))
        batch = forward_logits(net, x)
        for i in range(5):
            np.testing.assert_allclose(forward_logits(net, x[i]), batch[i], rtol=1e-14)


class TestProbabilities:
    def test_symmetric_logits(self):
        np.testing.assert_array_equal(predict_proba(zero_net(), [0.0, 0.0, 0.0]), [0.5, 0.5])

    def test_logit_gap_of_two(self):
        net = linear_net(np.zeros((1, 2)), bias=(0.0, 2.0))
        assert predict_proba(net, [0.0])[1] == pytest.approx(0.8807970779778823, abs=1e-15)

    def test_saturation(self):
        net = linear_net(np.zeros((1, 2)), bias=(1000.0, -1000.0))
        p = predict_proba(net, [0.0])
        assert p[1] == 0.0 and p[0] == 1.0

    @given(st.floats(-700, 700), st.floats(-700, 700))
    def test_probabilities_sum_to_one(self, a, b):
        net = linear_net(np.zeros((1, 2)), bias=(a, b))
        p = predict_proba(net, [0.0])
        assert abs(p.sum() - 1.0) <= 1e-12
        assert 0.0 <= p[1] <= 1.0

    def test_logistic_symmetry_is_exact(self):
        x = np.linspace(-30, 30, 1001)
        np.testing.assert_array_equal(logistic(x) + logistic(-x), 1.0)


class TestDerivativeIdentities:
    """The first and second derivatives of the logistic in closed form."""

    grid = np.linspace(-6.0, 6.0, 20)

    def test_first_derivative(self):
        h = 1e-5
        s = logistic(self.grid)
        numeric = (logistic(self.grid + h) - logistic(self.grid - h)) / (2 * h)
        np.testing.assert_allclose(s * (1 - s), numeric, rtol=1e-6)

    def test_second_derivative(self):
        h = 1e-3
        s = logistic(self.grid)
        numeric = (logistic(self.grid + h) - 2 * s + logistic(self.grid - h)) / h**2
        np.testing.assert_allclose(s * (1 - s) * (1 - 2 * s), numeric, rtol=1e-6)

    def test_second_derivative_from_first(self):
        h = 1e-4
        s = logistic(self.grid)
        first = lambda d: logistic(d) * (1 - logistic(d))
        numeric = (first(self.grid + h) - first(self.grid - h)) / (2 * h)
        np.testing.assert_allclose(s * (1 - s) * (1 - 2 * s), numeric, rtol=1e-6)

    def test_cross_derivative_sign(self):
        # d sigma1 / d z0 = -sigma1 * sigma0 with sigma1 = logistic(z1 - z0)
        z0, z1, h = 0.3, 1.1, 1e-6
        numeric = (logistic(z1 - (z0 + h)) - logistic(z1 - (z0 - h))) / (2 * h)
        s1 = logistic(z1 - z0)
        assert numeric == pytest.approx(-s1 * (1 - s1), rel=1e-8)


def numeric_gradient(net, x, y, h=1e-5):
    out = []
    for k, p in enumerate(net.params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in net.params]
            minus = [q.copy() for q in net.params]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (loss(Network(net.spec, tuple(plus)), x, y)
                      - loss(Network(net.spec, tuple(minus)), x, y)) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)
        worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst


class TestGradient:
    @pytest.mark.parametrize("hidden", [(3,), (8, 4), (16,)])
    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_matches_finite_differences(self, hidden, activation):
        spec = NetworkSpec(input_dim=4, hidden_layers=hidden, activation=activation, seed=17)
        net = init_network(spec)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(12, 4))
        y = rng.integers(0, 2, size=12)
        err = max_relative_error(gradient(net, (x, y)), numeric_gradient(net, x, y))
        assert err <= 1e-4

    def test_zero_net_balanced_batch_bias_symmetry(self):
        net = zero_net(input_dim=2, hidden=(3,))
        g = gradient(net, (np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1])))
        out_bias = g[-1]
        assert out_bias[0] == -out_bias[1]
        # softmax is 0.5 at zero logits, balanced labels cancel exactly
        assert out_bias[0] == 0.0

    def test_zero_net_unbalanced_bias_gradient(self):
        net = zero_net(input_dim=2, hidden=(3,))
        g = gradient(net, (np.zeros((2, 2)), np.array([1, 1])))
        np.testing.assert_allclose(g[-1], [0.5, -0.5])

    def test_stationary_at_perfect_fit(self):
        net = linear_net([[-40.0, 40.0], [0.0, 0.0]])
        x = np.array([[1.0, 0.0], [2.0, 1.0], [-1.0, 0.0], [-3.0, 2.0]])
        y = np.array([1, 1, 0, 0])
        assert loss(net, x, y) < 1e-12
        assert max(np.abs(g).max() for g in gradient(net, (x, y))) <= 1e-6

    def test_label_mismatch(self):
        with pytest.raises(DataError):
            gradient(zero_net(), (np.zeros((2, 3)), np.array([0])))


class TestTrain:
    def test_separable_reaches_high_accuracy(self, separable):
        net = init_network(NetworkSpec(input_dim=2, hidden_layers=(8,), seed=2))
        cfg = TrainConfig(epochs=200, batch_size=16, learning_rate=0.01,
                          validation_fraction=0.0, seed=3)
        assert accuracy(train(net, separable, cfg), separable) >= 0.99

    def test_zero_epochs_returns_initial_network(self, separable):
        net = init_network(NetworkSpec(input_dim=2, seed=2))
        out = train(net, separable, TrainConfig(epochs=0))
        for a, b in zip(out.params, net.params):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self, separable):
        net = init_network(NetworkSpec(input_dim=2, seed=9))
        cfg = TrainConfig(epochs=15, seed=4)
        a, b = train(net, separable, cfg), train(net, separable, cfg)
        for p, q in zip(a.params, b.params):
            assert p.tobytes() == q.tobytes()

    def test_loss_non_increasing_full_batch_sgd(self):
        data = separable_dataset(n=200, seed=1)
        net = init_network(NetworkSpec(input_dim=2, hidden_layers=(8, 4), seed=6))
        cfg = TrainConfig(epochs=50, batch_size=200, learning_rate=0.01, optimizer="sgd",
                          validation_fraction=0.0, seed=1)
        _, hist = train_with_history(net, data, cfg)
        assert len(hist.train_loss) == 50
        assert all(b <= a for a, b in zip(hist.train_loss, hist.train_loss[1:]))

    def test_single_class_warns(self):
        data = Dataset(features=np.random.default_rng(0).normal(size=(20, 2)),
                       labels=np.ones(20, dtype=int))
        net = init_network(NetworkSpec(input_dim=2, seed=0))
        with pytest.warns(RuntimeWarning, match="single class"):
            _, hist = train_with_history(net, data, TrainConfig(epochs=2, batch_size=4))
        assert hist.warnings

    def test_divergence_raises_with_epoch(self, separable):
        big = NetworkSpec(input_dim=2, hidden_layers=(8,), seed=0)
        net = init_network(big)
        cfg = TrainConfig(epochs=20, batch_size=200, learning_rate=1e300, optimizer="sgd",
                          validation_fraction=0.0)
        with pytest.raises(TrainingDivergedError) as info, np.errstate(all="ignore"):
            train(net, separable, cfg)
        assert info.value.epoch >= 0

    def test_early_stopping_restores_best(self, separable):
        net = init_network(NetworkSpec(input_dim=2, seed=1))
        cfg = TrainConfig(epochs=300, batch_size=8, learning_rate=0.05, validation_fraction=0.3,
                          early_stopping_patience=3, seed=2)
        _, hist = train_with_history(net, separable, cfg)
        assert hist.best_epoch == int(np.argmin(hist.val_loss))


class TestSerialization:
    def test_round_trip_is_exact(self, tmp_path):
        net = init_network(NetworkSpec(input_dim=5, hidden_layers=(7, 3), activation="tanh",
                                       seed=123))
        net.save(tmp_path / "net.json")
        back = Network.load(tmp_path / "net.json")
        assert back.spec == net.spec
        for a, b in zip(back.params, net.params):
            assert a.tobytes() == b.tobytes()

    def test_rejects_foreign_document(self):
        with pytest.raises(ValueError):
            Network.from_dict({"format": "other"})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**64 - 1))
def test_init_is_deterministic_and_bounded(seed):
    spec = NetworkSpec(input_dim=3, hidden_layers=(4,), seed=seed)
    a, b = init_network(spec), init_network(spec)
    fan_ins = [3, 3, 4, 4]
    for p, q, fan_in in zip(a.params, b.params, fan_ins):
        assert p.tobytes() == q.tobytes()
        assert np.abs(p).max() <= 1 / np.sqrt(fan_in)
