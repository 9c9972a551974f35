import math
import warnings

import numpy as np
import pytest

from gasforecast.errors import DataError, NumericError
from gasforecast.recurrent import (
    GruCellParams,
    LstmCellParams,
    RecurrentLayer,
    RecurrentNetwork,
    TrainConfig,
    bilstm_forward,
    gradient_check,
    gru_step,
    lstm_step,
    sigmoid,
    train,
)


def zero_lstm(F=3, H=4):
    return LstmCellParams(np.zeros((4 * H, F)), np.zeros((4 * H, H)), np.zeros(4 * H))


def zero_gru(F=3, H=4):
    return GruCellParams(np.zeros((3 * H, F)), np.zeros((3 * H, H)), np.zeros(3 * H))


def zero_network(kind="lstm", F=3, H=4):
    net = RecurrentNetwork.build(kind, F, hidden_size=H, num_layers=2, dropout=0.0)
    for p in net.parameters().values():
        p[...] = 0.0
    return net


def sine_windows(n=40, L=8):
    s = np.sin(np.arange(n + L) * 0.5)
    x = np.stack([s[k : k + L] for k in range(n)])[:, :, None]
    return x, s[L : L + n]


class TestLstmStep:
    def test_zero(self):
        h, c = lstm_step(zero_lstm(), np.ones(3), np.zeros(4), np.zeros(4))
        assert np.all(h == 0) and np.all(c == 0)

    def test_forget_bias_keeps_cell(self):
        p = zero_lstm()
        p.b[4:8] = 10.0
        _, c = lstm_step(p, np.zeros(3), np.zeros(4), np.ones(4))
        expected = 1.0 / (1.0 + math.exp(-10.0))
        np.testing.assert_allclose(c, expected, rtol=0, atol=1e-15)
        assert abs(c[0] - 0.99995) < 1e-5

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            lstm_step(zero_lstm(), np.zeros(2), np.zeros(4), np.zeros(4))
        with pytest.raises(DataError):
            lstm_step(zero_lstm(), np.zeros(3), np.zeros(5), np.zeros(5))

    def test_matches_formula(self):
        rng = np.random.default_rng(1)
        p = LstmCellParams(rng.normal(size=(8, 3)), rng.normal(size=(8, 2)), rng.normal(size=8))
        x, h0, c0 = rng.normal(size=3), rng.normal(size=2), rng.normal(size=2)
        a = p.W @ x + p.U @ h0 + p.b
        s = lambda v: 1 / (1 + np.exp(-v))
        i, f, o, g = s(a[0:2]), s(a[2:4]), s(a[4:6]), np.tanh(a[6:8])
        c = f * c0 + i * g
        h, c_out = lstm_step(p, x, h0, c0)
        np.testing.assert_allclose(c_out, c, rtol=1e-14)
        np.testing.assert_allclose(h, o * np.tanh(c), rtol=1e-14)


class TestGruStep:
    def test_zero_fixed_point(self):
        assert np.all(gru_step(zero_gru(), np.ones(3), np.zeros(4)) == 0)

    def test_half_decay(self):
        v = np.array([1.0, -2.0, 3.0, 0.5])
        np.testing.assert_array_equal(gru_step(zero_gru(), np.zeros(3), v), 0.5 * v)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            gru_step(zero_gru(), np.zeros(4), np.zeros(4))


class TestActivations:
    def test_sigmoid_open_interval(self):
        x = np.linspace(-30, 30, 10001)
        s = sigmoid(x)
        assert np.all(s > 0) and np.all(s < 1)

    def test_no_overflow_at_700(self):
        rng = np.random.default_rng(0)
        p = LstmCellParams(rng.normal(size=(16, 3)) * 200, rng.normal(size=(16, 4)), rng.normal(size=16))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            h, c = lstm_step(p, np.full(3, 1.0), np.ones(4), np.ones(4))
            g = gru_step(GruCellParams(np.full((12, 3), 233.0), np.zeros((12, 4)), np.zeros(12)), -np.ones(3), np.ones(4))
            s = sigmoid(np.array([-700.0, 700.0]))
        assert np.all(np.isfinite(h)) and np.all(np.isfinite(c)) and np.all(np.isfinite(g))
        assert np.all(np.isfinite(s))

    def test_hidden_state_bounded(self):
        rng = np.random.default_rng(3)
        net = RecurrentNetwork.build("lstm", 3, hidden_size=5, num_layers=1, dropout=0.0, seed=3)
        out, _ = net.layers[0].forward(rng.normal(size=(4, 7, 3)) * 5)
        assert np.all(np.abs(out) < 1)


class TestBiLstm:
    def test_width(self):
        net = RecurrentNetwork.build("bilstm", 3, hidden_size=4, num_layers=1, dropout=0.0)
        out = bilstm_forward(net.layers[0], np.ones((5, 3)))
        assert out.shape == (5, 8)

    def test_time_reversal_symmetry(self):
        rng = np.random.default_rng(7)
        net = RecurrentNetwork.build("bilstm", 3, hidden_size=4, num_layers=1, dropout=0.0, seed=7)
        layer = net.layers[0]
        layer.cells[1] = layer.cells[0]
        x = rng.normal(size=(6, 3))
        out = bilstm_forward(layer, x)
        out_rev = bilstm_forward(layer, x[::-1])
        np.testing.assert_allclose(out[:, :4], out_rev[::-1, 4:], rtol=0, atol=1e-15)

    def test_zero_params(self):
        net = zero_network("bilstm")
        assert np.all(bilstm_forward(net.layers[0], np.ones((5, 3))) == 0)

    def test_empty_window(self):
        net = RecurrentNetwork.build("bilstm", 3, hidden_size=4, num_layers=1)
        with pytest.raises(DataError):
            bilstm_forward(net.layers[0], np.zeros((0, 3)))

    def test_dropout_only_when_training(self):
        net = RecurrentNetwork.build("bilstm", 3, hidden_size=4, num_layers=1, dropout=0.5, seed=1)
        x = np.ones((5, 3))
        a = bilstm_forward(net.layers[0], x)
        b = bilstm_forward(net.layers[0], x)
        assert a.tobytes() == b.tobytes()
        c = bilstm_forward(net.layers[0], x, training=True, rng=np.random.default_rng(0))
        assert not np.array_equal(a, c)
        assert set(np.unique(np.round(c[a != 0] / a[a != 0], 12))) <= {0.0, 2.0}


class TestNetwork:
    @pytest.mark.parametrize("kind", ["lstm", "gru", "bilstm"])
    def test_zero_network_predicts_zero(self, kind):
        assert zero_network(kind).forward(np.ones((5, 3))) == 0.0

    @pytest.mark.parametrize("kind", ["lstm", "gru", "bilstm"])
    def test_inference_deterministic(self, kind):
        net = RecurrentNetwork.build(kind, 3, hidden_size=4, dropout=0.3, seed=2)
        x = np.random.default_rng(0).normal(size=(6, 5, 3))
        assert net.predict(x).tobytes() == net.predict(x).tobytes()

    @pytest.mark.parametrize("kind", ["lstm", "gru", "bilstm"])
    def test_no_dropout_train_equals_infer(self, kind):
        net = RecurrentNetwork.build(kind, 3, hidden_size=4, dropout=0.0, seed=2)
        x = np.random.default_rng(0).normal(size=(6, 5, 3))
        assert net.predict(x, training=True, rng=np.random.default_rng(1)).tobytes() == net.predict(x).tobytes()

    def test_single_step_composition(self):
        net = RecurrentNetwork.build("lstm", 3, hidden_size=4, num_layers=1, dropout=0.0, seed=5)
        x = np.array([0.3, -1.2, 0.8])
        h, _ = lstm_step(net.layers[0].cells[0], x, np.zeros(4), np.zeros(4))
        expected = float(net.head_W[0] @ h + net.head_b[0])
        assert net.forward(x[None]) == pytest.approx(expected, rel=1e-13, abs=1e-15)

    def test_gru_single_step_composition(self):
        net = RecurrentNetwork.build("gru", 3, hidden_size=4, num_layers=1, dropout=0.0, seed=5)
        x = np.array([0.3, -1.2, 0.8])
        h = gru_step(net.layers[0].cells[0], x, np.zeros(4))
        assert net.forward(x[None]) == pytest.approx(float(net.head_W[0] @ h + net.head_b[0]), rel=1e-13)

    def test_multi_step_matches_step_loop(self):
        net = RecurrentNetwork.build("gru", 3, hidden_size=4, num_layers=1, dropout=0.0, seed=8)
        x = np.random.default_rng(8).normal(size=(6, 3))
        h = np.zeros(4)
        for t in range(6):
            h = gru_step(net.layers[0].cells[0], x[t], h)
        assert net.forward(x) == pytest.approx(float(net.head_W[0] @ h + net.head_b[0]), rel=1e-12)

    def test_width_mismatch(self):
        net = RecurrentNetwork.build("lstm", 3, hidden_size=4)
        with pytest.raises(DataError):
            net.forward(np.ones((5, 2)))

    def test_incompatible_layers(self):
        a = RecurrentLayer("lstm", [zero_lstm(3, 4)])
        b = RecurrentLayer("lstm", [zero_lstm(5, 4)])
        with pytest.raises(DataError):
            RecurrentNetwork([a, b], np.zeros((1, 4)), np.zeros(1))

    def test_forget_bias_init(self):
        net = RecurrentNetwork.build("lstm", 3, hidden_size=4, num_layers=1)
        b = net.layers[0].cells[0].b
        assert np.all(b[4:8] == 1.0) and np.all(b[:4] == 0) and np.all(b[8:] == 0)


class TestGradients:
    @pytest.mark.parametrize("kind", ["lstm", "gru", "bilstm"])
    def test_finite_differences(self, kind):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 5, 3))
        y = rng.normal(size=2)
        net = RecurrentNetwork.build(kind, 3, hidden_size=4, num_layers=2, dropout=0.0, seed=11)
        report = gradient_check(net, x, y)
        assert report.max_rel_error <= 1e-4, report.per_param

    @pytest.mark.parametrize("kind", ["lstm", "gru"])
    def test_single_step_cell(self, kind):
        rng = np.random.default_rng(12)
        net = RecurrentNetwork.build(kind, 3, hidden_size=4, num_layers=1, dropout=0.0, seed=12)
        report = gradient_check(net, rng.normal(size=(1, 3)), rng.normal(size=1))
        assert report.passed

    def test_detects_wrong_gradient(self, monkeypatch):
        net = RecurrentNetwork.build("lstm", 2, hidden_size=2, num_layers=1, dropout=0.0, seed=0)
        real = net.loss_and_grads

        def broken(*a, **k):
            loss, grads = real(*a, **k)
            grads["head.b"] = grads["head.b"] * 1.1
            return loss, grads

        monkeypatch.setattr(net, "loss_and_grads", broken)
        assert not gradient_check(net, np.ones((1, 3, 2)), np.zeros(1)).passed


class TestTraining:
    def test_constant_target_descends(self):
        x = np.random.default_rng(0).normal(size=(20, 4, 2))
        y = np.full(20, 0.7)
        net = RecurrentNetwork.build("lstm", 2, hidden_size=4, num_layers=1, dropout=0.0, seed=0)
        _, hist = train(net, x, y, TrainConfig(epochs=30, batch_size=8, learning_rate=1e-2))
        assert hist.train_loss[-1] < hist.train_loss[0]
        assert len(hist) == 30 and len(hist.train_loss) == 30

    @pytest.mark.parametrize("kind", ["lstm", "gru", "bilstm"])
    def test_seeded_determinism(self, kind):
        x, y = sine_windows(20, 5)

        def run():
            net = RecurrentNetwork.build(kind, 1, hidden_size=4, num_layers=2, dropout=0.2, seed=4)
            net, _ = train(net, x, y, TrainConfig(epochs=5, batch_size=8, seed=4))
            return b"".join(p.tobytes() for p in net.parameters().values())

        assert run() == run()

    @pytest.mark.parametrize("kind", ["lstm", "gru", "bilstm"])
    def test_sine_rmse_halves(self, kind):
        x, y = sine_windows(40, 8)
        net = RecurrentNetwork.build(kind, 1, hidden_size=8, num_layers=1, dropout=0.0, seed=0)
        _, hist = train(net, x, y, TrainConfig(epochs=200, seed=0))
        rmse = np.sqrt(hist.train_loss)
        assert rmse[-1] <= 0.5 * rmse[0]

    def test_non_finite_loss_names_epoch(self):
        x, y = sine_windows(10, 4)
        y = y.copy()
        y[3] = np.nan
        net = RecurrentNetwork.build("gru", 1, hidden_size=2, num_layers=1, dropout=0.0)
        with pytest.raises(NumericError, match="epoch 1"):
            train(net, x, y, TrainConfig(epochs=3))

    def test_validation_history(self):
        x, y = sine_windows(12, 4)
        net = RecurrentNetwork.build("lstm", 1, hidden_size=2, num_layers=1, dropout=0.0)
        _, hist = train(net, x[:8], y[:8], TrainConfig(epochs=4), validation=(x[8:], y[8:]))
        assert len(hist.val_loss) == 4

    def test_bad_config(self):
        net = RecurrentNetwork.build("lstm", 1, hidden_size=2, num_layers=1)
        with pytest.raises(DataError):
            train(net, np.zeros((2, 3, 1)), np.zeros(2), TrainConfig(epochs=0))
