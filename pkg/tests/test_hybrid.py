from datetime import date

import numpy as np
import pytest

from gasforecast.dataset import load_dataset
from gasforecast.errors import DataError
from gasforecast.gbt import GbtParams
from gasforecast.hybrid import (
    NetworkSpec,
    average_predictions,
    fit_forecaster,
    fit_hybrid,
    predict_hybrid,
    prediction_frame,
    prepare,
    prepare_for,
)
from gasforecast.metrics import rmse
from gasforecast.preprocess import SplitSpec, inverse_transform
from gasforecast.recurrent import TrainConfig
from gasforecast.synth import SynthScenario, write_csvs

FAST = dict(
    train_cfg=TrainConfig(epochs=3, batch_size=16),
    tree_params=GbtParams(n_trees=5),
    network=NetworkSpec(hidden_size=4, num_layers=1, dropout=0.0),
)


@pytest.fixture(scope="module")
def two_city(tmp_path_factory):
    out = tmp_path_factory.mktemp("two_city")
    c, w = write_csvs(out, SynthScenario(cities=2, months=72), seed=1)
    return load_dataset(c, w)


@pytest.fixture(scope="module")
def hybrid_model(two_city):
    return fit_hybrid(two_city, SplitSpec(0.8), window=12, seed=5, **FAST)


class TestAlignment:
    def test_branches_share_target_dates(self, two_city, hybrid_model):
        data = prepare_for(hybrid_model, two_city)
        frame = prediction_frame(hybrid_model, data, branches=True)
        keys = {}
        for name, part in frame.groupby("model"):
            keys[name] = sorted(zip(part.city, part.split, part.date))
        assert set(keys) == {"hybrid", "hybrid.bilstm", "hybrid.gbt"}
        assert keys["hybrid.bilstm"] == keys["hybrid.gbt"] == keys["hybrid"]

    def test_window_counts(self, two_city):
        data = prepare(two_city, SplitSpec(0.8), 12)
        # 71 lagged rows per city: 56 train, 15 test
        assert len(data.train_windows) == 2 * (56 - 12)
        assert len(data.test_windows) == 2 * 15

    def test_train_windows_never_read_test_rows(self, two_city):
        data = prepare(two_city, SplitSpec(0.8), 12)
        rows = data.train_windows.row
        assert data.is_train[rows].all()
        assert np.all(data.is_train[np.concatenate([np.arange(r - 12, r) for r in rows])])


class TestFit:
    def test_deterministic(self, two_city, hybrid_model):
        again = fit_hybrid(two_city, SplitSpec(0.8), window=12, seed=5, **FAST)
        for k, v in hybrid_model.network.parameters().items():
            assert v.tobytes() == again.network.parameters()[k].tobytes()
        for a, b in zip(hybrid_model.trees.trees, again.trees.trees):
            assert a.value.tobytes() == b.value.tobytes()

    def test_short_city_rejected(self, tmp_path):
        # 20 months cannot hold a 12-month window in both partitions
        c, w = write_csvs(tmp_path, SynthScenario(cities=1, months=24), seed=0)
        ds = load_dataset(c, w)
        short = type(ds)(ds.frame.iloc[:20].reset_index(drop=True))
        with pytest.raises(DataError, match="city01"):
            fit_hybrid(short, SplitSpec(0.8), window=12, **FAST)

    def test_unknown_kind(self, two_city):
        with pytest.raises(DataError):
            fit_forecaster(two_city, "transformer", **FAST)

    @pytest.mark.parametrize("kind", ["lstm", "gru"])
    def test_single_models_have_no_trees(self, two_city, kind):
        m = fit_forecaster(two_city, kind, window=6, **FAST)
        assert m.trees is None and m.network.layers[0].kind == kind


class TestAveraging:
    def test_mean(self):
        assert average_predictions(10.0, 20.0) == 15.0

    def test_idempotent(self, hybrid_model):
        x = np.array([0.2, 0.5, 0.9])
        same = hybrid_model.combine({"neural": x, "trees": x})
        np.testing.assert_array_equal(same, np.maximum(inverse_transform(hybrid_model.scaler, x), 0))

    def test_averaged_before_inverse(self, hybrid_model):
        out = hybrid_model.combine({"neural": np.array([0.1]), "trees": np.array([0.7])})
        assert out[0] == np.maximum(inverse_transform(hybrid_model.scaler, np.array([0.4])), 0)[0]

    def test_jensen_on_random_triples(self):
        rng = np.random.default_rng(0)
        violations = 0
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            A = rng.normal(size=n)
            P1 = A + rng.normal(scale=rng.uniform(0.01, 2), size=n)
            P2 = A + rng.normal(scale=rng.uniform(0.01, 2), size=n)
            violations += rmse(A, average_predictions(P1, P2)) > max(rmse(A, P1), rmse(A, P2))
        assert violations == 0

    def test_jensen_on_model_outputs(self, two_city, hybrid_model):
        data = prepare_for(hybrid_model, two_city)
        win = data.test_windows
        br = hybrid_model.branch_predictions(win, data.scaled)
        avg = average_predictions(br["neural"], br["trees"])
        assert rmse(win.target, avg) <= max(rmse(win.target, br["neural"]), rmse(win.target, br["trees"]))


class TestPredict:
    def test_matches_frame(self, two_city, hybrid_model):
        frame = prediction_frame(hybrid_model, prepare_for(hybrid_model, two_city))
        for _, row in frame.iloc[[0, 40, len(frame) - 1]].iterrows():
            d = date.fromisoformat(row.date)
            assert predict_hybrid(hybrid_model, two_city, row.city, d) == row.predicted

    def test_non_negative(self, two_city, hybrid_model):
        frame = prediction_frame(hybrid_model, prepare_for(hybrid_model, two_city))
        assert (frame.predicted >= 0).all()

    def test_unknown_city(self, two_city, hybrid_model):
        with pytest.raises(DataError, match="unknown city"):
            predict_hybrid(hybrid_model, two_city, "nowhere", date(2020, 1, 1))

    def test_missing_history(self, two_city, hybrid_model):
        with pytest.raises(DataError, match="preceding history"):
            predict_hybrid(hybrid_model, two_city, "city01", date(2017, 6, 1))

    def test_raw_averaging_mode(self, hybrid_model):
        raw = type(hybrid_model)(**{**hybrid_model.__dict__, "averaging": "raw"})
        a, b = np.array([0.1]), np.array([0.7])
        expected = (inverse_transform(raw.scaler, a) + inverse_transform(raw.scaler, b)) / 2
        assert raw.combine({"neural": a, "trees": b})[0] == pytest.approx(expected[0], rel=1e-15)
