import json

import numpy as np
import pytest

from gasforecast.errors import DataError, ModelFileError
from gasforecast.gbt import GbtParams
from gasforecast.hybrid import NetworkSpec, fit_forecaster, prediction_frame, prepare_for
from gasforecast.modelfile import SCHEMA_VERSION, atomic_write_text, load_model, model_to_dict, save_model
from gasforecast.recurrent import TrainConfig

FAST = dict(
    train_cfg=TrainConfig(epochs=2, batch_size=16),
    tree_params=GbtParams(n_trees=4),
    network=NetworkSpec(hidden_size=4, num_layers=2, dropout=0.1),
    window=6,
)


@pytest.fixture(scope="module", params=["lstm", "gru", "hybrid"])
def model(request, synth_small):
    return fit_forecaster(synth_small[2], request.param, seed=2, **FAST)


class TestRoundTrip:
    def test_bit_identical_predictions(self, model, synth_small, tmp_path):
        ds = synth_small[2]
        path = tmp_path / "m.json"
        save_model(model, path, {"note": 1})
        back = load_model(path)
        a = prediction_frame(model, prepare_for(model, ds), branches=True)
        b = prediction_frame(back, prepare_for(back, ds), branches=True)
        assert a.predicted.to_numpy().tobytes() == b.predicted.to_numpy().tobytes()

    def test_resave_is_byte_identical(self, model, tmp_path):
        save_model(model, tmp_path / "a.json")
        save_model(load_model(tmp_path / "a.json"), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_self_describing_tensors(self, model):
        d = model_to_dict(model)
        assert d["schema_version"] == SCHEMA_VERSION
        for t in d["network"]["tensors"]:
            assert len(t["data"]) == int(np.prod(t["shape"]))

    def test_history_survives(self, model, tmp_path):
        save_model(model, tmp_path / "m.json")
        assert load_model(tmp_path / "m.json").history.train_loss == model.history.train_loss


class TestErrors:
    def test_schema_mismatch_names_versions(self, model, tmp_path):
        path = tmp_path / "m.json"
        save_model(model, path)
        d = json.loads(path.read_text())
        d["schema_version"] = 99
        path.write_text(json.dumps(d))
        with pytest.raises(ModelFileError, match="99.*1|1.*99"):
            load_model(path)

    @pytest.mark.parametrize("text", ["", "{not json", "[]", '{"schema_version": 1}'])
    def test_corrupt(self, tmp_path, text):
        path = tmp_path / "m.json"
        path.write_text(text)
        with pytest.raises(DataError):
            load_model(path)

    def test_truncated(self, model, tmp_path):
        path = tmp_path / "m.json"
        save_model(model, path)
        raw = path.read_text()
        path.write_text(raw[: len(raw) // 2])
        with pytest.raises(ModelFileError):
            load_model(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_model(tmp_path / "absent.json")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_text(tmp_path / "sub" / "f.txt", "hello\n")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]
    assert (tmp_path / "sub" / "f.txt").read_text() == "hello\n"
