"""Model file round-trip tests: bit-exact predictions and byte-stable files."""

from __future__ import annotations

import json

import numpy as np
import pytest

from supercone.dataio import synth_gaussian_mixture
from supercone.experts import ExpertSpec
from supercone.metastack import (
    StackConfig,
    predict_final_batch,
    train_supercone,
)
from supercone.modelio import (
    MODEL_FORMAT,
    load_model,
    model_from_dict,
    model_to_dict,
    model_to_json,
    save_model,
)


@pytest.fixture(scope="module")
def every_kind_model():
    """A model whose stacks exercise all eight expert kinds."""
    data = synth_gaussian_mixture(n=60, num_classes=2, dim=4, class_separation=2.0, seed=51)
    cfg = StackConfig(
        rosters=(
            (
                ExpertSpec("majority"),
                ExpertSpec("logistic", {"epochs": 30}),
                ExpertSpec("naive_bayes"),
                ExpertSpec("knn", {"k": 3}),
                ExpertSpec("cart_tree", {"max_depth": 3}),
                ExpertSpec("gbt", {"rounds": 3, "depth": 2}),
            ),
            (
                ExpertSpec("mean_aggregate", {"blocks": (0, 1)}),
                ExpertSpec("passthrough", {"block": 2}),
            ),
        ),
        V=2, E=2, L=1, width=6, gate_layers=2, comb_layers=2,
        lr=0.02, epochs=3, batch_size=16, seed=51,
    )
    return train_supercone(cfg, data), data


class TestRoundTrip:
    def test_predictions_bit_identical(self, tmp_path, every_kind_model):
        model, data = every_kind_model
        path = tmp_path / "m.json"
        save_model(model, path)
        loaded = load_model(path)
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 4))
        before = predict_final_batch(model, X)
        after = predict_final_batch(loaded, X)
        assert before.tobytes() == after.tobytes()

    def test_save_load_save_bytes_stable(self, every_kind_model):
        model, _ = every_kind_model
        text = model_to_json(model)
        again = model_to_json(model_from_dict(json.loads(text)))
        assert text == again

    def test_metadata_restored(self, tmp_path, every_kind_model):
        model, _ = every_kind_model
        path = tmp_path / "m.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.label_space == model.label_space
        assert loaded.vocab_size == model.vocab_size
        assert loaded.layout == model.layout
        assert loaded.config == model.config
        for sa, sb in zip(model.stacks, loaded.stacks):
            for ea, eb in zip(sa, sb):
                assert ea.spec == eb.spec
                assert ea.trained_on == eb.trained_on

    def test_transient_fields_not_serialized(self, every_kind_model):
        model, _ = every_kind_model
        doc = model_to_dict(model)
        loaded = model_from_dict(doc)
        assert loaded.train_trace is None
        assert loaded.timings is None
        assert "timings" not in json.dumps(doc)

    def test_K0_model_round_trips(self, tmp_path):
        data = synth_gaussian_mixture(n=30, num_classes=3, dim=2, class_separation=1.0, seed=52)
        cfg = StackConfig(rosters=(), E=1, L=0, width=4, gate_layers=1,
                          comb_layers=1, epochs=2, batch_size=8, seed=52)
        model = train_supercone(cfg, data)
        path = tmp_path / "k0.json"
        save_model(model, path)
        loaded = load_model(path)
        X = data.to_dense()
        assert predict_final_batch(model, X).tobytes() == predict_final_batch(loaded, X).tobytes()


class TestFormat:
    def test_format_version_field(self, every_kind_model):
        model, _ = every_kind_model
        assert model_to_dict(model)["format_version"] == MODEL_FORMAT

    def test_unknown_version_rejected(self, every_kind_model):
        model, _ = every_kind_model
        doc = model_to_dict(model)
        doc["format_version"] = "supercone-model/2"
        with pytest.raises(ValueError, match="format"):
            model_from_dict(doc)

    def test_missing_array_rejected(self, every_kind_model):
        model, _ = every_kind_model
        doc = json.loads(model_to_json(model))
        del doc["meta"]["arrays"]["embed/W"]
        with pytest.raises(ValueError, match="embed/W"):
            model_from_dict(doc)

    def test_corrupt_json_reported(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValueError, match="JSON"):
            load_model(path)

    def test_arrays_are_hex_encoded(self, every_kind_model):
        model, _ = every_kind_model
        doc = model_to_dict(model)
        entry = doc["meta"]["arrays"]["embed/W"]
        assert set(entry) == {"shape", "dtype", "hex"}
        assert entry["dtype"] == "<f8"
        raw = bytes.fromhex(entry["hex"])
        arr = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"])
        np.testing.assert_array_equal(arr, model.meta.embed.weight)


class TestDeterminism:
    def test_identical_training_runs_identical_files(self):
        data = synth_gaussian_mixture(n=40, num_classes=2, dim=3, class_separation=2.0, seed=53)
        cfg = StackConfig(
            rosters=((ExpertSpec("logistic", {"epochs": 20}), ExpertSpec("majority")),),
            V=2, E=2, L=1, width=6, gate_layers=2, comb_layers=2,
            lr=0.02, epochs=3, batch_size=16, seed=53,
        )
        a = model_to_json(train_supercone(cfg, data))
        b = model_to_json(train_supercone(cfg, data))
        assert a == b
