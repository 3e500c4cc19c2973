"""Versioned model files.

One JSON document with sorted keys and base-16 encoded arrays: bit-exact
round trips matter more than file size, and identical training runs must
produce byte-identical files, so nothing time- or environment-dependent is
written.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataio import LabelSpace
from .experts import Block, ExpertSpec, TrainedExpert
from .metastack import StackConfig, SuperConeModel
from .neuralcore import MetaParams, Structure, init_meta_params

MODEL_FORMAT = "supercone-model/1"

_STRUCTURE_FIELDS = (
    "vocab_size",
    "num_classes",
    "num_blocks",
    "E",
    "L",
    "width",
    "gate_layers",
    "comb_layers",
)
_CONFIG_SCALARS = (
    "V",
    "E",
    "L",
    "width",
    "gate_layers",
    "comb_layers",
    "lr",
    "epochs",
    "batch_size",
    "full_batch",
    "init_scheme",
    "seed",
)


def _encode_value(value):
    if isinstance(value, np.ndarray):
        if value.dtype.kind == "f":
            dtype = "<f8"
        elif value.dtype.kind in "iu":
            dtype = "<i8"
        else:
            raise ValueError(f"cannot encode array dtype {value.dtype}")
        data = np.ascontiguousarray(value, dtype=dtype)
        return {"shape": list(value.shape), "dtype": dtype, "hex": data.tobytes().hex()}
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, (tuple, list)):
        return [_encode_value(v) for v in value]
    raise ValueError(f"cannot encode {type(value).__name__}")


def _decode_value(value):
    if isinstance(value, dict):
        raw = bytes.fromhex(value["hex"])
        arr = np.frombuffer(raw, dtype=value["dtype"]).reshape(value["shape"])
        # frombuffer views are read-only; astype forces a writable copy
        return arr.astype(np.float64 if value["dtype"] == "<f8" else np.int64)
    if isinstance(value, list):
        return tuple(_decode_value(v) for v in value)
    return value


def _spec_to_dict(spec: ExpertSpec) -> dict:
    return {
        "kind": spec.kind,
        "hyperparameters": {k: _encode_value(v) for k, v in spec.hyperparameters.items()},
    }


def _spec_from_dict(doc: dict) -> ExpertSpec:
    hp = {k: _decode_value(v) for k, v in doc["hyperparameters"].items()}
    return ExpertSpec(doc["kind"], hp)


def _expert_to_dict(expert: TrainedExpert) -> dict:
    return {
        "spec": _spec_to_dict(expert.spec),
        "input_width": expert.input_width,
        "num_classes": expert.num_classes,
        "trained_on": sorted(int(i) for i in expert.trained_on),
        "params": {k: _encode_value(v) for k, v in expert.params.items()},
    }


def _expert_from_dict(doc: dict) -> TrainedExpert:
    return TrainedExpert(
        spec=_spec_from_dict(doc["spec"]),
        params={k: _decode_value(v) for k, v in doc["params"].items()},
        input_width=int(doc["input_width"]),
        num_classes=int(doc["num_classes"]),
        trained_on=frozenset(int(i) for i in doc["trained_on"]),
    )


def _meta_to_dict(params: MetaParams) -> dict:
    return {
        "structure": {f: getattr(params.structure, f) for f in _STRUCTURE_FIELDS},
        "arrays": {name: _encode_value(arr) for name, arr in params.flatten()},
    }


def _meta_from_dict(doc: dict) -> MetaParams:
    structure = Structure(**{f: int(doc["structure"][f]) for f in _STRUCTURE_FIELDS})
    # rebuild the layer skeleton, then overwrite every array in place by name
    params = init_meta_params(structure, seed=0, scheme="zero")
    arrays = doc["arrays"]
    seen = set()
    for name, arr in params.flatten():
        if name not in arrays:
            raise ValueError(f"model file missing array {name}")
        loaded = _decode_value(arrays[name])
        if loaded.shape != arr.shape:
            raise ValueError(f"array {name} has shape {loaded.shape}, expected {arr.shape}")
        arr[:] = loaded
        seen.add(name)
    extra = set(arrays) - seen
    if extra:
        raise ValueError(f"model file has unexpected arrays: {sorted(extra)}")
    return params


def _config_to_dict(cfg: StackConfig) -> dict:
    doc = {f: getattr(cfg, f) for f in _CONFIG_SCALARS}
    doc["rosters"] = [[_spec_to_dict(s) for s in roster] for roster in cfg.rosters]
    return doc


def _config_from_dict(doc: dict) -> StackConfig:
    rosters = tuple(
        tuple(_spec_from_dict(s) for s in roster) for roster in doc["rosters"]
    )
    return StackConfig(rosters=rosters, **{f: doc[f] for f in _CONFIG_SCALARS})


def model_to_dict(model: SuperConeModel) -> dict:
    """The model as one JSON-serializable document (no transient fields)."""
    return {
        "format_version": MODEL_FORMAT,
        "label_space": {
            "classes": list(model.label_space.classes),
            "kind": model.label_space.kind,
        },
        "vocab_size": model.vocab_size,
        "seed": model.config.seed,
        "config": _config_to_dict(model.config),
        "layout": [
            {"name": b.name, "start": b.start, "width": b.width} for b in model.layout
        ],
        "meta": _meta_to_dict(model.meta),
        "stacks": [[_expert_to_dict(e) for e in stack] for stack in model.stacks],
    }


def model_from_dict(doc: dict) -> SuperConeModel:
    version = doc.get("format_version")
    if version != MODEL_FORMAT:
        raise ValueError(f"unsupported model format: {version!r}")
    return SuperConeModel(
        meta=_meta_from_dict(doc["meta"]),
        stacks=tuple(
            tuple(_expert_from_dict(e) for e in stack) for stack in doc["stacks"]
        ),
        layout=tuple(Block(b["name"], b["start"], b["width"]) for b in doc["layout"]),
        label_space=LabelSpace(
            tuple(doc["label_space"]["classes"]), doc["label_space"]["kind"]
        ),
        vocab_size=int(doc["vocab_size"]),
        config=_config_from_dict(doc["config"]),
    )


def model_to_json(model: SuperConeModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":")) + "\n"


def save_model(model: SuperConeModel, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path: str | Path) -> SuperConeModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(doc)
