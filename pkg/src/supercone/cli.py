"""Command-line surface: train, evaluate, attention, bench-cost, synth.

Experiments are described by a JSON config with a fixed schema (unknown keys
rejected); command-line flags override config fields. Exit codes: 0 success,
1 runtime error, 2 usage or config error. Every failure prints one
machine-parsable "error: ..." line to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import DataFormatError, Dataset, parse_libsvm, synth_gaussian_mixture, write_libsvm
from .experts import ExpertSpec, predict_batch
from .figures import attention_bars, cost_breakdown, loss_curve
from .metastack import StackConfig, SuperConeModel, attention_report, predict_final_batch, train_supercone
from .metrics import evaluate_predictions
from .modelio import load_model, save_model
from .neuralcore import comb_batch, complementary_batch


class UsageError(ValueError):
    """Bad invocation or configuration; maps to exit code 2."""


_STACK_KEYS = {
    "K", "V", "roster", "rosters", "E", "L", "width", "gate_layers",
    "comb_layers", "lr", "epochs", "batch_size", "full_batch", "init_scheme",
    "seed",
}
_CONFIG_KEYS = _STACK_KEYS | {"label_map", "label_kind", "vocab_size", "train", "test", "out"}
_INT_KEYS = ("K", "V", "E", "L", "width", "gate_layers", "comb_layers",
             "epochs", "batch_size", "seed", "vocab_size")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description: stacking config plus data plumbing."""

    stack: StackConfig
    label_map: dict[str, str] | None = None
    label_kind: str | None = None
    vocab_size: int | None = None
    train_path: str | None = None
    test_path: str | None = None
    out_path: str | None = None


def _expert_from_config(doc, where: str) -> ExpertSpec:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise UsageError(f"config: {where}: expected an object with a 'kind' field")
    unknown = set(doc) - {"kind", "hyperparameters"}
    if unknown:
        raise UsageError(f"config: {where}: unknown keys {sorted(unknown)}")
    hp = doc.get("hyperparameters", {})
    if not isinstance(hp, dict):
        raise UsageError(f"config: {where}: hyperparameters must be an object")
    hp = {k: tuple(v) if isinstance(v, list) else v for k, v in hp.items()}
    try:
        return ExpertSpec(doc["kind"], hp)
    except ValueError as exc:
        raise UsageError(f"config: {where}: {exc}") from exc


def _rosters_from_config(doc: dict) -> tuple[tuple[ExpertSpec, ...], ...]:
    if "roster" in doc and "rosters" in doc:
        raise UsageError("config: give either 'roster' or 'rosters', not both")
    if "rosters" in doc:
        levels = doc["rosters"]
        if not isinstance(levels, list):
            raise UsageError("config: rosters must be a list of levels")
        rosters = tuple(
            tuple(_expert_from_config(e, f"rosters[{k}][{j}]") for j, e in enumerate(level))
            for k, level in enumerate(levels)
        )
        if "K" in doc and doc["K"] != len(rosters):
            raise UsageError(f"config: K={doc['K']} but rosters has {len(rosters)} levels")
        return rosters
    if "roster" in doc:
        entries = doc["roster"]
        if not isinstance(entries, list) or not entries:
            raise UsageError("config: roster must be a non-empty list")
        roster = tuple(
            _expert_from_config(e, f"roster[{j}]") for j, e in enumerate(entries)
        )
        depth = doc.get("K", 1)
        return tuple(roster for _ in range(depth))
    if doc.get("K", 0) != 0:
        raise UsageError("config: K > 0 requires a roster")
    return ()


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config: not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config: top level must be an object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"config: unknown keys: {sorted(unknown)}")

    for key in _INT_KEYS:
        if key in doc and doc[key] is not None and (
            isinstance(doc[key], bool) or not isinstance(doc[key], int)
        ):
            raise UsageError(f"config: {key} must be an integer")
    if "lr" in doc and not isinstance(doc["lr"], (int, float)):
        raise UsageError("config: lr must be a number")
    if "full_batch" in doc and not isinstance(doc["full_batch"], bool):
        raise UsageError("config: full_batch must be a boolean")
    label_map = doc.get("label_map")
    if label_map is not None:
        if not isinstance(label_map, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in label_map.items()
        ):
            raise UsageError("config: label_map must map label tokens to class names")

    stack_kwargs = {
        k: doc[k]
        for k in ("V", "E", "L", "width", "gate_layers", "comb_layers", "lr",
                  "epochs", "batch_size", "full_batch", "init_scheme", "seed")
        if k in doc
    }
    if "lr" in stack_kwargs:
        stack_kwargs["lr"] = float(stack_kwargs["lr"])
    try:
        stack = StackConfig(rosters=_rosters_from_config(doc), **stack_kwargs)
    except ValueError as exc:
        raise UsageError(f"config: {exc}") from exc
    return ExperimentConfig(
        stack=stack,
        label_map=label_map,
        label_kind=doc.get("label_kind"),
        vocab_size=doc.get("vocab_size"),
        train_path=doc.get("train"),
        test_path=doc.get("test"),
        out_path=doc.get("out"),
    )


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what}: no path given (flag or config)")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what}: not found: {p}")
    return p


def _load_dataset(
    path: Path,
    label_map: dict[str, str],
    vocab_size: int | None,
    kind: str | None,
) -> Dataset:
    return parse_libsvm(path.read_text(), label_map, vocab_size=vocab_size, kind=kind)


def _dataset_for_model(args, model: SuperConeModel, flag_path: str | None) -> Dataset:
    """Parse a dataset aligned with a trained model's vocab and label space."""
    path = _require_file(flag_path, "dataset")
    label_map = None
    if getattr(args, "config", None):
        label_map = load_config(args.config).label_map
    if label_map is None:
        label_map = {c: c for c in model.label_space.classes}
    data = _load_dataset(path, label_map, model.vocab_size, model.label_space.kind)
    if data.label_space.classes != model.label_space.classes:
        raise UsageError(
            f"dataset: label space {data.label_space.classes} does not match "
            f"model {model.label_space.classes}"
        )
    return data


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header] + rows) + "\n")


# ------------------------------------------------------------------ commands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    stack = cfg.stack
    if args.seed is not None:
        stack = dataclasses.replace(stack, seed=args.seed)
    train_path = _require_file(args.train or cfg.train_path, "dataset")
    if cfg.label_map is None:
        raise UsageError("config: label_map is required to train")
    data = _load_dataset(train_path, cfg.label_map, cfg.vocab_size, cfg.label_kind)

    out = args.out or cfg.out_path
    if out is None:
        raise UsageError("output: no path given (flag or config)")
    out = Path(out)

    model = train_supercone(stack, data)
    save_model(model, out)

    trace = model.train_trace
    trace_csv = Path(str(out) + ".trace.csv")
    _write_csv(
        trace_csv,
        "epoch,loss",
        [f"{i + 1},{float(loss)!r}" for i, loss in enumerate(trace.epoch_loss)],
    )
    loss_curve(trace.initial_loss, trace.epoch_loss, Path(str(out) + ".trace.png"))

    print(f"model: {out}")
    print(f"trace: {trace_csv}")
    print(f"instances: {data.n}")
    if len(trace.epoch_loss):
        print(f"final_loss: {float(trace.epoch_loss[-1])!r}")
    for name, seconds in (model.timings or {}).items():
        print(f"time.{name}: {seconds:.3f}s")
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(_require_file(args.model, "model"))
    test = _dataset_for_model(args, model, args.test)
    probs = predict_final_batch(model, test.to_dense())
    report = evaluate_predictions(probs, test.labels)
    doc = report.to_dict()
    Path(args.report).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for key in ("accuracy", "weighted_ovr_auc", "weighted_f1", "log_loss", "cohen_kappa"):
        print(f"{key}: {doc[key]!r}")
    print(f"report: {args.report}")
    return 0


def cmd_attention(args) -> int:
    model = load_model(_require_file(args.model, "model"))
    data = _dataset_for_model(args, model, args.data)
    report = attention_report(model, data)
    rows = [
        f"{name},{float(weight)!r}"
        for name, weight in zip(report.names, report.mean_weights)
    ]
    out = Path(args.out)
    _write_csv(out, "expert_name,mean_weight", rows)
    attention_bars(report.names, report.mean_weights, out.with_suffix(".png"))
    print("expert_name,mean_weight")
    for row in rows:
        print(row)
    return 0


def _timed_components(model: SuperConeModel, X: np.ndarray) -> tuple[dict[str, float], float]:
    """One sequential serving pass with per-component wall times (seconds).

    Mirrors predict_final_batch stage by stage so the sum of parts accounts
    for the whole pass; the remainder (array assembly, blending) is overhead.
    """
    parts: dict[str, float] = {}
    begin = time.perf_counter()
    augmented = X
    blocks: list[np.ndarray] = []
    for k, stack in enumerate(model.stacks, start=1):
        started = time.perf_counter()
        outputs = [predict_batch(expert, augmented) for expert in stack]
        parts[f"level{k}_experts"] = time.perf_counter() - started
        blocks.extend(outputs)
        augmented = np.hstack([augmented] + outputs)
    started = time.perf_counter()
    alt = complementary_batch(model.meta, X)
    parts["complementary_expert"] = time.perf_counter() - started
    started = time.perf_counter()
    weights = comb_batch(model.meta, X)
    parts["combination_network"] = time.perf_counter() - started
    candidates = np.concatenate([alt[:, None, :]] + [b[:, None, :] for b in blocks], axis=1)
    np.einsum("nj,njy->ny", weights, candidates)
    return parts, time.perf_counter() - begin


def cmd_bench_cost(args) -> int:
    if args.repeat < 1:
        raise UsageError(f"repeat: must be >= 1, got {args.repeat}")
    model = load_model(_require_file(args.model, "model"))
    data = _dataset_for_model(args, model, args.data)
    X = data.to_dense()

    names = [f"level{k}_experts" for k in range(1, len(model.stacks) + 1)]
    names += ["complementary_expert", "combination_network"]
    samples: dict[str, list[float]] = {name: [] for name in names}
    overheads: list[float] = []
    totals: list[float] = []
    for _ in range(args.repeat):
        parts, total = _timed_components(model, X)
        for name in names:
            samples[name].append(parts[name])
        overheads.append(total - sum(parts.values()))
        totals.append(total)

    scale = 1e6 / data.n  # seconds/pass -> microseconds/instance
    rows = [(name, float(np.median(samples[name])) * scale) for name in names]
    rows.append(("overhead", float(np.median(overheads)) * scale))
    rows.append(("total", float(np.median(totals)) * scale))

    header = "component,us_per_instance"
    lines = [f"{name},{value!r}" for name, value in rows]
    print(header)
    for line in lines:
        print(line)
    if args.out:
        out = Path(args.out)
        _write_csv(out, header, lines)
        cost_breakdown(
            [name for name, _ in rows[:-1]],
            [value for _, value in rows[:-1]],
            out.with_suffix(".png"),
        )
        print(f"report: {out}")
    return 0


def cmd_synth(args) -> int:
    spec_path = _require_file(args.spec, "spec")
    try:
        doc = json.loads(spec_path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"spec: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("spec: top level must be an object")
    known = {"n", "num_classes", "dim", "class_separation", "seed", "test_n", "test_seed"}
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"spec: unknown keys: {sorted(unknown)}")
    missing = {"n", "num_classes", "dim", "class_separation", "seed"} - set(doc)
    if missing:
        raise UsageError(f"spec: missing keys: {sorted(missing)}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        train = synth_gaussian_mixture(
            num_classes=doc["num_classes"], dim=doc["dim"], n=doc["n"],
            class_separation=doc["class_separation"], seed=doc["seed"],
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"spec: {exc}") from exc
    train_path = out_dir / "train.libsvm"
    train_path.write_text(write_libsvm(train))
    print(f"wrote: {train_path}")
    if "test_n" in doc:
        test = synth_gaussian_mixture(
            num_classes=doc["num_classes"], dim=doc["dim"], n=doc["test_n"],
            class_separation=doc["class_separation"],
            seed=doc.get("test_seed", doc["seed"] + 1),
        )
        test_path = out_dir / "test.libsvm"
        test_path.write_text(write_libsvm(test))
        print(f"wrote: {test_path}")
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="supercone",
        description="Cross-validated recursive stacking with a learned combination network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config and a LIBSVM file")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--train", help="training data (LIBSVM); overrides config")
    p.add_argument("--out", help="model output path; overrides config")
    p.add_argument("--seed", type=int, help="override config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a model on a labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", required=True, help="metrics report output (JSON)")
    p.add_argument("--config", help="config supplying the label_map for raw files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attention", help="mean combination weight per candidate")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV output path (figure written alongside)")
    p.add_argument("--config", help="config supplying the label_map for raw files")
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("bench-cost", help="median inference cost per component")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--repeat", type=int, default=5, help="timing passes (median reported)")
    p.add_argument("--out", help="CSV output path (figure written alongside)")
    p.add_argument("--config", help="config supplying the label_map for raw files")
    p.set_defaults(func=cmd_bench_cost)

    p = sub.add_parser("synth", help="generate Gaussian-mixture LIBSVM datasets")
    p.add_argument("--spec", required=True, help="synth spec (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"error: dataset: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single-line reason, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
