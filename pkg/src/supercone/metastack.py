"""Cross-validated recursive stacking pipeline.

Level by level, every roster expert is replicated per fold: each replica
trains on the fold complement and predicts only its own fold, so the
out-of-fold blocks appended to the augmented rows never contain in-sample
predictions. The meta parameters (complementary expert + combination network)
are then trained against those frozen blocks. At adaptation time the experts
are refit on the full training data (folds exist only to build the meta
training set) and assembled with the meta parameters into one serving model.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataio import ConceptVector, Dataset, FoldMap, LabelSpace, assign_folds
from .experts import Block, ExpertSpec, TrainedExpert, fit_expert, predict_batch
from .neuralcore import (
    MetaParams,
    Structure,
    adam_init,
    adam_step,
    comb_batch,
    complementary_batch,
    h_train_batch,
    init_meta_params,
    loss_and_gradients,
    meta_loss,
)

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class StackConfig:
    """Full pipeline configuration; immutable and validated on construction.

    rosters holds one expert list per level (K = len(rosters); empty means a
    pure complementary model). The same seed drives fold assignment, expert
    fits, parameter init, and batch order.
    """

    rosters: tuple[tuple[ExpertSpec, ...], ...] = ()
    V: int = 3
    E: int = 3
    L: int = 3
    width: int = 32
    gate_layers: int = 2
    comb_layers: int = 3
    lr: float = 1e-4
    epochs: int = 30
    batch_size: int = 64
    full_batch: bool = False
    init_scheme: str = "fan_in"
    seed: int = 0

    def __post_init__(self) -> None:
        rosters = tuple(tuple(level) for level in self.rosters)
        object.__setattr__(self, "rosters", rosters)
        for k, roster in enumerate(rosters, start=1):
            if not roster:
                raise ValueError(f"level {k} roster is empty")
            for spec in roster:
                if not isinstance(spec, ExpertSpec):
                    raise ValueError("rosters must contain ExpertSpec entries")
            self._check_structural_experts(k, roster)
        if self.V < 2:
            raise ValueError("V must be >= 2")
        if self.E < 1 or self.L < 0 or self.width < 1:
            raise ValueError("invalid neural architecture sizes")
        if self.gate_layers < 1 or self.comb_layers < 1:
            raise ValueError("gate_layers and comb_layers must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.init_scheme not in ("fan_in", "zero"):
            raise ValueError("init_scheme must be fan_in or zero")

    def _check_structural_experts(self, k: int, roster: tuple[ExpertSpec, ...]) -> None:
        # blocks visible to level k come from levels 1..k-1
        available = sum(len(r) for r in self.rosters[: k - 1])
        for spec in roster:
            if spec.kind == "passthrough":
                index = spec.hyperparameters["block"]
                if not -available <= index < available:
                    raise ValueError(
                        f"level {k} passthrough block {index} out of range "
                        f"({available} prior blocks)"
                    )
            elif spec.kind == "mean_aggregate":
                blocks = spec.hyperparameters["blocks"]
                if blocks is not None and any(b >= available for b in blocks):
                    raise ValueError(
                        f"level {k} mean_aggregate blocks {blocks} out of range "
                        f"({available} prior blocks)"
                    )

    @property
    def K(self) -> int:
        return len(self.rosters)

    @property
    def num_blocks(self) -> int:
        return sum(len(roster) for roster in self.rosters)


def uniform_rosters(roster: list[ExpertSpec], K: int) -> tuple[tuple[ExpertSpec, ...], ...]:
    """The same roster instantiated at every level 1..K."""
    return tuple(tuple(roster) for _ in range(K))


@dataclass(frozen=True)
class AugmentedDataset:
    """Instances whose rows are concepts followed by expert output blocks.

    The first vocab_size columns are the original concept features; layout
    names each appended block and covers the remaining columns exactly, in
    level/roster order.
    """

    level: int
    vocab_size: int
    num_classes: int
    rows: np.ndarray
    layout: tuple[Block, ...]
    labels: np.ndarray
    ids: np.ndarray

    def __post_init__(self) -> None:
        rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "layout", tuple(self.layout))
        n = rows.shape[0]
        if rows.ndim != 2 or n == 0:
            raise ValueError("rows must be a non-empty matrix")
        if labels.shape != (n,) or ids.shape != (n,):
            raise ValueError("labels and ids must align with rows")
        expected = self.vocab_size
        for block in self.layout:
            if block.start != expected:
                raise ValueError(f"block {block.name} does not start at column {expected}")
            if block.width != self.num_classes:
                raise ValueError(f"block {block.name} width != num_classes")
            expected = block.stop
        if expected != rows.shape[1]:
            raise ValueError("layout does not cover the non-concept columns exactly")
        for block in self.layout:
            sums = rows[:, block.start : block.stop].sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-6):
                raise ValueError(f"block {block.name} rows are not distributions")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "AugmentedDataset":
        return cls(
            level=0,
            vocab_size=dataset.vocab_size,
            num_classes=dataset.num_classes,
            rows=dataset.to_dense(),
            layout=(),
            labels=dataset.labels,
            ids=dataset.ids,
        )


@dataclass(frozen=True)
class ReplicaRecord:
    """Instrumentation: one fold replica and the instance ids it predicted."""

    level: int
    expert_index: int
    fold: int
    expert: TrainedExpert | None  # None when the fit degenerated to uniform
    predicted_ids: tuple[int, ...]


def build_meta_level(
    k: int,
    prev: AugmentedDataset,
    roster: tuple[ExpertSpec, ...],
    fold_map: FoldMap,
    seed: int,
    replica_log: list[ReplicaRecord] | None = None,
) -> AugmentedDataset:
    """Append one level of out-of-fold expert blocks to the augmented rows.

    Per expert and fold v, a replica trains on all rows with fold != v and
    predicts exactly the fold-v rows, so no appended value is an in-sample
    prediction. A replica whose fit fails on degenerate fold data contributes
    a uniform block for its fold (with a warning) to keep the layout stable.
    """
    if k != prev.level + 1:
        raise ValueError(f"expected level {prev.level + 1}, got {k}")
    if not roster:
        raise ValueError("roster must be non-empty")
    folds = fold_map.folds_for(prev.ids)
    n, num_classes = prev.n, prev.num_classes
    base = prev.rows.shape[1]

    new_blocks = []
    new_layout = list(prev.layout)
    for j, spec in enumerate(roster):
        z = np.empty((n, num_classes))
        for v in range(1, fold_map.num_folds + 1):
            predict_mask = folds == v
            train_mask = ~predict_mask
            expert: TrainedExpert | None
            try:
                expert = fit_expert(
                    spec,
                    prev.rows[train_mask],
                    prev.labels[train_mask],
                    num_classes=num_classes,
                    seed=[seed, k, j, v],
                    ids=prev.ids[train_mask],
                    block_layout=prev.layout,
                )
                z[predict_mask] = predict_batch(expert, prev.rows[predict_mask])
            except (ValueError, FloatingPointError) as exc:
                warnings.warn(
                    f"level {k} expert {j} ({spec.kind}) fold {v} degenerated "
                    f"({exc}); emitting a uniform block",
                    stacklevel=2,
                )
                expert = None
                z[predict_mask] = 1.0 / num_classes
            if replica_log is not None:
                replica_log.append(
                    ReplicaRecord(
                        level=k,
                        expert_index=j,
                        fold=v,
                        expert=expert,
                        predicted_ids=tuple(int(i) for i in prev.ids[predict_mask]),
                    )
                )
        new_blocks.append(z)
        new_layout.append(Block(f"L{k}.{j}.{spec.kind}", base + j * num_classes, num_classes))

    return AugmentedDataset(
        level=k,
        vocab_size=prev.vocab_size,
        num_classes=num_classes,
        rows=np.hstack([prev.rows] + new_blocks),
        layout=tuple(new_layout),
        labels=prev.labels,
        ids=prev.ids,
    )


def h_train_forward(
    params: MetaParams, row: np.ndarray, layout: tuple[Block, ...] | None = None
) -> np.ndarray:
    """Meta-training surrogate for one augmented row.

    Blends the complementary expert's prediction with the frozen expert
    blocks stored in the row, weighted by the combination network applied to
    the concept columns.
    """
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError("expected a single augmented row")
    if layout is not None and len(layout) != params.structure.num_blocks:
        raise ValueError(
            f"layout has {len(layout)} blocks, parameters expect "
            f"{params.structure.num_blocks}"
        )
    return h_train_batch(params, row[None, :])[0]


@dataclass(frozen=True)
class TrainTrace:
    """Loss before training plus the full-data loss after each epoch."""

    initial_loss: float
    epoch_loss: np.ndarray


def meta_train(aug: AugmentedDataset, cfg: StackConfig) -> tuple[MetaParams, TrainTrace]:
    """Fit the meta parameters against the frozen out-of-fold blocks.

    Adam on the mean clamped cross-entropy of the surrogate outputs; shuffled
    mini-batches with seeded order, or one full-batch step per epoch when
    cfg.full_batch is set.
    """
    structure = Structure(
        vocab_size=aug.vocab_size,
        num_classes=aug.num_classes,
        num_blocks=len(aug.layout),
        E=cfg.E,
        L=cfg.L,
        width=cfg.width,
        gate_layers=cfg.gate_layers,
        comb_layers=cfg.comb_layers,
    )
    params = init_meta_params(structure, seed=[cfg.seed, 1], scheme=cfg.init_scheme)
    state = adam_init(params)
    rows, labels = aug.rows, aug.labels
    initial = meta_loss(params, rows, labels)
    rng = np.random.default_rng([cfg.seed, 2])
    trace = np.zeros(cfg.epochs)
    for epoch in range(cfg.epochs):
        try:
            if cfg.full_batch:
                _, grads = loss_and_gradients(params, rows, labels)
                adam_step(state, params, grads, lr=cfg.lr)
            else:
                order = rng.permutation(aug.n)
                for start in range(0, aug.n, cfg.batch_size):
                    idx = order[start : start + cfg.batch_size]
                    _, grads = loss_and_gradients(params, rows[idx], labels[idx])
                    adam_step(state, params, grads, lr=cfg.lr)
        except FloatingPointError as exc:
            raise FloatingPointError(f"meta training diverged at epoch {epoch + 1}: {exc}") from exc
        trace[epoch] = meta_loss(params, rows, labels)
        if not np.isfinite(trace[epoch]):
            raise FloatingPointError(f"meta loss not finite after epoch {epoch + 1}")
    return params, TrainTrace(initial_loss=initial, epoch_loss=trace)


def adapt_experts(
    cfg: StackConfig, train: Dataset
) -> tuple[tuple[tuple[TrainedExpert, ...], ...], AugmentedDataset]:
    """Refit every roster expert on the full training data, level by level.

    No folds here: each level's experts train on the complete level-(k-1)
    augmented rows and their in-sample predictions feed the next level,
    mirroring exactly what the serving pipeline computes.
    """
    aug = AugmentedDataset.from_dataset(train)
    stacks: list[tuple[TrainedExpert, ...]] = []
    for k in range(1, cfg.K + 1):
        roster = cfg.rosters[k - 1]
        base = aug.rows.shape[1]
        level_experts = []
        new_blocks = []
        new_layout = list(aug.layout)
        for j, spec in enumerate(roster):
            try:
                expert = fit_expert(
                    spec,
                    aug.rows,
                    aug.labels,
                    num_classes=aug.num_classes,
                    seed=[cfg.seed, k, j, 0],
                    ids=aug.ids,
                    block_layout=aug.layout,
                )
            except (ValueError, FloatingPointError) as exc:
                raise type(exc)(f"level {k} expert {j} ({spec.kind}): {exc}") from exc
            level_experts.append(expert)
            new_blocks.append(predict_batch(expert, aug.rows))
            new_layout.append(
                Block(f"L{k}.{j}.{spec.kind}", base + j * aug.num_classes, aug.num_classes)
            )
        aug = AugmentedDataset(
            level=k,
            vocab_size=aug.vocab_size,
            num_classes=aug.num_classes,
            rows=np.hstack([aug.rows] + new_blocks),
            layout=tuple(new_layout),
            labels=aug.labels,
            ids=aug.ids,
        )
        stacks.append(tuple(level_experts))
    return tuple(stacks), aug


@dataclass
class SuperConeModel:
    """Serving bundle: meta parameters plus the adapted expert stacks."""

    meta: MetaParams
    stacks: tuple[tuple[TrainedExpert, ...], ...]
    layout: tuple[Block, ...]
    label_space: LabelSpace
    vocab_size: int
    config: StackConfig
    train_trace: TrainTrace | None = field(default=None, compare=False)
    timings: dict[str, float] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if len(self.layout) != self.meta.structure.num_blocks:
            raise ValueError("layout size does not match meta structure")
        if sum(len(s) for s in self.stacks) != len(self.layout):
            raise ValueError("stacks do not match layout")


def train_supercone(cfg: StackConfig, train: Dataset) -> SuperConeModel:
    """Full pipeline: fold-replica levels, meta training, expert adaptation."""
    timings: dict[str, float] = {}

    started = time.perf_counter()
    aug = AugmentedDataset.from_dataset(train)
    for k in range(1, cfg.K + 1):
        fold_map = assign_folds(train.n, cfg.V, level=k, seed=cfg.seed)
        aug = build_meta_level(k, aug, cfg.rosters[k - 1], fold_map, seed=cfg.seed)
    timings["build_meta_levels"] = time.perf_counter() - started

    started = time.perf_counter()
    params, trace = meta_train(aug, cfg)
    timings["meta_train"] = time.perf_counter() - started

    started = time.perf_counter()
    stacks, _ = adapt_experts(cfg, train)
    timings["adapt_experts"] = time.perf_counter() - started

    return SuperConeModel(
        meta=params,
        stacks=stacks,
        layout=aug.layout,
        label_space=train.label_space,
        vocab_size=train.vocab_size,
        config=cfg,
        train_trace=trace,
        timings=timings,
    )


def predict_final_batch(model: SuperConeModel, features: np.ndarray) -> np.ndarray:
    """Serving predictions for dense concept rows; (n, num_classes)."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.vocab_size:
        raise ValueError(f"expected concept width {model.vocab_size}, got shape {X.shape}")
    augmented = X
    block_outputs: list[np.ndarray] = []
    for stack in model.stacks:
        level_outputs = [predict_batch(expert, augmented) for expert in stack]
        block_outputs.extend(level_outputs)
        if level_outputs:
            augmented = np.hstack([augmented] + level_outputs)
    weights = comb_batch(model.meta, X)
    alt = complementary_batch(model.meta, X)
    candidates = np.concatenate(
        [alt[:, None, :]] + [b[:, None, :] for b in block_outputs], axis=1
    )
    return np.einsum("nj,njy->ny", weights, candidates)


def predict_final(model: SuperConeModel, concepts: ConceptVector) -> np.ndarray:
    """Serving prediction for one sparse concept vector."""
    return predict_final_batch(model, concepts.densify(model.vocab_size)[None, :])[0]


@dataclass(frozen=True)
class AttentionReport:
    """Mean combination weight per candidate, complementary expert first."""

    names: tuple[str, ...]
    mean_weights: np.ndarray


def attention_report(model: SuperConeModel, data: Dataset) -> AttentionReport:
    """Average the combination network's weights over a dataset."""
    if data.vocab_size != model.vocab_size:
        raise ValueError("dataset vocab size does not match model")
    weights = comb_batch(model.meta, data.to_dense())
    return AttentionReport(
        names=("complementary",) + tuple(block.name for block in model.layout),
        mean_weights=weights.mean(axis=0),
    )


def candidate_losses(params: MetaParams, aug: AugmentedDataset) -> np.ndarray:
    """Clamped cross-entropy of each candidate used alone.

    Index 0 is the complementary expert's own outputs; the rest are the
    stored expert blocks in layout order. The meta-trained blend should not
    be materially worse than the best of these.
    """
    X = aug.rows[:, : aug.vocab_size]
    outputs = [complementary_batch(params, X)]
    outputs.extend(aug.rows[:, block.start : block.stop] for block in aug.layout)
    rows = np.arange(aug.n)
    losses = []
    for out in outputs:
        p_true = np.clip(out[rows, aug.labels], PROB_CLAMP, 1.0 - PROB_CLAMP)
        losses.append(float(np.mean(-np.log(p_true))))
    return np.array(losses)
