"""Dataset ingestion, label-space handling, and cross-validation fold schemes.

Supports the LIBSVM text format (``<label> <idx>:<val> ...`` with 1-based,
strictly increasing indices per line) and a synthetic Gaussian-mixture
generator used as a test fixture. Datasets and fold maps are immutable after
construction and safe to share across concurrent training jobs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

LABEL_KINDS = ("binary", "multiclass", "discretized-range")


class DataFormatError(ValueError):
    """Raised for malformed input data; message carries the line position."""


@dataclass(frozen=True)
class ConceptVector:
    """Sparse real-valued feature vector: parallel (index, intensity) arrays.

    Indices are 0-based, strictly increasing; intensities are finite floats.
    """

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        if indices.ndim != 1 or values.ndim != 1 or indices.size != values.size:
            raise ValueError("indices and values must be 1-D arrays of equal length")
        if indices.size:
            if int(indices[0]) < 0:
                raise ValueError("concept indices must be non-negative")
            if indices.size > 1 and not np.all(np.diff(indices) > 0):
                raise ValueError("concept indices must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("intensities must be finite")

    @property
    def max_index(self) -> int:
        return int(self.indices[-1]) if self.indices.size else -1

    def densify(self, vocab_size: int) -> np.ndarray:
        if self.max_index >= vocab_size:
            raise ValueError(
                f"concept index {self.max_index} out of range for vocab size {vocab_size}"
            )
        dense = np.zeros(vocab_size, dtype=np.float64)
        dense[self.indices] = self.values
        return dense


@dataclass(frozen=True)
class LabelSpace:
    """Ordered collection of class identifiers.

    ``kind`` is one of ``binary``, ``multiclass``, or ``discretized-range``;
    for discretized ranges the tuple order is the total order of the bins.
    """

    classes: tuple[str, ...]
    kind: str = "multiclass"

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(str(c) for c in self.classes))
        if len(self.classes) < 2:
            raise ValueError("label space needs at least two classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class identifiers must be unique")
        if self.kind not in LABEL_KINDS:
            raise ValueError(f"unknown label kind {self.kind!r}")
        if self.kind == "binary" and len(self.classes) != 2:
            raise ValueError("binary label space must have exactly two classes")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def index_of(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise KeyError(f"label {name!r} not in label space") from None


@dataclass(frozen=True)
class Dataset:
    """Immutable labeled instance collection over a fixed concept vocabulary.

    Labels are stored as integer indices into ``label_space.classes``;
    instance ids are stable and unique (0-based line numbers for parsed
    files).
    """

    vocab_size: int
    label_space: LabelSpace
    vectors: tuple[ConceptVector, ...]
    labels: np.ndarray
    ids: np.ndarray

    def __post_init__(self) -> None:
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        object.__setattr__(self, "vectors", tuple(self.vectors))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)
        if self.vocab_size <= 0:
            raise ValueError("vocab_size must be positive")
        n = len(self.vectors)
        if labels.shape != (n,) or ids.shape != (n,):
            raise ValueError("vectors, labels, and ids must have equal length")
        if n == 0:
            raise ValueError("dataset must contain at least one instance")
        if labels.size and (labels.min() < 0 or labels.max() >= self.label_space.num_classes):
            raise ValueError("label index outside the label space")
        if len(set(ids.tolist())) != n:
            raise ValueError("instance ids must be unique")
        for vec in self.vectors:
            if vec.max_index >= self.vocab_size:
                raise ValueError(
                    f"concept index {vec.max_index} exceeds vocab size {self.vocab_size}"
                )

    @property
    def n(self) -> int:
        return len(self.vectors)

    @property
    def num_classes(self) -> int:
        return self.label_space.num_classes

    def to_dense(self) -> np.ndarray:
        """Materialize all instances as an (n, vocab_size) float64 matrix."""
        dense = np.zeros((self.n, self.vocab_size), dtype=np.float64)
        for row, vec in enumerate(self.vectors):
            dense[row, vec.indices] = vec.values
        return dense


@dataclass(frozen=True)
class FoldMap:
    """Assignment of instance ids to folds 1..num_folds at one stacking level."""

    level: int
    num_folds: int
    assignment: dict[int, int] = field(repr=False)

    def __post_init__(self) -> None:
        if self.level < 1:
            raise ValueError("level must be >= 1")
        if self.num_folds < 2:
            raise ValueError("need at least two folds")
        seen = set(self.assignment.values())
        if not seen.issubset(range(1, self.num_folds + 1)):
            raise ValueError("fold values must lie in 1..num_folds")
        if len(seen) != self.num_folds:
            raise ValueError("every fold must be non-empty")

    def fold_of(self, instance_id: int) -> int:
        try:
            return self.assignment[instance_id]
        except KeyError:
            raise KeyError(f"instance id {instance_id} not in fold map") from None

    def folds_for(self, ids: np.ndarray) -> np.ndarray:
        return np.array([self.fold_of(int(i)) for i in ids], dtype=np.int64)


def assign_folds(n: int, num_folds: int, level: int, seed: int) -> FoldMap:
    """Balanced fold assignment for ids 0..n-1: seeded shuffle, then round-robin.

    Deterministic for a fixed (n, num_folds, level, seed); fold sizes differ
    by at most one, so no fold is empty.
    """
    if num_folds < 2:
        raise ValueError("need at least two folds")
    if n < num_folds:
        raise ValueError(f"cannot split {n} instances into {num_folds} folds")
    rng = np.random.default_rng([seed, level, num_folds, n])
    order = rng.permutation(n)
    assignment = {int(order[pos]): (pos % num_folds) + 1 for pos in range(n)}
    return FoldMap(level=level, num_folds=num_folds, assignment=assignment)


def fold_complement(fold_map: FoldMap, instance_id: int, dataset: Dataset) -> set[int]:
    """Ids of all dataset instances whose fold differs from the given instance's."""
    own = fold_map.fold_of(instance_id)
    return {int(i) for i in dataset.ids if fold_map.fold_of(int(i)) != own}


def _canonical_label_token(token: str) -> str | None:
    # "+1" / "1" / "1.0" all canonicalize to "1"
    try:
        value = float(token)
    except ValueError:
        return None
    if np.isfinite(value) and value == int(value):
        return str(int(value))
    return None


def _build_label_lookup(label_map: dict[str, str]) -> dict[str, str]:
    lookup = dict(label_map)
    for token, name in label_map.items():
        canon = _canonical_label_token(token)
        if canon is None or canon == token:
            continue
        if canon in lookup and lookup[canon] != name:
            continue  # ambiguous; exact tokens only for this key
        lookup.setdefault(canon, name)
    return lookup


def parse_libsvm(
    source: str | bytes | io.IOBase,
    label_map: dict[str, str],
    vocab_size: int | None = None,
    kind: str | None = None,
) -> Dataset:
    """Parse LIBSVM text into a Dataset.

    1-based file indices become 0-based concept indices. The vocabulary size
    is ``vocab_size`` when given (callers align train/test explicitly),
    otherwise max index + 1. ``label_map`` maps the literal label token to a
    class identifier; integer-valued tokens also match in canonical form, so
    "+1" finds a "1" key. Instance ids are 0-based data-line numbers.
    """
    if isinstance(source, io.IOBase):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if not label_map:
        raise ValueError("label_map must not be empty")

    lookup = _build_label_lookup(label_map)
    classes: list[str] = []
    for name in label_map.values():
        if name not in classes:
            classes.append(name)
    if kind is None:
        kind = "binary" if len(classes) == 2 else "multiclass"
    label_space = LabelSpace(classes=tuple(classes), kind=kind)

    vectors: list[ConceptVector] = []
    labels: list[int] = []
    max_index = -1
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        token = tokens[0]
        name = lookup.get(token)
        if name is None:
            canon = _canonical_label_token(token)
            name = lookup.get(canon) if canon is not None else None
        if name is None:
            raise DataFormatError(f"line {lineno}: label {token!r} not in label_map")
        indices: list[int] = []
        values: list[float] = []
        prev = 0
        for pos, item in enumerate(tokens[1:], start=1):
            idx_text, sep, val_text = item.partition(":")
            if not sep:
                raise DataFormatError(f"line {lineno}, field {pos}: expected idx:val, got {item!r}")
            try:
                idx = int(idx_text)
                val = float(val_text)
            except ValueError:
                raise DataFormatError(
                    f"line {lineno}, field {pos}: malformed idx:val pair {item!r}"
                ) from None
            if idx < 1:
                raise DataFormatError(f"line {lineno}, field {pos}: index {idx} must be >= 1")
            if idx == prev:
                raise DataFormatError(f"line {lineno}, field {pos}: duplicate index {idx}")
            if idx < prev:
                raise DataFormatError(
                    f"line {lineno}, field {pos}: indices not increasing ({idx} after {prev})"
                )
            if not np.isfinite(val):
                raise DataFormatError(f"line {lineno}, field {pos}: non-finite value {val_text!r}")
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_index = max(max_index, indices[-1] if indices else -1)
        vectors.append(ConceptVector(np.array(indices, dtype=np.int64), np.array(values)))
        labels.append(label_space.index_of(name))

    if not vectors:
        raise DataFormatError("no instances found in input")
    if vocab_size is None:
        vocab_size = max(max_index + 1, 1)
    elif max_index >= vocab_size:
        raise DataFormatError(
            f"max concept index {max_index} exceeds declared vocab size {vocab_size}"
        )
    return Dataset(
        vocab_size=vocab_size,
        label_space=label_space,
        vectors=tuple(vectors),
        labels=np.array(labels, dtype=np.int64),
        ids=np.arange(len(vectors), dtype=np.int64),
    )


def write_libsvm(dataset: Dataset) -> str:
    """Render a Dataset back to LIBSVM text, labels as class identifiers.

    Values use shortest round-trip float formatting, so
    ``parse_libsvm(write_libsvm(ds), identity_map)`` reproduces ``ds``.
    """
    lines = []
    for vec, label in zip(dataset.vectors, dataset.labels):
        name = dataset.label_space.classes[int(label)]
        parts = [name]
        parts.extend(f"{int(i) + 1}:{float(v)!r}" for i, v in zip(vec.indices, vec.values))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def synth_gaussian_mixture(
    num_classes: int,
    dim: int,
    n: int,
    class_separation: float,
    seed: int,
) -> Dataset:
    """Class-balanced isotropic Gaussian clusters as a dense Dataset.

    Class c has unit-variance isotropic noise around a mean placed on the
    first axis at ``(c - (num_classes-1)/2) * class_separation``, so adjacent
    class means sit ``class_separation`` apart (two classes: +/- sep/2).
    Deterministic per seed. Class identifiers are "0".."num_classes-1".
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if n < num_classes:
        raise ValueError("need at least one instance per class")
    rng = np.random.default_rng([seed, num_classes, dim, n])
    counts = np.full(num_classes, n // num_classes, dtype=np.int64)
    counts[: n % num_classes] += 1

    features = rng.standard_normal((n, dim))
    labels = np.repeat(np.arange(num_classes), counts)
    offsets = (np.arange(num_classes) - (num_classes - 1) / 2.0) * class_separation
    features[:, 0] += offsets[labels]

    order = rng.permutation(n)
    features = features[order]
    labels = labels[order]

    all_indices = np.arange(dim, dtype=np.int64)
    vectors = tuple(ConceptVector(all_indices, row.copy()) for row in features)
    label_space = LabelSpace(
        classes=tuple(str(c) for c in range(num_classes)),
        kind="binary" if num_classes == 2 else "multiclass",
    )
    return Dataset(
        vocab_size=dim,
        label_space=label_space,
        vectors=vectors,
        labels=labels,
        ids=np.arange(n, dtype=np.int64),
    )


def gaussian_mixture_means(num_classes: int, dim: int, class_separation: float) -> np.ndarray:
    """True class means of :func:`synth_gaussian_mixture`, for Bayes-rule oracles."""
    means = np.zeros((num_classes, dim))
    means[:, 0] = (np.arange(num_classes) - (num_classes - 1) / 2.0) * class_separation
    return means
