"""Shared test utilities: fixtures, oracles, and the gradient checker."""

from __future__ import annotations

import numpy as np

from supercone.neuralcore import MetaParams, Structure, loss_and_gradients, meta_loss


def random_rows(st: Structure, n: int, rng: np.random.Generator) -> np.ndarray:
    """Random augmented rows: normal concepts plus valid probability blocks."""
    parts = [rng.normal(size=(n, st.vocab_size))]
    for _ in range(st.num_blocks):
        raw = np.abs(rng.normal(size=(n, st.num_classes))) + 0.1
        parts.append(raw / raw.sum(axis=1, keepdims=True))
    return np.hstack(parts)


def jitter_biases(params: MetaParams, rng: np.random.Generator) -> None:
    """Move every bias off zero.

    Zero biases let dead relu rows propagate exactly-zero pre-activations,
    parking units on the relu kink where finite differences and any one-sided
    derivative convention disagree; the jitter makes that event measure-zero.
    """
    for name, arr in params.flatten():
        if name.endswith("/b"):
            arr += rng.uniform(-0.2, 0.2, size=arr.shape)


def max_grad_error(
    params: MetaParams,
    rows: np.ndarray,
    labels: np.ndarray,
    steps: tuple[float, ...] = (1e-4, 1e-6),
    tol: float = 1e-4,
) -> float:
    """Worst relative error of analytic gradients vs central differences.

    A coordinate failing at the first step is retried at smaller ones: a relu
    kink inside the perturbation interval corrupts the quotient but moves out
    of range as the step shrinks, while a genuine gradient bug stays wrong at
    every step. The reported error per coordinate is the best across steps.
    """
    _, grads = loss_and_gradients(params, rows, labels)
    worst = 0.0
    for name, arr in params.flatten():
        flat = arr.ravel()
        gflat = grads[name].ravel()
        for idx in range(flat.size):
            best = np.inf
            for step in steps:
                orig = flat[idx]
                flat[idx] = orig + step
                plus = meta_loss(params, rows, labels)
                flat[idx] = orig - step
                minus = meta_loss(params, rows, labels)
                flat[idx] = orig
                fd = (plus - minus) / (2.0 * step)
                rel = abs(fd - gflat[idx]) / max(abs(fd), abs(gflat[idx]), 1e-3)
                best = min(best, rel)
                if best < tol:
                    break
            worst = max(worst, best)
    return worst


def params_bytes(params: MetaParams) -> bytes:
    return b"|".join(name.encode() + arr.tobytes() for name, arr in params.flatten())


# --- brute-force metric oracles (independent of supercone.metrics) ---------


def oracle_binary_auc(score: np.ndarray, is_pos: np.ndarray) -> float:
    """O(n^2) pair counting: wins + half-credit for ties."""
    pos = score[is_pos]
    neg = score[~is_pos]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def oracle_weighted_ovr_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    accum, weight = 0.0, 0.0
    for c in range(scores.shape[1]):
        is_pos = labels == c
        n_pos = int(is_pos.sum())
        if n_pos == 0 or n_pos == len(labels):
            continue
        accum += n_pos * oracle_binary_auc(scores[:, c], is_pos)
        weight += n_pos
    return accum / weight


def oracle_confusion(pred: np.ndarray, true: np.ndarray, num_classes: int) -> np.ndarray:
    matrix = np.zeros((num_classes, num_classes))
    for p, t in zip(pred, true):
        matrix[int(t), int(p)] += 1
    return matrix


def oracle_weighted_f1(pred: np.ndarray, true: np.ndarray, num_classes: int) -> float:
    matrix = oracle_confusion(pred, true, num_classes)
    total = 0.0
    for c in range(num_classes):
        tp = matrix[c, c]
        p = tp / matrix[:, c].sum() if matrix[:, c].sum() else 0.0
        r = tp / matrix[c, :].sum() if matrix[c, :].sum() else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        total += matrix[c, :].sum() * f1
    return total / len(true)


def oracle_kappa(pred: np.ndarray, true: np.ndarray, num_classes: int) -> float:
    matrix = oracle_confusion(pred, true, num_classes)
    n = len(true)
    p_o = np.trace(matrix) / n
    p_e = sum(matrix[c, :].sum() * matrix[:, c].sum() for c in range(num_classes)) / n**2
    return (p_o - p_e) / (1.0 - p_e)


def oracle_log_loss(scores: np.ndarray, labels: np.ndarray, clamp: float = 1e-15) -> float:
    total = 0.0
    for row, label in zip(scores, labels):
        total += -np.log(min(max(row[int(label)], clamp), 1.0 - clamp))
    return total / len(labels)


def dataset_from_dense(X: np.ndarray, labels: np.ndarray, num_classes: int):
    """Wrap a dense matrix as a Dataset (sequential ids, generic class names)."""
    from supercone.dataio import ConceptVector, Dataset, LabelSpace

    X = np.asarray(X, dtype=np.float64)
    vectors = []
    for row in X:
        nz = np.flatnonzero(row)
        vectors.append(ConceptVector(nz.astype(np.int64), row[nz]))
    space = LabelSpace(tuple(f"class{c}" for c in range(num_classes)), "multiclass")
    return Dataset(
        vocab_size=X.shape[1],
        label_space=space,
        vectors=tuple(vectors),
        labels=np.asarray(labels, dtype=np.int64),
        ids=np.arange(len(labels), dtype=np.int64),
    )


def stacking_fixtures() -> list[tuple[str, "object", "object"]]:
    """Small end-to-end fixtures: (name, train Dataset, StackConfig).

    Shared between the stacking tests and the acceptance gate so the blend
    dominance property is always checked on the same corpus. Deliberately
    varied: class counts, separations, rosters, depths.
    """
    from supercone.dataio import synth_gaussian_mixture
    from supercone.experts import ExpertSpec
    from supercone.metastack import StackConfig, uniform_rosters

    def cfg(rosters, **kw):
        base = dict(
            V=3, E=2, L=1, width=8, gate_layers=2, comb_layers=2,
            lr=0.05, epochs=500, full_batch=True, seed=11,
        )
        base.update(kw)
        return StackConfig(rosters=rosters, **base)

    fixtures = []
    data = synth_gaussian_mixture(n=200, num_classes=2, dim=4, class_separation=2.5, seed=101)
    fixtures.append(
        (
            "two-class, logistic + majority",
            data,
            cfg(((ExpertSpec("logistic"), ExpertSpec("majority")),)),
        )
    )
    data = synth_gaussian_mixture(n=150, num_classes=3, dim=3, class_separation=1.5, seed=202)
    fixtures.append(
        (
            "three-class, bayes + knn + majority",
            data,
            cfg(
                (
                    (
                        ExpertSpec("naive_bayes"),
                        ExpertSpec("knn", {"k": 5}),
                        ExpertSpec("majority"),
                    ),
                ),
                V=2,
            ),
        )
    )
    data = synth_gaussian_mixture(n=120, num_classes=2, dim=3, class_separation=1.0, seed=303)
    fixtures.append(
        (
            "two-level tree stack, weak separation",
            data,
            cfg(
                uniform_rosters(
                    [ExpertSpec("cart_tree", {"max_depth": 3}), ExpertSpec("majority")], 2
                ),
                V=2,
                width=6,
            ),
        )
    )
    data = synth_gaussian_mixture(n=100, num_classes=2, dim=2, class_separation=2.0, seed=404)
    fixtures.append(("no experts (K=0)", data, cfg((),)))
    return fixtures


def leakage_sweep(seeds, depths, fold_counts) -> int:
    """Check every fold replica never predicted an instance it trained on.

    Builds the meta levels with instrumentation across the grid and asserts
    the id sets are disjoint; returns the number of replicas checked.
    """
    from supercone.dataio import synth_gaussian_mixture, assign_folds
    from supercone.experts import ExpertSpec
    from supercone.metastack import AugmentedDataset, build_meta_level, uniform_rosters

    roster = [ExpertSpec("majority"), ExpertSpec("knn", {"k": 3})]
    checked = 0
    for seed in seeds:
        for K in depths:
            for V in fold_counts:
                data = synth_gaussian_mixture(
                    n=60, num_classes=2, dim=3, class_separation=1.5, seed=seed
                )
                log = []
                aug = AugmentedDataset.from_dataset(data)
                for k in range(1, K + 1):
                    fold_map = assign_folds(data.n, V, level=k, seed=seed)
                    aug = build_meta_level(
                        k, aug, uniform_rosters(roster, K)[k - 1], fold_map, seed, log
                    )
                assert len(log) == K * len(roster) * V
                for record in log:
                    assert record.expert is not None
                    trained = record.expert.trained_on
                    predicted = set(record.predicted_ids)
                    assert trained, "replica recorded no training ids"
                    assert predicted, "replica predicted no rows"
                    assert not (trained & predicted), (
                        f"leak: seed={seed} K={K} V={V} level={record.level} "
                        f"expert={record.expert_index} fold={record.fold}"
                    )
                    checked += 1
    return checked
