"""Heterogeneous expert oracles: self-contained trainable classifiers.

Every expert maps a dense feature vector to a class-probability vector, so
outputs can be stacked, averaged, and blended downstream. The roster spans
distinct model families: empirical prior, multinomial logistic regression,
naive Bayes, k-nearest neighbors, a CART decision tree, one-vs-rest gradient
boosted trees, plus two structural experts (mean_aggregate, passthrough) that
operate on prior-level prediction blocks instead of raw concepts.

All fits are deterministic for a fixed (spec, data, seed); predictions are
pure functions of (model, input).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

EXPERT_KINDS = (
    "majority",
    "logistic",
    "naive_bayes",
    "knn",
    "cart_tree",
    "gbt",
    "mean_aggregate",
    "passthrough",
)

_DEFAULT_HYPERPARAMETERS: dict[str, dict] = {
    "majority": {},
    "logistic": {"lr": 0.1, "epochs": 200, "l2": 1e-4},
    "naive_bayes": {"alpha": 1.0, "variant": "auto"},
    "knn": {"k": 15},
    "cart_tree": {"max_depth": 6, "min_leaf": 5},
    "gbt": {"rounds": 50, "depth": 3, "shrinkage": 0.1, "min_leaf": 5},
    "mean_aggregate": {"blocks": None},
    "passthrough": {"block": -1},
}

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Block:
    """A labeled span of columns inside an augmented feature matrix."""

    name: str
    start: int
    width: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.width < 1:
            raise ValueError("block must have start >= 0 and width >= 1")

    @property
    def stop(self) -> int:
        return self.start + self.width


@dataclass(frozen=True)
class ExpertSpec:
    """Expert kind plus validated kind-specific hyperparameters."""

    kind: str
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in EXPERT_KINDS:
            raise ValueError(f"unknown expert kind {self.kind!r}; choose from {EXPERT_KINDS}")
        merged = dict(_DEFAULT_HYPERPARAMETERS[self.kind])
        unknown = set(self.hyperparameters) - set(merged)
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.kind}: {sorted(unknown)}")
        merged.update(self.hyperparameters)
        _validate_hyperparameters(self.kind, merged)
        object.__setattr__(self, "hyperparameters", merged)


def _validate_hyperparameters(kind: str, hp: dict) -> None:
    def positive(name: str, integer: bool = False) -> None:
        value = hp[name]
        if integer and not isinstance(value, (int, np.integer)):
            raise ValueError(f"{kind}.{name} must be an integer")
        if value <= 0:
            raise ValueError(f"{kind}.{name} must be positive")

    if kind == "logistic":
        positive("lr")
        positive("epochs", integer=True)
        if hp["l2"] < 0:
            raise ValueError("logistic.l2 must be non-negative")
    elif kind == "naive_bayes":
        if hp["alpha"] < 0:
            raise ValueError("naive_bayes.alpha must be non-negative")
        if hp["variant"] not in ("auto", "multinomial", "gaussian"):
            raise ValueError("naive_bayes.variant must be auto, multinomial, or gaussian")
    elif kind == "knn":
        positive("k", integer=True)
    elif kind == "cart_tree":
        positive("max_depth", integer=True)
        positive("min_leaf", integer=True)
    elif kind == "gbt":
        positive("rounds", integer=True)
        positive("depth", integer=True)
        positive("shrinkage")
        positive("min_leaf", integer=True)
    elif kind == "mean_aggregate":
        blocks = hp["blocks"]
        if blocks is not None:
            blocks = tuple(int(b) for b in blocks)
            if any(b < 0 for b in blocks):
                raise ValueError("mean_aggregate.blocks entries must be non-negative")
            if len(set(blocks)) != len(blocks):
                raise ValueError("mean_aggregate.blocks entries must be distinct")
            hp["blocks"] = blocks
    elif kind == "passthrough":
        if not isinstance(hp["block"], (int, np.integer)):
            raise ValueError("passthrough.block must be an integer index")


@dataclass(frozen=True)
class TrainedExpert:
    """Fitted expert: opaque params plus instrumentation of what it saw."""

    spec: ExpertSpec
    params: dict
    input_width: int
    num_classes: int
    trained_on: frozenset[int]


def _as_matrix(features: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X


def fit_expert(
    spec: ExpertSpec,
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    seed: int | list[int] = 0,
    ids: np.ndarray | None = None,
    block_layout: tuple[Block, ...] = (),
) -> TrainedExpert:
    """Train one expert on (features, labels).

    ``ids`` are the stable instance ids behind the rows (defaults to row
    numbers); they are recorded verbatim in ``trained_on`` so leakage checks
    can compare against fold complements. ``block_layout`` names the expert
    output blocks present in the feature columns; only mean_aggregate and
    passthrough consult it.
    """
    X = _as_matrix(features)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot fit an expert on empty data")
    if y.shape != (n,):
        raise ValueError("labels must align with feature rows")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError("labels must lie in 0..num_classes-1")
    for block in block_layout:
        if block.stop > d:
            raise ValueError(f"block {block.name} exceeds feature width {d}")
    if ids is None:
        ids = np.arange(n, dtype=np.int64)
    trained_on = frozenset(int(i) for i in ids)
    if len(trained_on) != n:
        raise ValueError("instance ids must be unique")

    hp = spec.hyperparameters
    if spec.kind == "majority":
        params = _fit_majority(y, num_classes)
    elif spec.kind == "logistic":
        params = _fit_logistic(X, y, num_classes, hp)
    elif spec.kind == "naive_bayes":
        params = _fit_naive_bayes(X, y, num_classes, hp)
    elif spec.kind == "knn":
        params = _fit_knn(X, y, ids, hp)
    elif spec.kind == "cart_tree":
        params = _fit_cart(X, y, num_classes, hp)
    elif spec.kind == "gbt":
        params = _fit_gbt(X, y, num_classes, hp)
    elif spec.kind == "mean_aggregate":
        params = _fit_mean_aggregate(block_layout, num_classes, hp)
    else:
        params = _fit_passthrough(block_layout, num_classes, hp)

    return TrainedExpert(
        spec=spec,
        params=params,
        input_width=d,
        num_classes=num_classes,
        trained_on=trained_on,
    )


def predict_batch(model: TrainedExpert, features: np.ndarray) -> np.ndarray:
    """Class-probability rows for a feature matrix; (n, num_classes)."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_width:
        raise ValueError(
            f"expected feature width {model.input_width}, got shape {X.shape}"
        )
    kind = model.spec.kind
    if kind == "majority":
        probs = np.tile(model.params["prior"], (X.shape[0], 1))
    elif kind == "logistic":
        probs = _predict_logistic(model.params, X)
    elif kind == "naive_bayes":
        probs = _predict_naive_bayes(model.params, X)
    elif kind == "knn":
        probs = _predict_knn(model.params, X, model.num_classes)
    elif kind == "cart_tree":
        probs = _predict_tree_nodes(model.params, X)
    elif kind == "gbt":
        probs = _predict_gbt(model.params, X, model.num_classes)
    elif kind == "mean_aggregate":
        probs = _predict_mean_aggregate(model.params, X, model.num_classes)
    else:
        probs = _predict_passthrough(model.params, X, model.num_classes)

    probs = np.maximum(probs, 0.0)
    total = probs.sum(axis=1, keepdims=True)
    degenerate = total[:, 0] <= 0
    if np.any(degenerate):
        probs[degenerate] = 1.0 / model.num_classes
        total = probs.sum(axis=1, keepdims=True)
    return probs / total


def predict_expert(model: TrainedExpert, x: np.ndarray) -> np.ndarray:
    """Class-probability vector for one dense feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_expert expects a single dense vector")
    return predict_batch(model, x[None, :])[0]


# --- empirical prior ---------------------------------------------------


def _fit_majority(y: np.ndarray, num_classes: int) -> dict:
    counts = np.bincount(y, minlength=num_classes).astype(np.float64)
    return {"prior": counts / counts.sum()}


# --- multinomial logistic regression ------------------------------------


def _fit_logistic(X: np.ndarray, y: np.ndarray, num_classes: int, hp: dict) -> dict:
    n, d = X.shape
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    Xs = np.hstack([(X - mu) / sd, np.ones((n, 1))])

    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    W = np.zeros((num_classes, d + 1))
    lr, epochs, l2 = hp["lr"], hp["epochs"], hp["l2"]
    for _ in range(epochs):
        P = _softmax_rows(Xs @ W.T)
        grad = (P - onehot).T @ Xs / n
        grad[:, :d] += 2.0 * l2 * W[:, :d]
        W -= lr * grad
    return {"weights": W, "mu": mu, "sd": sd}


def _predict_logistic(params: dict, X: np.ndarray) -> np.ndarray:
    Xs = np.hstack([(X - params["mu"]) / params["sd"], np.ones((X.shape[0], 1))])
    return _softmax_rows(Xs @ params["weights"].T)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# --- naive Bayes ---------------------------------------------------------


def _fit_naive_bayes(X: np.ndarray, y: np.ndarray, num_classes: int, hp: dict) -> dict:
    variant = hp["variant"]
    if variant == "auto":
        variant = "multinomial" if X.min() >= 0 else "gaussian"
    elif variant == "multinomial" and X.min() < 0:
        raise ValueError("multinomial naive Bayes requires non-negative features")

    counts = np.bincount(y, minlength=num_classes).astype(np.float64)
    log_prior = np.log(np.maximum(counts / counts.sum(), PROB_CLAMP))
    if variant == "multinomial":
        alpha = hp["alpha"]
        feature_totals = np.zeros((num_classes, X.shape[1]))
        for c in range(num_classes):
            feature_totals[c] = X[y == c].sum(axis=0)
        smoothed = feature_totals + alpha
        log_theta = np.log(smoothed / smoothed.sum(axis=1, keepdims=True))
        return {"variant": "multinomial", "log_prior": log_prior, "log_theta": log_theta}

    means = np.zeros((num_classes, X.shape[1]))
    variances = np.ones((num_classes, X.shape[1]))
    for c in range(num_classes):
        rows = X[y == c]
        if rows.shape[0]:
            means[c] = rows.mean(axis=0)
            variances[c] = rows.var(axis=0) + 1e-9
    return {"variant": "gaussian", "log_prior": log_prior, "means": means, "variances": variances}


def _predict_naive_bayes(params: dict, X: np.ndarray) -> np.ndarray:
    if params["variant"] == "multinomial":
        log_post = params["log_prior"][None, :] + X @ params["log_theta"].T
    else:
        means, variances = params["means"], params["variances"]
        # (n, classes): sum over features of the Gaussian log density
        sq = ((X[:, None, :] - means[None, :, :]) ** 2) / variances[None, :, :]
        log_like = -0.5 * (np.log(2.0 * np.pi * variances).sum(axis=1)[None, :] + sq.sum(axis=2))
        log_post = params["log_prior"][None, :] + log_like
    return _softmax_rows(log_post)


# --- k-nearest neighbors -------------------------------------------------


def _fit_knn(X: np.ndarray, y: np.ndarray, ids: np.ndarray, hp: dict) -> dict:
    k = int(hp["k"])
    if k > X.shape[0]:
        warnings.warn(
            f"knn k={k} exceeds training size {X.shape[0]}; clamping", stacklevel=2
        )
        k = X.shape[0]
    return {"train_x": X.copy(), "train_y": y.copy(), "train_ids": np.asarray(ids, dtype=np.int64).copy(), "k": k}


def _predict_knn(params: dict, X: np.ndarray, num_classes: int) -> np.ndarray:
    train_x, train_y = params["train_x"], params["train_y"]
    train_ids, k = params["train_ids"], int(params["k"])
    train_sq = np.einsum("ij,ij->i", train_x, train_x)
    out = np.empty((X.shape[0], num_classes))
    for start in range(0, X.shape[0], 256):
        chunk = X[start : start + 256]
        d2 = np.maximum(
            np.einsum("ij,ij->i", chunk, chunk)[:, None]
            + train_sq[None, :]
            - 2.0 * chunk @ train_x.T,
            0.0,
        )
        for row_idx, row in enumerate(d2):
            kth = np.partition(row, k - 1)[k - 1]
            # include every point tied with the kth distance, then settle the
            # tie by lowest instance id
            candidates = np.flatnonzero(row <= kth * (1.0 + 1e-12) + 1e-12)
            order = candidates[np.lexsort((train_ids[candidates], row[candidates]))]
            votes = np.bincount(train_y[order[:k]], minlength=num_classes)
            out[start + row_idx] = (votes + 1.0) / (k + num_classes)
    return out


# --- CART decision tree ----------------------------------------------------


def _fit_cart(X: np.ndarray, y: np.ndarray, num_classes: int, hp: dict) -> dict:
    max_depth, min_leaf = int(hp["max_depth"]), int(hp["min_leaf"])
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[np.ndarray] = []

    def leaf_distribution(idx: np.ndarray) -> np.ndarray:
        counts = np.bincount(y[idx], minlength=num_classes).astype(np.float64)
        return counts / counts.sum()

    def emit_leaf(idx: np.ndarray) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_distribution(idx))
        return node

    def grow(idx: np.ndarray, depth: int) -> int:
        counts = np.bincount(y[idx], minlength=num_classes)
        n_node = idx.size
        parent_gini = 1.0 - np.sum((counts / n_node) ** 2)
        if depth >= max_depth or counts.max() == n_node or n_node < 2 * min_leaf:
            return emit_leaf(idx)
        best = _best_gini_split(X[idx], y[idx], num_classes, min_leaf)
        if best is None or best[2] >= parent_gini - 1e-12:
            return emit_leaf(idx)
        j, thr, _ = best
        node = len(feature)
        feature.append(j)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        value.append(leaf_distribution(idx))
        go_left = X[idx, j] <= thr
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return {
        "feature": np.array(feature, dtype=np.int64),
        "threshold": np.array(threshold, dtype=np.float64),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "value": np.array(value, dtype=np.float64),
    }


def _best_gini_split(
    X: np.ndarray, y: np.ndarray, num_classes: int, min_leaf: int
) -> tuple[int, float, float] | None:
    """Lowest weighted child Gini over all (feature, boundary) candidates.

    Scans features in index order and requires strict improvement to replace
    the incumbent, so ties resolve to the lowest feature index and the
    earliest boundary within a feature.
    """
    n = X.shape[0]
    best: tuple[int, float, float] | None = None
    boundary_n = np.arange(1, n)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        valid = (xs[1:] > xs[:-1]) & (boundary_n >= min_leaf) & (n - boundary_n >= min_leaf)
        if not np.any(valid):
            continue
        onehot = np.zeros((n, num_classes))
        onehot[np.arange(n), y[order]] = 1.0
        left_counts = np.cumsum(onehot, axis=0)[:-1]
        totals = left_counts[-1] + onehot[-1]
        n_l = boundary_n.astype(np.float64)
        n_r = n - n_l
        gini_l = 1.0 - np.sum((left_counts / n_l[:, None]) ** 2, axis=1)
        gini_r = 1.0 - np.sum(((totals - left_counts) / n_r[:, None]) ** 2, axis=1)
        weighted = (n_l * gini_l + n_r * gini_r) / n
        weighted[~valid] = np.inf
        pos = int(np.argmin(weighted))
        score = float(weighted[pos])
        if np.isfinite(score) and (best is None or score < best[2] - 1e-12):
            best = (j, float((xs[pos] + xs[pos + 1]) / 2.0), score)
    return best


def _predict_tree_nodes(params: dict, X: np.ndarray) -> np.ndarray:
    feature, threshold = params["feature"], params["threshold"]
    left, right, value = params["left"], params["right"], params["value"]
    node = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        at_split = feature[node] >= 0
        if not np.any(at_split):
            break
        rows = np.flatnonzero(at_split)
        j = feature[node[rows]]
        goes_left = X[rows, j] <= threshold[node[rows]]
        node[rows] = np.where(goes_left, left[node[rows]], right[node[rows]])
    return value[node]


# --- gradient boosted trees (one-vs-rest) -----------------------------------


def _fit_gbt(X: np.ndarray, y: np.ndarray, num_classes: int, hp: dict) -> dict:
    rounds, depth = int(hp["rounds"]), int(hp["depth"])
    shrinkage, min_leaf = float(hp["shrinkage"]), int(hp["min_leaf"])
    n = X.shape[0]
    targets = np.zeros((num_classes, n))
    for c in range(num_classes):
        targets[c] = (y == c).astype(np.float64)

    scores = np.zeros((num_classes, n))
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaf_value: list[float] = []
    tree_offsets: list[int] = [0]
    tree_class: list[int] = []
    trace = np.zeros(rounds)

    for r in range(rounds):
        for c in range(num_classes):
            p = 1.0 / (1.0 + np.exp(-scores[c]))
            g = p - targets[c]
            h = np.maximum(p * (1.0 - p), 1e-12)
            nodes = _grow_newton_tree(X, g, h, depth, min_leaf)
            for f_, t_, l_, r_, v_ in nodes:
                feature.append(f_)
                threshold.append(t_)
                left.append(l_)
                right.append(r_)
                leaf_value.append(v_)
            tree_offsets.append(len(feature))
            tree_class.append(c)
            scores[c] += shrinkage * _eval_newton_tree(nodes, X)
        p_all = 1.0 / (1.0 + np.exp(-scores))
        p_all = np.clip(p_all, PROB_CLAMP, 1.0 - PROB_CLAMP)
        trace[r] = float(
            -np.mean(targets * np.log(p_all) + (1.0 - targets) * np.log(1.0 - p_all))
        )

    return {
        "feature": np.array(feature, dtype=np.int64),
        "threshold": np.array(threshold, dtype=np.float64),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "leaf_value": np.array(leaf_value, dtype=np.float64),
        "tree_offsets": np.array(tree_offsets, dtype=np.int64),
        "tree_class": np.array(tree_class, dtype=np.int64),
        "shrinkage": shrinkage,
        "trace": trace,
    }


def _grow_newton_tree(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, max_depth: int, min_leaf: int
) -> list[tuple[int, float, int, int, float]]:
    """Regression tree on gradient statistics; returns node tuples.

    Node layout: (feature, threshold, left, right, leaf_value) with
    feature = -1 at leaves; indices local to this tree, root first.
    """
    nodes: list[tuple[int, float, int, int, float]] = []

    def emit_leaf(idx: np.ndarray) -> int:
        nodes.append((-1, 0.0, -1, -1, float(-g[idx].sum() / (h[idx].sum() + 1e-9))))
        return len(nodes) - 1

    def grow(idx: np.ndarray, depth: int) -> int:
        if depth >= max_depth or idx.size < 2 * min_leaf:
            return emit_leaf(idx)
        best = _best_newton_split(X[idx], g[idx], h[idx], min_leaf)
        if best is None:
            return emit_leaf(idx)
        j, thr = best
        node = len(nodes)
        nodes.append((j, thr, -1, -1, 0.0))
        go_left = X[idx, j] <= thr
        left_child = grow(idx[go_left], depth + 1)
        right_child = grow(idx[~go_left], depth + 1)
        nodes[node] = (j, thr, left_child, right_child, 0.0)
        return node

    grow(np.arange(X.shape[0]), 0)
    return nodes


def _best_newton_split(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, min_leaf: int
) -> tuple[int, float] | None:
    n = X.shape[0]
    g_total, h_total = g.sum(), h.sum()
    parent_score = g_total**2 / (h_total + 1e-9)
    boundary_n = np.arange(1, n)
    best: tuple[int, float, float] | None = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        valid = (xs[1:] > xs[:-1]) & (boundary_n >= min_leaf) & (n - boundary_n >= min_leaf)
        if not np.any(valid):
            continue
        g_left = np.cumsum(g[order])[:-1]
        h_left = np.cumsum(h[order])[:-1]
        gain = (
            g_left**2 / (h_left + 1e-9)
            + (g_total - g_left) ** 2 / (h_total - h_left + 1e-9)
            - parent_score
        )
        gain[~valid] = -np.inf
        pos = int(np.argmax(gain))
        score = float(gain[pos])
        if score > 1e-12 and (best is None or score > best[2] + 1e-12):
            best = (j, float((xs[pos] + xs[pos + 1]) / 2.0), score)
    return (best[0], best[1]) if best else None


def _eval_newton_tree(
    nodes: list[tuple[int, float, int, int, float]], X: np.ndarray
) -> np.ndarray:
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while nodes[node][0] >= 0:
            j, thr, l_, r_, _ = nodes[node]
            node = l_ if X[i, j] <= thr else r_
        out[i] = nodes[node][4]
    return out


def _predict_gbt(params: dict, X: np.ndarray, num_classes: int) -> np.ndarray:
    feature, threshold = params["feature"], params["threshold"]
    left, right, leaf_value = params["left"], params["right"], params["leaf_value"]
    offsets, tree_class = params["tree_offsets"], params["tree_class"]
    shrinkage = float(params["shrinkage"])
    scores = np.zeros((X.shape[0], num_classes))
    for t in range(tree_class.size):
        base = int(offsets[t])
        node = np.full(X.shape[0], base, dtype=np.int64)
        while True:
            at_split = feature[node] >= 0
            if not np.any(at_split):
                break
            rows = np.flatnonzero(at_split)
            j = feature[node[rows]]
            goes_left = X[rows, j] <= threshold[node[rows]]
            node[rows] = base + np.where(goes_left, left[node[rows]], right[node[rows]])
        scores[:, int(tree_class[t])] += shrinkage * leaf_value[node]
    p = 1.0 / (1.0 + np.exp(-scores))
    return p / p.sum(axis=1, keepdims=True)


# --- structural experts over prior-level blocks ------------------------------


def _resolve_blocks(
    block_layout: tuple[Block, ...], num_classes: int, wanted: tuple[int, ...] | None
) -> list[Block]:
    if wanted is None:
        chosen = list(block_layout)
    else:
        if any(b >= len(block_layout) for b in wanted):
            raise ValueError(
                f"block index out of range: layout has {len(block_layout)} blocks"
            )
        chosen = [block_layout[b] for b in wanted]
    for block in chosen:
        if block.width != num_classes:
            raise ValueError(
                f"block {block.name} has width {block.width}, expected {num_classes}"
            )
    return chosen


def _fit_mean_aggregate(
    block_layout: tuple[Block, ...], num_classes: int, hp: dict
) -> dict:
    chosen = _resolve_blocks(block_layout, num_classes, hp["blocks"])
    # no prior-level blocks: degrade to the uniform distribution
    return {"starts": np.array([b.start for b in chosen], dtype=np.int64)}


def _predict_mean_aggregate(params: dict, X: np.ndarray, num_classes: int) -> np.ndarray:
    starts = params["starts"]
    if starts.size == 0:
        return np.full((X.shape[0], num_classes), 1.0 / num_classes)
    acc = np.zeros((X.shape[0], num_classes))
    for start in starts:
        acc += X[:, int(start) : int(start) + num_classes]
    return acc / starts.size


def _fit_passthrough(block_layout: tuple[Block, ...], num_classes: int, hp: dict) -> dict:
    if not block_layout:
        raise ValueError("passthrough expert needs at least one prior-level block")
    index = int(hp["block"])
    block = block_layout[index]  # negative indices select from the end
    if block.width != num_classes:
        raise ValueError(
            f"block {block.name} has width {block.width}, expected {num_classes}"
        )
    return {"start": int(block.start)}


def _predict_passthrough(params: dict, X: np.ndarray, num_classes: int) -> np.ndarray:
    start = int(params["start"])
    return X[:, start : start + num_classes].copy()
