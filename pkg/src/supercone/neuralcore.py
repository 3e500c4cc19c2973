"""Dense numerical kernel for the meta model.

Implements the complementary expert (a mixture of inner expert stacks with a
softmax gate and a shared embedding, summed over depth) and the combination
network that maps original features to a softmax weighting over all
candidates. Both are differentiated by hand with reverse-mode accumulation
over this fixed architecture; expert output blocks enter the forward pass as
frozen columns and never receive gradients. Double precision throughout;
gradient-check tolerances assume it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Structure:
    """Immutable architecture description; fixes every parameter shape.

    num_blocks is T, the count of heterogeneous expert output blocks visible
    to the combination network; candidates number T+1 with the complementary
    expert at index 0.
    """

    vocab_size: int
    num_classes: int
    num_blocks: int
    E: int = 3
    L: int = 3
    width: int = 32
    gate_layers: int = 2
    comb_layers: int = 3

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be >= 0")
        if self.E < 1:
            raise ValueError("E must be >= 1")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if self.width < 1 or self.gate_layers < 1 or self.comb_layers < 1:
            raise ValueError("width and layer counts must be >= 1")

    @property
    def row_width(self) -> int:
        return self.vocab_size + self.num_blocks * self.num_classes


@dataclass
class DenseLayer:
    """Affine map plus activation; weight is (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str  # "relu" or "identity"


def _stack_dims(in_dim: int, out_dim: int, hidden: int, layers: int) -> list[tuple[int, int]]:
    if layers == 1:
        return [(out_dim, in_dim)]
    dims = [(hidden, in_dim)]
    dims.extend((hidden, hidden) for _ in range(layers - 2))
    dims.append((out_dim, hidden))
    return dims


@dataclass
class MetaParams:
    """All jointly learned weights: complementary expert + combination network."""

    structure: Structure
    embed: DenseLayer
    inner: tuple[tuple[DenseLayer, ...], ...]  # E stacks of L projections
    gate: tuple[DenseLayer, ...]
    tower: DenseLayer
    comb: tuple[DenseLayer, ...]

    def flatten(self) -> list[tuple[str, np.ndarray]]:
        """Canonical (name, array) order; shared by grads, Adam, and the model file."""
        out = [("embed/W", self.embed.weight), ("embed/b", self.embed.bias)]
        for t, stack in enumerate(self.inner):
            for i, layer in enumerate(stack, start=1):
                out.append((f"inner/{t}/{i}/W", layer.weight))
                out.append((f"inner/{t}/{i}/b", layer.bias))
        for l, layer in enumerate(self.gate):
            out.append((f"gate/{l}/W", layer.weight))
            out.append((f"gate/{l}/b", layer.bias))
        out.append(("tower/W", self.tower.weight))
        out.append(("tower/b", self.tower.bias))
        for l, layer in enumerate(self.comb):
            out.append((f"comb/{l}/W", layer.weight))
            out.append((f"comb/{l}/b", layer.bias))
        return out

    @property
    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.flatten())


def structure_param_count(st: Structure) -> int:
    """Closed-form parameter count implied by a Structure."""

    def stack_count(in_dim: int, out_dim: int, layers: int) -> int:
        return sum(o * i + o for o, i in _stack_dims(in_dim, out_dim, st.width, layers))

    total = st.width * st.vocab_size + st.width  # embed
    total += st.E * st.L * (st.width * st.width + st.width)  # projections
    total += stack_count(st.vocab_size, st.E, st.gate_layers)
    total += st.num_classes * st.width + st.num_classes  # tower
    total += stack_count(st.vocab_size, st.num_blocks + 1, st.comb_layers)
    return total


def init_meta_params(
    st: Structure, seed: int | list[int] = 0, scheme: str = "fan_in"
) -> MetaParams:
    """Seeded initialization: uniform fan-in weights, zero biases.

    scheme="zero" zeroes the weights too, giving exactly uniform outputs
    everywhere (useful as an analytic reference point).
    """
    if scheme not in ("fan_in", "zero"):
        raise ValueError("scheme must be fan_in or zero")
    rng = np.random.default_rng(seed)

    def layer(out_dim: int, in_dim: int, activation: str) -> DenseLayer:
        if scheme == "zero":
            weight = np.zeros((out_dim, in_dim))
        else:
            limit = np.sqrt(6.0 / (in_dim + out_dim))
            weight = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        return DenseLayer(weight=weight, bias=np.zeros(out_dim), activation=activation)

    def stack(in_dim: int, out_dim: int, layers: int) -> tuple[DenseLayer, ...]:
        dims = _stack_dims(in_dim, out_dim, st.width, layers)
        return tuple(
            layer(o, i, "identity" if idx == len(dims) - 1 else "relu")
            for idx, (o, i) in enumerate(dims)
        )

    embed = layer(st.width, st.vocab_size, "relu")
    inner = tuple(
        tuple(layer(st.width, st.width, "relu") for _ in range(st.L)) for _ in range(st.E)
    )
    gate = stack(st.vocab_size, st.E, st.gate_layers)
    tower = layer(st.num_classes, st.width, "identity")
    comb = stack(st.vocab_size, st.num_blocks + 1, st.comb_layers)
    return MetaParams(
        structure=st, embed=embed, inner=inner, gate=gate, tower=tower, comb=comb
    )


def softmax(v: np.ndarray) -> np.ndarray:
    """Max-subtracted stable softmax of a single vector."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _mlp_forward(layers: tuple[DenseLayer, ...], X: np.ndarray):
    """Run a stack; returns (output, caches) with caches = [(input, pre-act)]."""
    caches = []
    a = X
    for layer in layers:
        z = a @ layer.weight.T + layer.bias
        caches.append((a, z))
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return a, caches


def _mlp_backward(
    layers: tuple[DenseLayer, ...],
    caches,
    dout: np.ndarray,
    grads: dict[str, np.ndarray],
    prefix: str,
) -> np.ndarray:
    d = dout
    for idx in range(len(layers) - 1, -1, -1):
        a_in, z = caches[idx]
        if layers[idx].activation == "relu":
            d = d * (z > 0)
        grads[f"{prefix}/{idx}/W"] += d.T @ a_in
        grads[f"{prefix}/{idx}/b"] += d.sum(axis=0)
        d = d @ layers[idx].weight
    return d


def _comp_forward(params: MetaParams, X: np.ndarray):
    """Complementary expert forward over a batch; returns probs + caches."""
    st = params.structure
    z_embed = X @ params.embed.weight.T + params.embed.bias
    a0 = np.maximum(z_embed, 0.0)

    inner_z: list[list[np.ndarray]] = []
    inner_a: list[list[np.ndarray]] = []
    depth_sums = np.empty((X.shape[0], st.E, st.width))
    for t in range(st.E):
        zs: list[np.ndarray] = []
        activations: list[np.ndarray] = [a0]
        total = a0.copy()
        for layer in params.inner[t]:
            z = activations[-1] @ layer.weight.T + layer.bias
            a = np.maximum(z, 0.0)
            zs.append(z)
            activations.append(a)
            total += a
        inner_z.append(zs)
        inner_a.append(activations)
        depth_sums[:, t, :] = total

    gate_logits, gate_caches = _mlp_forward(params.gate, X)
    gate_probs = _softmax_rows(gate_logits)
    mixed = np.einsum("ne,new->nw", gate_probs, depth_sums)
    tower_logits = mixed @ params.tower.weight.T + params.tower.bias
    probs = _softmax_rows(tower_logits)
    return {
        "z_embed": z_embed,
        "a0": a0,
        "inner_z": inner_z,
        "inner_a": inner_a,
        "depth_sums": depth_sums,
        "gate_caches": gate_caches,
        "gate_probs": gate_probs,
        "mixed": mixed,
        "probs": probs,
    }


def complementary_batch(params: MetaParams, X: np.ndarray) -> np.ndarray:
    """h_alt rows for a batch of concept vectors."""
    X = _check_concepts(params, X)
    return _comp_forward(params, X)["probs"]


def comb_batch(params: MetaParams, X: np.ndarray) -> np.ndarray:
    """Combination weight rows (simplex points of length T+1)."""
    X = _check_concepts(params, X)
    logits, _ = _mlp_forward(params.comb, X)
    return _softmax_rows(logits)


def forward_complementary(params: MetaParams, x: np.ndarray) -> np.ndarray:
    return complementary_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0]


def forward_comb(params: MetaParams, x: np.ndarray) -> np.ndarray:
    return comb_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0]


def _check_concepts(params: MetaParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.structure.vocab_size:
        raise ValueError(
            f"expected concept width {params.structure.vocab_size}, got shape {X.shape}"
        )
    return X


def _split_rows(params: MetaParams, rows: np.ndarray):
    st = params.structure
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != st.row_width:
        raise ValueError(f"expected row width {st.row_width}, got shape {rows.shape}")
    X = rows[:, : st.vocab_size]
    blocks = rows[:, st.vocab_size :].reshape(rows.shape[0], st.num_blocks, st.num_classes)
    if st.num_blocks:
        sums = blocks.sum(axis=2, keepdims=True)
        drifted = np.abs(sums - 1.0) > 1e-9
        if np.any(drifted):
            safe = np.maximum(sums, PROB_CLAMP)
            blocks = np.where(drifted, blocks / safe, blocks)
    return X, blocks


def h_train_batch(params: MetaParams, rows: np.ndarray) -> np.ndarray:
    """Meta-training surrogate outputs: blend h_alt with the stored blocks."""
    X, blocks = _split_rows(params, rows)
    comp = _comp_forward(params, X)
    logits, _ = _mlp_forward(params.comb, X)
    weights = _softmax_rows(logits)
    candidates = np.concatenate([comp["probs"][:, None, :], blocks], axis=1)
    return np.einsum("nj,njy->ny", weights, candidates)


def meta_loss(params: MetaParams, rows: np.ndarray, labels: np.ndarray) -> float:
    """Mean clamped cross-entropy of the meta-training surrogate."""
    labels = np.asarray(labels, dtype=np.int64)
    probs = h_train_batch(params, rows)
    p_true = probs[np.arange(probs.shape[0]), labels]
    clipped = np.clip(p_true, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-np.log(clipped)))


def zero_grads(params: MetaParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.flatten()}


def loss_and_gradients(
    params: MetaParams, rows: np.ndarray, labels: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Meta loss on a batch plus gradients for every learned array.

    Expert block columns are constants: only the complementary expert and the
    combination network receive gradients.
    """
    st = params.structure
    labels = np.asarray(labels, dtype=np.int64)
    X, blocks = _split_rows(params, rows)
    n = X.shape[0]
    if labels.shape != (n,):
        raise ValueError("labels must align with rows")

    comp = _comp_forward(params, X)
    comb_logits, comb_caches = _mlp_forward(params.comb, X)
    weights = _softmax_rows(comb_logits)
    candidates = np.concatenate([comp["probs"][:, None, :], blocks], axis=1)
    final = np.einsum("nj,njy->ny", weights, candidates)

    p_true = final[np.arange(n), labels]
    clipped = np.clip(p_true, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(np.mean(-np.log(clipped)))
    if not np.isfinite(loss):
        raise FloatingPointError("meta loss is not finite")

    grads = zero_grads(params)

    d_final = np.zeros_like(final)
    active = (p_true > PROB_CLAMP) & (p_true < 1.0 - PROB_CLAMP)
    d_final[np.arange(n), labels] = np.where(active, -1.0 / (n * clipped), 0.0)

    d_weights = np.einsum("ny,njy->nj", d_final, candidates)
    d_alt = weights[:, 0, None] * d_final

    # softmax backward: dz = p * (dp - <dp, p>)
    dot = np.sum(d_weights * weights, axis=1, keepdims=True)
    d_comb_logits = weights * (d_weights - dot)
    _mlp_backward(params.comb, comb_caches, d_comb_logits, grads, "comb")

    probs = comp["probs"]
    dot = np.sum(d_alt * probs, axis=1, keepdims=True)
    d_tower_logits = probs * (d_alt - dot)
    grads["tower/W"] += d_tower_logits.T @ comp["mixed"]
    grads["tower/b"] += d_tower_logits.sum(axis=0)
    d_mixed = d_tower_logits @ params.tower.weight

    gate_probs, depth_sums = comp["gate_probs"], comp["depth_sums"]
    d_gate_probs = np.einsum("nw,new->ne", d_mixed, depth_sums)
    d_depth_sums = gate_probs[:, :, None] * d_mixed[:, None, :]

    dot = np.sum(d_gate_probs * gate_probs, axis=1, keepdims=True)
    d_gate_logits = gate_probs * (d_gate_probs - dot)
    _mlp_backward(params.gate, comp["gate_caches"], d_gate_logits, grads, "gate")

    d_a0 = np.zeros_like(comp["a0"])
    for t in range(st.E):
        d_sum = d_depth_sums[:, t, :]
        d_act = d_sum  # gradient w.r.t. the deepest activation
        for i in range(st.L, 0, -1):
            z = comp["inner_z"][t][i - 1]
            a_prev = comp["inner_a"][t][i - 1]
            dz = d_act * (z > 0)
            grads[f"inner/{t}/{i}/W"] += dz.T @ a_prev
            grads[f"inner/{t}/{i}/b"] += dz.sum(axis=0)
            # a_{i-1} feeds both layer i and the depth sum directly
            d_act = dz @ params.inner[t][i - 1].weight + d_sum
        d_a0 += d_act

    dz_embed = d_a0 * (comp["z_embed"] > 0)
    grads["embed/W"] += dz_embed.T @ X
    grads["embed/b"] += dz_embed.sum(axis=0)

    return loss, grads


@dataclass
class AdamState:
    """First/second moment accumulators keyed like MetaParams.flatten()."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: MetaParams) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(arr) for name, arr in params.flatten()},
        v={name: np.zeros_like(arr) for name, arr in params.flatten()},
    )


def adam_step(
    state: AdamState,
    params: MetaParams,
    grads: dict[str, np.ndarray],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[MetaParams, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    correct1 = 1.0 - beta1**state.t
    correct2 = 1.0 - beta2**state.t
    for name, arr in params.flatten():
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        arr -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps)
    return params, state
