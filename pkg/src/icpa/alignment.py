"""Cross-source sliced matching with learnable per-direction gates.

Node representations are projected onto shared random unit vectors; within
each projection the two sources' values are sorted and matched by rank (the
implicit transport plan), with an index interpolation equalizing unequal
sizes. Each matched pair contributes gate_a * gate_b * (va - vb)^2; the sort
permutation is treated as constant within a step (the standard sliced-distance
subgradient, ties broken by index). Gates come from a small shared MLP that
maps a representation to one probability per other source, and are regularized
by an information-maximization loss (low per-node entropy, high batch-mean
entropy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    EmbedPlan,
    ModelConfig,
    ModelParams,
    _elu,
    _elu_grad,
    embed_backward,
    embed_forward,
)

GATE_LOGIT_CLAMP = 30.0


def interpolate_indices(n_target: int, n_actual: int) -> np.ndarray:
    """Equalizing index map: 1-based k selects round-half-up(k/n_target*n_actual),
    clamped to [1, n_actual], returned 0-based. Monotone, length n_target."""
    if n_target < 1 or n_actual < 1:
        raise ValueError("n_target and n_actual must be >= 1")
    k = np.arange(1, n_target + 1, dtype=float)
    idx = np.floor(k / n_target * n_actual + 0.5)
    return (np.clip(idx, 1, n_actual) - 1).astype(np.intp)


@dataclass(frozen=True)
class ProjectionSet:
    """Unit vectors drawn from the hypersphere; one shared set per step/epoch."""

    vectors: np.ndarray  # (n_proj, dim)

    def __post_init__(self):
        norms = np.linalg.norm(self.vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("projection vectors must have unit norm")

    @classmethod
    def draw(cls, dim: int, n_proj: int = 128, rng: np.random.Generator | None = None, seed: int = 0):
        if rng is None:
            rng = np.random.default_rng(seed)
        raw = rng.normal(size=(n_proj, dim))
        norms = np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
        return cls(vectors=raw / norms)

    def __len__(self) -> int:
        return self.vectors.shape[0]


def sorted_match_cost(a, b) -> float:
    """Raw matched cost of two 1D value sets: sort both, equalize lengths by
    index interpolation, sum squared differences (no gates, no normalization).
    For equal sizes this equals the exact 1D optimal-transport cost."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n_t = max(a.size, b.size)
    if n_t == 0:
        return 0.0
    va = a[interpolate_indices(n_t, a.size)]
    vb = b[interpolate_indices(n_t, b.size)]
    return float(np.sum((va - vb) ** 2))


# ---------------------------------------------------------------------------
# Gate network
# ---------------------------------------------------------------------------

GateParams = dict  # name -> np.ndarray


def init_gate_params(
    rep_dim: int, num_sources: int, rng: np.random.Generator, hidden: tuple[int, ...] = (16,)
) -> GateParams:
    if num_sources < 2:
        raise ValueError("gates need at least two sources")
    params: GateParams = {}
    dims = [rep_dim, *hidden, num_sources - 1]
    for layer in range(len(dims) - 1):
        scale = np.sqrt(2.0 / (dims[layer] + dims[layer + 1]))
        params[f"g_W{layer}"] = rng.normal(0.0, scale, size=(dims[layer], dims[layer + 1]))
        params[f"g_b{layer}"] = np.zeros(dims[layer + 1])
    return params


def _gate_layers(gate_params: GateParams) -> int:
    return sum(1 for k in gate_params if k.startswith("g_W"))


@dataclass
class _GateCache:
    zs: list[np.ndarray]
    hs: list[np.ndarray]
    logits: np.ndarray
    gates: np.ndarray


def gate_forward(gate_params: GateParams, reps: np.ndarray) -> tuple[np.ndarray, _GateCache]:
    """Per-node, per-direction alignment probabilities in (0, 1) strictly."""
    layers = _gate_layers(gate_params)
    h = reps
    zs, hs = [], [h]
    for layer in range(layers):
        z = h @ gate_params[f"g_W{layer}"] + gate_params[f"g_b{layer}"]
        h = _elu(z) if layer < layers - 1 else z
        zs.append(z)
        hs.append(h)
    logits = np.clip(h, -GATE_LOGIT_CLAMP, GATE_LOGIT_CLAMP)
    gates = 1.0 / (1.0 + np.exp(-logits))
    return gates, _GateCache(zs=zs, hs=hs, logits=logits, gates=gates)


def gate_backward(
    gate_params: GateParams,
    cache: _GateCache,
    grad_gates: np.ndarray,
    grads: GateParams,
) -> np.ndarray:
    """Accumulate gate-parameter gradients; returns the gradient w.r.t. reps."""
    layers = _gate_layers(gate_params)
    inside = np.abs(cache.zs[-1]) < GATE_LOGIT_CLAMP
    dh = grad_gates * cache.gates * (1.0 - cache.gates) * inside
    for layer in range(layers - 1, -1, -1):
        dz = dh if layer == layers - 1 else dh * _elu_grad(cache.zs[layer])
        grads[f"g_W{layer}"] += cache.hs[layer].T @ dz
        grads[f"g_b{layer}"] += dz.sum(axis=0)
        dh = dz @ gate_params[f"g_W{layer}"].T
    return dh


def gate_slot(j: int, j_prime: int) -> int:
    """Column of source j's gate output that addresses source j_prime."""
    if j == j_prime:
        raise ValueError("no gate toward the node's own source")
    return j_prime if j_prime < j else j_prime - 1


# ---------------------------------------------------------------------------
# Information-maximization gate loss
# ---------------------------------------------------------------------------


def gate_loss(gates) -> tuple[float, np.ndarray]:
    """Information-maximization regularizer: mean per-gate binary entropy
    minus the entropy of the mean gate.

    Minimizing drives each gate toward certainty while keeping the batch mean
    near 1/2 (diversity): all gates at 0.5 score 0, a certain half/half split
    approaches the -ln 2 minimum, and an all-certain single pole scores 0 —
    so sharing no nodes is never optimal. Both terms are means, so the
    per-gate pull stays on the same scale as the per-node matched cost it
    trades off against.
    """
    t = np.asarray(gates, dtype=float).ravel()
    if t.size == 0:
        return 0.0, np.zeros(0)
    if np.any((t <= 0.0) | (t >= 1.0)):
        raise ValueError("gates must lie strictly inside (0, 1)")
    mean = float(t.mean())

    def entropy(x):
        return -(x * np.log(x) + (1.0 - x) * np.log1p(-x))

    value = float(entropy(t).mean() - entropy(mean))
    # d entropy / dx = log((1-x)/x); both terms carry the 1/n of their means
    grad = (np.log1p(-t) - np.log(t) - (np.log1p(-mean) - np.log(mean))) / t.size
    return value, grad


# ---------------------------------------------------------------------------
# Sliced gated alignment loss
# ---------------------------------------------------------------------------


_SCRATCH = np.empty(0)


def _scratch_blocks(*shapes: tuple[int, ...]) -> list[np.ndarray]:
    """Carve float64 views out of one reused module-level buffer.

    Keeps the hot loop free of large per-call allocations (training calls this
    every step with identical shapes). Not thread safe; callers must not hold
    the views across calls.
    """
    global _SCRATCH
    sizes = [int(np.prod(s)) for s in shapes]
    total = sum(sizes)
    if _SCRATCH.size < total:
        _SCRATCH = np.empty(int(total * 1.25) + 64)
    views, offset = [], 0
    for shape, size in zip(shapes, sizes):
        views.append(_SCRATCH[offset : offset + size].reshape(shape))
        offset += size
    return views


def _scatter_rows(out: np.ndarray, sel: np.ndarray, values: np.ndarray) -> None:
    """out[p, sel[p, i]] += values[p, i], duplicate-safe (bincount per row)."""
    n = out.shape[1]
    for p in range(out.shape[0]):
        out[p] += np.bincount(sel[p], weights=values[p], minlength=n)


def _gather_rows(src: np.ndarray, sel: np.ndarray, out: np.ndarray) -> None:
    """out[p, i] = src[p, sel[p, i]] without allocating."""
    for p in range(src.shape[0]):
        np.take(src[p], sel[p], out=out[p])


def sliced_align_loss(
    reps: dict[int, np.ndarray],
    gates: dict[int, np.ndarray],
    projections: ProjectionSet,
    num_sources: int,
    cap: int = 1024,
) -> tuple[float, dict[int, np.ndarray], dict[int, np.ndarray], dict[tuple[int, int], float]]:
    """Gated rank-matched cost, summed over matched indices and averaged over
    projections and ordered source pairs (the sum over indices is kept, like
    the information-maximization term it trades off against).

    Returns (loss, grad_reps, grad_gates, per-pair diagnostic costs: mean per
    projection and matched index). Gradients flow to representations through
    the projection and the squared difference, and to gates through the pair
    products; fewer than two populated sources contribute zero.
    """
    populated = sorted(j for j, r in reps.items() if r.shape[0] > 0)
    grad_reps = {j: np.zeros_like(reps[j]) for j in populated}
    grad_gates = {j: np.zeros_like(gates[j]) for j in populated}
    pair_costs: dict[tuple[int, int], float] = {}
    if len(populated) < 2:
        return 0.0, grad_reps, grad_gates, pair_costs

    n_proj = len(projections)
    n_t = min(cap, max(reps[j].shape[0] for j in populated))

    # (n_proj, n_j) layout keeps every per-projection sort and scatter
    # contiguous; temporaries live in one reused buffer to avoid allocator churn
    blocks = _scratch_blocks(
        *[(2, n_proj, reps[j].shape[0]) for j in populated], (5, n_proj, n_t)
    )
    proj_vals: dict[int, np.ndarray] = {}
    selections: dict[int, np.ndarray] = {}
    grad_v: dict[int, np.ndarray] = {}
    for block, j in zip(blocks, populated):
        n_j = reps[j].shape[0]
        v = np.matmul(projections.vectors, reps[j].T, out=block[0])
        order = np.argsort(v, axis=1, kind="stable")
        proj_vals[j] = v
        selections[j] = order if n_j == n_t else np.ascontiguousarray(
            order[:, interpolate_indices(n_t, n_j)]
        )
        grad_v[j] = block[1]
        grad_v[j].fill(0.0)

    pairs = [(a, b) for a in populated for b in populated if a != b]
    scale = 1.0 / (n_proj * len(pairs))
    total = 0.0
    va, vb, ta, tb, w = blocks[-1]
    for a, b in pairs:
        sel_a, sel_b = selections[a], selections[b]
        _gather_rows(proj_vals[a], sel_a, out=va)
        _gather_rows(proj_vals[b], sel_b, out=vb)
        np.take(np.ascontiguousarray(gates[a][:, gate_slot(a, b)]), sel_a, out=ta)
        np.take(np.ascontiguousarray(gates[b][:, gate_slot(b, a)]), sel_b, out=tb)
        diff = np.subtract(va, vb, out=va)
        u = np.multiply(diff, diff, out=vb)
        np.multiply(ta, tb, out=w)
        cost = float(np.einsum("ij,ij->", w, u))
        # diagnostic: mean matched cost per projection and index
        pair_costs[(a, b)] = cost / (n_proj * n_t)
        total += cost

        tb *= u
        grad_gates[a][:, gate_slot(a, b)] += np.bincount(
            sel_a.ravel(), weights=tb.ravel(), minlength=grad_gates[a].shape[0]
        )
        ta *= u
        grad_gates[b][:, gate_slot(b, a)] += np.bincount(
            sel_b.ravel(), weights=ta.ravel(), minlength=grad_gates[b].shape[0]
        )
        d_va = np.multiply(w, diff, out=w)
        d_va *= 2.0
        _scatter_rows(grad_v[a], sel_a, d_va)
        d_va *= -1.0
        _scatter_rows(grad_v[b], sel_b, d_va)

    for j in populated:
        grad_reps[j] = scale * (grad_v[j].T @ projections.vectors)
        grad_gates[j] *= scale
    return total * scale, grad_reps, grad_gates, pair_costs


# ---------------------------------------------------------------------------
# Assembled objective (gated matching + information-maximization term)
# ---------------------------------------------------------------------------


@dataclass
class AlignmentResult:
    value: float
    match_value: float
    gate_value: float
    pair_costs: dict[tuple[int, int], float]
    gate_means: dict[int, float]


def alignment_objective(
    params: ModelParams,
    gate_params: GateParams,
    plans_by_source: dict[int, list[EmbedPlan]],
    projections: ProjectionSet,
    config: ModelConfig,
    num_types: int,
    num_sources: int,
    grads_model: ModelParams | None = None,
    grads_gate: GateParams | None = None,
    cap: int = 1024,
) -> AlignmentResult:
    """Full alignment objective on a category batch: sliced gated matching plus
    the information-maximization loss over every (populated source, direction)
    gate population. Gradients (when requested) flow to the representation
    parameters through both the matched costs and the gate-network inputs."""
    populated = sorted(j for j, plans in plans_by_source.items() if plans)
    reps: dict[int, np.ndarray] = {}
    caches: dict[int, object] = {}
    gates: dict[int, np.ndarray] = {}
    gate_caches: dict[int, object] = {}
    for j in populated:
        r, cache = embed_forward(params, plans_by_source[j], "a", config, num_types)
        reps[j] = r
        caches[j] = cache
        g, gcache = gate_forward(gate_params, r)
        gates[j] = g
        gate_caches[j] = gcache

    match_value, grad_reps, grad_gates, pair_costs = sliced_align_loss(
        reps, gates, projections, num_sources, cap=cap
    )

    gate_value = 0.0
    for j in populated:
        for slot in range(num_sources - 1):
            value, grad = gate_loss(gates[j][:, slot])
            gate_value += value
            grad_gates[j][:, slot] += grad

    if grads_model is not None and grads_gate is not None:
        for j in populated:
            grad_rep_total = grad_reps[j] + gate_backward(
                gate_params, gate_caches[j], grad_gates[j], grads_gate
            )
            embed_backward(params, caches[j], grad_rep_total, grads_model, config)

    gate_means = {j: float(gates[j].mean()) for j in populated}
    return AlignmentResult(
        value=match_value + gate_value,
        match_value=match_value,
        gate_value=gate_value,
        pair_costs=pair_costs,
        gate_means=gate_means,
    )


def frozen_alignment_loss(
    params: ModelParams,
    frozen_reps: dict[int, np.ndarray],
    frozen_gates: dict[int, np.ndarray],
    plans_by_source: dict[int, list[EmbedPlan]],
    projections: ProjectionSet,
    config: ModelConfig,
    num_types: int,
    num_sources: int,
    grads_model: ModelParams | None = None,
    cap: int = 1024,
) -> float:
    """Second-phase alignment term: the match (sort order) and the gates are
    recomputed from the frozen model's representations and held constant;
    only the current model's representations inside the squared differences
    carry gradient. The frozen gates' information term is a constant and is
    included in the returned value."""
    populated = sorted(j for j, plans in plans_by_source.items() if plans)
    if len(populated) < 2:
        value = 0.0
        for j in populated:
            for slot in range(num_sources - 1):
                value += gate_loss(frozen_gates[j][:, slot])[0]
        return value

    reps: dict[int, np.ndarray] = {}
    caches: dict[int, object] = {}
    for j in populated:
        r, cache = embed_forward(params, plans_by_source[j], "a", config, num_types)
        reps[j] = r
        caches[j] = cache

    n_proj = len(projections)
    n_t = min(cap, max(frozen_reps[j].shape[0] for j in populated))
    proj_cur = {j: np.ascontiguousarray(projections.vectors @ reps[j].T) for j in populated}
    selections = {}
    for j in populated:
        frozen_v = projections.vectors @ frozen_reps[j].T
        order = np.argsort(frozen_v, axis=1, kind="stable")
        selections[j] = np.ascontiguousarray(order[:, interpolate_indices(n_t, frozen_v.shape[1])])

    grad_v = {j: np.zeros_like(proj_cur[j]) for j in populated}
    pairs = [(a, b) for a in populated for b in populated if a != b]
    scale = 1.0 / (n_proj * len(pairs))
    total = 0.0
    for a, b in pairs:
        sel_a, sel_b = selections[a], selections[b]
        va = np.take_along_axis(proj_cur[a], sel_a, axis=1)
        vb = np.take_along_axis(proj_cur[b], sel_b, axis=1)
        ta = frozen_gates[a][:, gate_slot(a, b)][sel_a]
        tb = frozen_gates[b][:, gate_slot(b, a)][sel_b]
        diff = va - vb
        total += float(np.sum(ta * tb * diff * diff))
        if grads_model is not None:
            d_va = 2.0 * ta * tb * diff
            _scatter_rows(grad_v[a], sel_a, d_va)
            _scatter_rows(grad_v[b], sel_b, -d_va)

    if grads_model is not None:
        for j in populated:
            embed_backward(params, caches[j], scale * (grad_v[j].T @ projections.vectors), grads_model, config)

    value = total * scale
    for j in populated:
        for slot in range(num_sources - 1):
            value += gate_loss(frozen_gates[j][:, slot])[0]
    return value
