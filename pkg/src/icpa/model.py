"""Learnable representation model with exact hand-derived gradients.

Pipeline per node: mean-pool its discrete feature embeddings into a self
vector, sample neighbors and mean-pool their feature embeddings per node
type, concatenate (fixed type order, zeros for absent types), feed the result
through one of two tower MLPs (ELU activations), and L2-normalize the output.
Anchor-side nodes go through tower "a", candidate-side nodes through tower
"b"; the embedding table is shared.

No autodiff: every forward keeps a cache and the matching backward
accumulates exact gradients, including the normalization derivative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graphs import MultiSourceGraph

LOGIT_CLAMP = 30.0
ELU_ALPHA = 1.0


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 8
    hidden_dims: tuple[int, ...] = (256, 256, 32)
    neighbor_samples: int = 5
    positive_weight: float = 2.0

    def __post_init__(self):
        if self.embed_dim <= 0 or any(d <= 0 for d in self.hidden_dims):
            raise ValueError("dims must be positive")
        if self.neighbor_samples < 0:
            raise ValueError("neighbor_samples must be >= 0")

    @classmethod
    def desk(cls) -> "ModelConfig":
        """Small dims for fast desk-scale runs; the full-scale dims stay the default."""
        return cls(embed_dim=8, hidden_dims=(32, 32, 16))

    @property
    def rep_dim(self) -> int:
        return self.hidden_dims[-1]

    def input_dim(self, num_types: int) -> int:
        return self.embed_dim * (1 + num_types)


ModelParams = dict  # name -> np.ndarray


def init_model_params(
    num_features: int, num_types: int, config: ModelConfig, rng: np.random.Generator
) -> ModelParams:
    params: ModelParams = {
        "embed": rng.normal(0.0, 0.1, size=(max(num_features, 1), config.embed_dim))
    }
    for tower in ("a", "b"):
        fan_in = config.input_dim(num_types)
        for layer, fan_out in enumerate(config.hidden_dims):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            params[f"{tower}_W{layer}"] = rng.normal(0.0, scale, size=(fan_in, fan_out))
            params[f"{tower}_b{layer}"] = rng.normal(0.0, 0.01, size=fan_out)
            fan_in = fan_out
    return params


def zero_grads_like(params: ModelParams) -> ModelParams:
    return {k: np.zeros_like(v) for k, v in params.items()}


def check_finite(params: ModelParams) -> None:
    for name, tensor in params.items():
        if not np.all(np.isfinite(tensor)):
            raise FloatingPointError(f"non-finite values in parameter tensor {name!r}")


def clone_params(params: ModelParams) -> ModelParams:
    return {k: v.copy() for k, v in params.items()}


def params_hash(params: ModelParams) -> str:
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype=np.float64).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Checkpoint format: JSON of named tensors with shape headers (stable bytes)
# ---------------------------------------------------------------------------


def save_params(params: ModelParams, path) -> None:
    payload = {
        "format": "icpa-params-v1",
        "tensors": {
            name: {"shape": list(t.shape), "data": np.asarray(t, float).ravel().tolist()}
            for name, t in sorted(params.items())
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_params(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "icpa-params-v1":
        raise ValueError("unrecognized checkpoint format")
    return {
        name: np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
        for name, entry in payload["tensors"].items()
    }


# ---------------------------------------------------------------------------
# Embedding plans: neighbor sampling decoupled from the differentiable path
# ---------------------------------------------------------------------------


@dataclass
class EmbedPlan:
    """Everything the forward pass needs for one node, minus the parameters.

    ``type_groups[slot]`` lists the sampled neighbors (as feature-id lists)
    whose node type maps to that concatenation slot.
    """

    node_id: int
    source: int
    features: list[int]
    type_groups: list[list[list[int]]]


def make_plan(
    graph: MultiSourceGraph,
    source: int,
    node_id: int,
    config: ModelConfig,
    rng: np.random.Generator | None,
    inference: bool = False,
) -> EmbedPlan:
    """Sample neighbors for one node (uniform over adjacency, with replacement).

    In inference mode a node with at most ``neighbor_samples`` neighbors uses
    its full neighborhood once, deterministically.
    """
    src = graph.sources[source]
    if node_id not in src.nodes:
        raise KeyError(f"unknown node id {node_id} in source {source}")
    node = src.nodes[node_id]
    type_order = graph.type_order
    slot_of = {t: i for i, t in enumerate(type_order)}
    groups: list[list[list[int]]] = [[] for _ in type_order]
    neighbors = src.neighbors(node_id)
    if neighbors:
        if inference and len(neighbors) <= config.neighbor_samples:
            chosen = [nbr for nbr, _ in neighbors]
        else:
            if rng is None:
                raise ValueError("rng required when sampling neighbors")
            idx = rng.integers(0, len(neighbors), size=config.neighbor_samples)
            chosen = [neighbors[i][0] for i in idx]
        for nbr in chosen:
            nbr_node = src.nodes[nbr]
            groups[slot_of[nbr_node.type]].append(list(nbr_node.features))
    num_features = graph.num_features
    for f in node.features:
        if f >= num_features:
            raise KeyError(f"unknown feature id {f}")
    return EmbedPlan(node_id=node_id, source=source, features=list(node.features), type_groups=groups)


def inference_rng(seed: int, source: int, node_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, source, node_id]))


@dataclass
class _ForwardCache:
    scatter_i: np.ndarray  # row in the batch
    scatter_block: np.ndarray  # 0 = self slot, 1 + type slot otherwise
    scatter_fid: np.ndarray  # embedding row
    scatter_coeff: np.ndarray
    zs: list[np.ndarray] = field(default_factory=list)
    hs: list[np.ndarray] = field(default_factory=list)
    pre_norm: np.ndarray | None = None
    norms: np.ndarray | None = None
    reps: np.ndarray | None = None
    tower: str = "a"
    num_blocks: int = 0


def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(z, 0.0)))


def embed_forward(
    params: ModelParams, plans: list[EmbedPlan], tower: str, config: ModelConfig, num_types: int
) -> tuple[np.ndarray, _ForwardCache]:
    """Batched forward for a list of plans; returns (n, rep_dim) unit rows."""
    if tower not in ("a", "b"):
        raise ValueError("tower must be 'a' or 'b'")
    n = len(plans)
    e = config.embed_dim
    num_blocks = 1 + num_types
    emb = params["embed"]

    rows_i: list[int] = []
    rows_block: list[int] = []
    rows_fid: list[int] = []
    rows_coeff: list[float] = []
    for i, plan in enumerate(plans):
        if plan.features:
            c = 1.0 / len(plan.features)
            for f in plan.features:
                rows_i.append(i)
                rows_block.append(0)
                rows_fid.append(f)
                rows_coeff.append(c)
        for slot, group in enumerate(plan.type_groups):
            if not group:
                continue
            per_nbr = 1.0 / len(group)
            for feats in group:
                if not feats:
                    continue  # featureless neighbor still occupies its share of the mean
                c = per_nbr / len(feats)
                for f in feats:
                    rows_i.append(i)
                    rows_block.append(1 + slot)
                    rows_fid.append(f)
                    rows_coeff.append(c)

    scatter_i = np.asarray(rows_i, dtype=np.intp)
    scatter_block = np.asarray(rows_block, dtype=np.intp)
    scatter_fid = np.asarray(rows_fid, dtype=np.intp)
    scatter_coeff = np.asarray(rows_coeff, dtype=float)

    x3 = np.zeros((n, num_blocks, e))
    if scatter_i.size:
        np.add.at(x3, (scatter_i, scatter_block), scatter_coeff[:, None] * emb[scatter_fid])
    x = x3.reshape(n, num_blocks * e)

    cache = _ForwardCache(
        scatter_i=scatter_i,
        scatter_block=scatter_block,
        scatter_fid=scatter_fid,
        scatter_coeff=scatter_coeff,
        tower=tower,
        num_blocks=num_blocks,
    )
    h = x
    cache.hs.append(h)
    for layer in range(len(config.hidden_dims)):
        z = h @ params[f"{tower}_W{layer}"] + params[f"{tower}_b{layer}"]
        h = _elu(z)
        cache.zs.append(z)
        cache.hs.append(h)
    norms = np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-12)
    reps = h / norms
    cache.pre_norm = h
    cache.norms = norms
    cache.reps = reps
    return reps, cache


def embed_backward(
    params: ModelParams,
    cache: _ForwardCache,
    grad_reps: np.ndarray,
    grads: ModelParams,
    config: ModelConfig,
) -> None:
    """Accumulate d(loss)/d(params) into ``grads`` given d(loss)/d(reps)."""
    tower = cache.tower
    y = cache.reps
    # y = h / ||h||  =>  dL/dh = (dL/dy - y * <y, dL/dy>) / ||h||
    inner = np.sum(grad_reps * y, axis=1, keepdims=True)
    dh = (grad_reps - y * inner) / cache.norms
    for layer in range(len(config.hidden_dims) - 1, -1, -1):
        dz = dh * _elu_grad(cache.zs[layer])
        grads[f"{tower}_W{layer}"] += cache.hs[layer].T @ dz
        grads[f"{tower}_b{layer}"] += dz.sum(axis=0)
        dh = dz @ params[f"{tower}_W{layer}"].T
    dx3 = dh.reshape(dh.shape[0], cache.num_blocks, config.embed_dim)
    if cache.scatter_i.size:
        np.add.at(
            grads["embed"],
            cache.scatter_fid,
            cache.scatter_coeff[:, None] * dx3[cache.scatter_i, cache.scatter_block],
        )


def embed_node(
    params: ModelParams,
    graph: MultiSourceGraph,
    source: int,
    node_id: int,
    config: ModelConfig,
    rng: np.random.Generator | None = None,
    tower: str = "a",
    inference: bool = False,
) -> np.ndarray:
    """Single-node convenience wrapper around the batched forward."""
    plan = make_plan(graph, source, node_id, config, rng, inference=inference)
    reps, _ = embed_forward(params, [plan], tower, config, len(graph.type_order))
    return reps[0]


# ---------------------------------------------------------------------------
# Edge-prediction loss
# ---------------------------------------------------------------------------


@dataclass
class TriplePlans:
    anchor: EmbedPlan
    positive: EmbedPlan
    negatives: list[EmbedPlan]


def _sigmoid(s: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(s, -LOGIT_CLAMP, LOGIT_CLAMP)))


def edge_loss(
    params: ModelParams,
    triples: list[TriplePlans],
    config: ModelConfig,
    num_types: int,
    grads: ModelParams | None = None,
) -> float:
    """Weighted binary classification over (anchor, positive, negatives) triples.

    Per triple: positive_weight * BCE(sigmoid(<a, p>), 1) plus the sum of
    BCE(sigmoid(<a, n>), 0) over negatives; the result is the mean over
    triples. Anchors use tower a, positives and negatives tower b. When
    ``grads`` is given, exact gradients are accumulated into it.
    """
    if not triples:
        raise ValueError("empty batch")
    n = len(triples)
    k = len(triples[0].negatives)
    anchor_plans = [t.anchor for t in triples]
    cand_plans: list[EmbedPlan] = []
    for t in triples:
        if len(t.negatives) != k:
            raise ValueError("ragged negative lists")
        cand_plans.append(t.positive)
        cand_plans.extend(t.negatives)

    a_reps, a_cache = embed_forward(params, anchor_plans, "a", config, num_types)
    c_reps, c_cache = embed_forward(params, cand_plans, "b", config, num_types)
    c_reps3 = c_reps.reshape(n, 1 + k, -1)

    logits = np.einsum("nd,nkd->nk", a_reps, c_reps3)
    clamped = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    # -log sigma(s) = softplus(-s); -log(1 - sigma(s)) = softplus(s)
    pos_terms = np.logaddexp(0.0, -clamped[:, 0])
    neg_terms = np.logaddexp(0.0, clamped[:, 1:])
    loss = float(np.mean(config.positive_weight * pos_terms + neg_terms.sum(axis=1)))

    if grads is not None:
        sig = _sigmoid(clamped)
        dlogits = np.empty_like(logits)
        dlogits[:, 0] = config.positive_weight * (sig[:, 0] - 1.0)
        dlogits[:, 1:] = sig[:, 1:]
        dlogits *= (np.abs(logits) < LOGIT_CLAMP) / n
        d_a = np.einsum("nk,nkd->nd", dlogits, c_reps3)
        d_c = (dlogits[:, :, None] * a_reps[:, None, :]).reshape(n * (1 + k), -1)
        embed_backward(params, a_cache, d_a, grads, config)
        embed_backward(params, c_cache, d_c, grads, config)
    return loss


def match_probability(rep_u: np.ndarray, rep_v: np.ndarray) -> float:
    """sigmoid of the representation inner product."""
    return float(_sigmoid(np.asarray(rep_u) @ np.asarray(rep_v)))


def predict_edge(
    params: ModelParams,
    graph: MultiSourceGraph,
    source: int,
    u: int,
    v: int,
    config: ModelConfig,
    seed: int = 0,
) -> float:
    """Matching probability for the node pair (u anchor side, v candidate side).

    Neighbor sampling is deterministic: nodes with at most neighbor_samples
    neighbors use their full neighborhood, larger ones a per-node fixed-seed
    sample.
    """
    num_types = len(graph.type_order)
    plan_u = make_plan(graph, source, u, config, inference_rng(seed, source, u), inference=True)
    plan_v = make_plan(graph, source, v, config, inference_rng(seed, source, v), inference=True)
    rep_u, _ = embed_forward(params, [plan_u], "a", config, num_types)
    rep_v, _ = embed_forward(params, [plan_v], "b", config, num_types)
    return match_probability(rep_u[0], rep_v[0])
