"""Evaluation: held-out risk, ranking metrics, and user-item chain scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import MultiSourceGraph, SourceGraph
from .model import ModelConfig, ModelParams, TriplePlans, edge_loss, inference_rng, make_plan, predict_edge
from .sampling import Triple, sample_negatives


# ---------------------------------------------------------------------------
# Held-out split and empirical risk
# ---------------------------------------------------------------------------


@dataclass
class EvalSplit:
    """Per-source held-out positive edges, disjoint from the training edges."""

    held_out: dict[int, list[tuple[int, int, float]]]
    seed: int


def split_edges(
    graph: MultiSourceGraph, fraction: float, seed: int
) -> tuple[MultiSourceGraph, EvalSplit]:
    """Deterministically hold out a fraction of each source's edges.

    Returns a rebuilt training graph (degrees recomputed) and the held-out
    edges. Nodes are never removed.
    """
    if not (0.0 <= fraction < 1.0):
        raise ValueError("fraction must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    train_sources = []
    held: dict[int, list[tuple[int, int, float]]] = {}
    for j, src in enumerate(graph.sources):
        edges = list(src.edges)
        n_hold = int(round(fraction * len(edges)))
        idx = set(rng.choice(len(edges), size=n_hold, replace=False).tolist()) if n_hold else set()
        held[j] = [edges[i] for i in sorted(idx)]
        keep = [e for i, e in enumerate(edges) if i not in idx]
        new_src = SourceGraph(
            nodes={nid: n for nid, n in src.nodes.items()}, edges=keep
        )
        new_src.build()
        train_sources.append(new_src)
    train = MultiSourceGraph(sources=train_sources, num_categories=graph.num_categories)
    return train, EvalSplit(held_out=held, seed=seed)


def eval_triples_from_split(
    train_graph: MultiSourceGraph,
    split: EvalSplit,
    source: int,
    num_negatives: int = 6,
) -> list[Triple]:
    """Triples whose positives are held-out edges; negatives are sampled from
    the training graph, same category as the positive, degree-proportional,
    avoiding the anchor's known neighbors where possible."""
    src = train_graph.sources[source]
    rng = np.random.default_rng(np.random.SeedSequence([split.seed, source, 0xE7A1]))
    out: list[Triple] = []
    for u, v, _w in split.held_out.get(source, []):
        known = {nbr for nbr, _ in src.neighbors(u)} | {u, v}
        try:
            negatives = sample_negatives(src, v, num_negatives, rng)
        except ValueError:
            continue
        for _ in range(50):
            if not any(n in known for n in negatives):
                break
            negatives = sample_negatives(src, v, num_negatives, rng)
        out.append(Triple(anchor=u, positive=v, negatives=tuple(negatives), source=source))
    return out


def triples_to_plans(
    graph: MultiSourceGraph,
    source: int,
    triples: list[Triple],
    config: ModelConfig,
    seed: int,
) -> list[TriplePlans]:
    """Inference-mode plans (fixed per-node sampling seed) for a triple list."""
    plan_cache: dict[int, object] = {}

    def plan_for(nid: int):
        if nid not in plan_cache:
            plan_cache[nid] = make_plan(
                graph, source, nid, config, inference_rng(seed, source, nid), inference=True
            )
        return plan_cache[nid]

    return [
        TriplePlans(
            anchor=plan_for(t.anchor),
            positive=plan_for(t.positive),
            negatives=[plan_for(n) for n in t.negatives],
        )
        for t in triples
    ]


def empirical_risk(
    params: ModelParams,
    graph: MultiSourceGraph,
    source: int,
    triples: list[Triple],
    config: ModelConfig,
    seed: int = 0,
) -> float:
    """Mean edge loss over held-out triples (same loss form as training)."""
    if not triples:
        raise ValueError("empty evaluation split")
    plans = triples_to_plans(graph, source, triples, config, seed)
    return edge_loss(params, plans, config, len(graph.type_order))


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------


@dataclass
class RankedList:
    """Scored candidates for one query, ordered by non-increasing score."""

    query: int
    candidates: list[int]
    scores: list[float]
    labels: list[float]

    def __post_init__(self):
        if not (len(self.candidates) == len(self.scores) == len(self.labels)):
            raise ValueError("candidates, scores and labels must align")
        if any(b > a + 1e-12 for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("scores must be non-increasing")
        if any(l < 0 for l in self.labels):
            raise ValueError("labels must be non-negative")


def ranked_from_scores(query: int, scored: dict[int, float], labels: dict[int, float]) -> RankedList:
    """Sort candidates by score descending (id ascending on ties)."""
    order = sorted(scored, key=lambda c: (-scored[c], c))
    return RankedList(
        query=query,
        candidates=order,
        scores=[scored[c] for c in order],
        labels=[float(labels.get(c, 0.0)) for c in order],
    )


def ndcg_at_k(ranked: RankedList, k: int) -> float:
    """DCG@k with linear gain and 1/log2(i+1) discount, over ideal DCG@k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = ranked.labels
    dcg = sum(g / math.log2(i + 2) for i, g in enumerate(labels[:k]))
    ideal = sorted(labels, reverse=True)
    idcg = sum(g / math.log2(i + 2) for i, g in enumerate(ideal[:k]))
    return dcg / idcg if idcg > 0 else 0.0


def f_measure_at_k(ranked: RankedList, k: int, ground_truth: set[int]) -> float:
    """Harmonic mean of precision@k and recall@k against the ground-truth set."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ground_truth:
        return 0.0
    hits = sum(1 for c in ranked.candidates[:k] if c in ground_truth)
    precision = hits / k
    recall = hits / len(ground_truth)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def weighted_mean(values, weights=None) -> float:
    """Aggregate per-query metric values; uniform when no weights are given."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    if weights is None:
        return float(values.mean())
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights must have positive sum")
    return float((values * weights).sum() / total)


# ---------------------------------------------------------------------------
# User-item chain score
# ---------------------------------------------------------------------------


def chain_score(history: list[tuple[int, float]], candidate: int, pair_prob) -> float:
    """Score a candidate through the interaction history: the weighted average
    of pair_prob(history_item, candidate) with weights normalized from the
    observed interaction strengths."""
    if not history:
        raise ValueError("empty interaction history")
    weights = np.asarray([w for _, w in history], dtype=float)
    total = weights.sum()
    if total <= 0:
        raise ValueError("history weights must have positive sum")
    probs = np.asarray([pair_prob(item, candidate) for item, _ in history], dtype=float)
    return float((weights / total) @ probs)


def chain_score_for_user(
    params: ModelParams,
    graph: MultiSourceGraph,
    source: int,
    user: int,
    candidate: int,
    config: ModelConfig,
    seed: int = 0,
) -> float:
    """Chain score with the history read from the user's weighted edges and
    pair probabilities from the trained matcher."""
    history = [(nbr, w) for nbr, w in graph.sources[source].neighbors(user)]
    return chain_score(
        history,
        candidate,
        lambda item, cand: predict_edge(params, graph, source, item, cand, config, seed=seed),
    )
