"""Training-batch assembly: random-walk positives, degree-proportional
category-restricted negatives, and cross-source same-category minibatches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import MultiSourceGraph, SourceGraph, category_partition


@dataclass(frozen=True)
class Triple:
    anchor: int
    positive: int
    negatives: tuple[int, ...]
    source: int


@dataclass
class CategoryBatch:
    """One same-category minibatch covering every populated source.

    ``align_nodes[j]`` are the category nodes drawn for source j; they double
    as the per-source arrays the alignment loss operates on.
    """

    category: int
    triples: dict[int, list[Triple]]
    align_nodes: dict[int, list[int]]


class NoPositiveError(ValueError):
    """Anchor is isolated: no random-walk positive exists."""


class NoNegativesError(ValueError):
    """The positive's category contains no other node to draw negatives from."""


def walk_positive(
    source_graph: SourceGraph, anchor: int, rng: np.random.Generator, length: int = 1
) -> int:
    """Terminal node of an unbiased weighted random walk (return/in-out = 1)."""
    if length < 1:
        raise ValueError("walk length must be >= 1")
    current = anchor
    for _ in range(length):
        neighbors = source_graph.neighbors(current)
        if not neighbors:
            if current == anchor:
                raise NoPositiveError(f"node {anchor} has no neighbors")
            break  # dead end mid-walk: stop where we are
        weights = np.array([w for _, w in neighbors], dtype=float)
        total = weights.sum()
        if total <= 0:
            idx = int(rng.integers(0, len(neighbors)))
        else:
            idx = int(np.searchsorted(np.cumsum(weights), rng.uniform(0.0, total), side="right"))
            idx = min(idx, len(neighbors) - 1)
        current = neighbors[idx][0]
    return current


def sample_negatives(
    source_graph: SourceGraph, positive: int, k: int, rng: np.random.Generator
) -> list[int]:
    """k draws (with replacement) from the positive's category, probability
    proportional to weighted degree, excluding the positive itself."""
    cat = source_graph.nodes[positive].category
    pool = [nid for nid in source_graph.nodes_in_category(cat) if nid != positive]
    if not pool:
        raise NoNegativesError(f"category {cat} holds only the positive node {positive}")
    degrees = np.array([source_graph.nodes[nid].degree for nid in pool], dtype=float)
    total = degrees.sum()
    if total <= 0:
        idx = rng.integers(0, len(pool), size=k)
    else:
        cum = np.cumsum(degrees)
        draws = rng.uniform(0.0, total, size=k)
        idx = np.minimum(np.searchsorted(cum, draws, side="right"), len(pool) - 1)
    return [pool[i] for i in idx]


def _category_counts(graph: MultiSourceGraph, only_source: int | None = None) -> np.ndarray:
    counts = np.zeros(graph.num_categories, dtype=float)
    for c in range(graph.num_categories):
        partition = category_partition(graph, c)
        if only_source is None:
            counts[c] = sum(len(ids) for ids in partition)
        else:
            counts[c] = len(partition[only_source])
    return counts


def next_batch(
    graph: MultiSourceGraph,
    rng: np.random.Generator,
    batch_size: int = 128,
    num_negatives: int = 6,
    walk_length: int = 1,
    only_source: int | None = None,
) -> CategoryBatch:
    """Draw a category (probability proportional to node count), then per-source
    anchors, walk positives and degree-proportional negatives. Anchors whose
    positive or negatives cannot be drawn are skipped for triples but still
    appear in the alignment arrays. ``only_source`` restricts the batch to one
    source (single-source baseline training)."""
    counts = _category_counts(graph, only_source)
    total = counts.sum()
    if total <= 0:
        raise ValueError("graph has no populated category")
    c = int(np.searchsorted(np.cumsum(counts), rng.uniform(0.0, total), side="right"))
    c = min(c, graph.num_categories - 1)

    partition = category_partition(graph, c)
    populated = [j for j, ids in enumerate(partition) if ids]
    if only_source is not None:
        populated = [j for j in populated if j == only_source]
    per_source = max(1, batch_size // max(len(populated), 1))

    triples: dict[int, list[Triple]] = {}
    align_nodes: dict[int, list[int]] = {}
    for j in populated:
        ids = partition[j]
        take = min(len(ids), per_source)
        chosen = rng.choice(np.asarray(ids), size=take, replace=False)
        align_nodes[j] = [int(x) for x in chosen]
        source_graph = graph.sources[j]
        out: list[Triple] = []
        for anchor in align_nodes[j]:
            try:
                positive = walk_positive(source_graph, anchor, rng, length=walk_length)
                negatives = sample_negatives(source_graph, positive, num_negatives, rng)
            except (NoPositiveError, NoNegativesError):
                continue
            out.append(
                Triple(anchor=anchor, positive=positive, negatives=tuple(negatives), source=j)
            )
        triples[j] = out
    return CategoryBatch(category=c, triples=triples, align_nodes=align_nodes)


def make_eval_triples(
    source_graph: SourceGraph,
    rng: np.random.Generator,
    count: int,
    num_negatives: int = 6,
    walk_length: int = 1,
) -> list[Triple]:
    """A fixed evaluation triple set for one source (anchors across categories)."""
    candidates = [nid for nid in source_graph.node_ids() if source_graph.neighbors(nid)]
    if not candidates:
        return []
    out: list[Triple] = []
    guard = 0
    while len(out) < count and guard < 20 * count:
        guard += 1
        anchor = int(candidates[rng.integers(0, len(candidates))])
        try:
            positive = walk_positive(source_graph, anchor, rng, length=walk_length)
            negatives = sample_negatives(source_graph, positive, num_negatives, rng)
        except (NoPositiveError, NoNegativesError):
            continue
        out.append(Triple(anchor=anchor, positive=positive, negatives=tuple(negatives), source=0))
    return out
