"""Multi-source graph data model, TSV round-trip, and a synthetic conflict generator.

Each source is a standalone undirected weighted graph with typed, categorised
nodes. Categories are shared across sources; node ids and feature ids are not
required to be.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphFormatError(ValueError):
    """A graph file (or in-memory graph) failed validation."""

    def __init__(self, message: str, path=None, line: int | None = None):
        loc = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line


@dataclass
class Node:
    id: int
    category: int
    type: str
    features: list[int]
    degree: float = 0.0


@dataclass
class SourceGraph:
    """One source: nodes keyed by id, undirected edges stored once."""

    nodes: dict[int, Node]
    edges: list[tuple[int, int, float]]
    adjacency: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    def build(self) -> None:
        """Validate edges, build symmetric adjacency, and cache weighted degrees."""
        self.adjacency = {nid: [] for nid in self.nodes}
        seen: set[tuple[int, int]] = set()
        for u, v, w in self.edges:
            if u == v:
                raise GraphFormatError(f"self-loop on node {u}")
            if u not in self.nodes or v not in self.nodes:
                missing = u if u not in self.nodes else v
                raise GraphFormatError(f"edge ({u}, {v}) references unknown node id {missing}")
            if w < 0:
                raise GraphFormatError(f"negative weight on edge ({u}, {v})")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphFormatError(f"duplicate edge ({u}, {v})")
            seen.add(key)
            self.adjacency[u].append((v, w))
            self.adjacency[v].append((u, w))
        for nid, node in self.nodes.items():
            node.degree = float(sum(w for _, w in self.adjacency[nid]))

    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def neighbors(self, nid: int) -> list[tuple[int, float]]:
        return self.adjacency[nid]

    def nodes_in_category(self, c: int) -> list[int]:
        return sorted(nid for nid, n in self.nodes.items() if n.category == c)


@dataclass
class MultiSourceGraph:
    sources: list[SourceGraph]
    num_categories: int

    def __post_init__(self):
        self._category_cache: dict[int, list[list[int]]] = {}

    @property
    def num_sources(self) -> int:
        return len(self.sources)

    @property
    def type_order(self) -> tuple[str, ...]:
        """Stable node-type ordering used for per-type aggregation slots."""
        types = {n.type for src in self.sources for n in src.nodes.values()}
        return tuple(sorted(types))

    @property
    def num_features(self) -> int:
        """1 + the largest discrete feature id present (embedding-table size)."""
        top = -1
        for src in self.sources:
            for n in src.nodes.values():
                if n.features:
                    top = max(top, max(n.features))
        return top + 1

    def validate(self) -> None:
        if not self.sources:
            raise GraphFormatError("graph must contain at least one source")
        for j, src in enumerate(self.sources):
            for n in src.nodes.values():
                if not (0 <= n.category < self.num_categories):
                    raise GraphFormatError(
                        f"source {j} node {n.id}: category {n.category} out of range "
                        f"[0, {self.num_categories})"
                    )
                if any(f < 0 for f in n.features):
                    raise GraphFormatError(f"source {j} node {n.id}: negative feature id")


def category_partition(graph: MultiSourceGraph, c: int) -> list[list[int]]:
    """Per-source node-id lists for category ``c``, in stable id order."""
    if not (0 <= c < graph.num_categories):
        raise GraphFormatError(f"category {c} out of range [0, {graph.num_categories})")
    cached = graph._category_cache.get(c)
    if cached is None:
        cached = [src.nodes_in_category(c) for src in graph.sources]
        graph._category_cache[c] = cached
    return cached


def single_source_view(graph: MultiSourceGraph, j: int) -> MultiSourceGraph:
    """A one-source graph sharing source ``j``'s node/edge objects (read-only use)."""
    return MultiSourceGraph(sources=[graph.sources[j]], num_categories=graph.num_categories)


# ---------------------------------------------------------------------------
# TSV round trip
# ---------------------------------------------------------------------------
# nodes.tsv: source_id \t node_id \t node_type \t category \t feat,feat,...
# edges.tsv: source_id \t node_id \t node_id \t weight   (weight optional, default 1)


def _parse_int(token: str, what: str, path, line: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise GraphFormatError(f"{what} is not an integer: {token!r}", path, line) from None
    if value < 0:
        raise GraphFormatError(f"{what} must be non-negative: {token!r}", path, line)
    return value


def load(nodes_path, edges_path, num_categories: int | None = None) -> MultiSourceGraph:
    """Read a multi-source graph from the TSV pair, validating as it goes.

    ``num_categories`` defaults to 1 + the largest category seen. Raises
    GraphFormatError with the offending path and line number on malformed
    rows, dangling edge endpoints, or out-of-range categories.
    """
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    per_source: dict[int, dict[int, Node]] = {}
    with open(nodes_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            row = raw.rstrip("\n")
            if not row:
                continue
            parts = row.split("\t")
            if len(parts) != 5:
                raise GraphFormatError(
                    f"expected 5 tab-separated fields, got {len(parts)}", nodes_path, lineno
                )
            sid = _parse_int(parts[0], "source id", nodes_path, lineno)
            nid = _parse_int(parts[1], "node id", nodes_path, lineno)
            ntype = parts[2]
            if not ntype:
                raise GraphFormatError("empty node type", nodes_path, lineno)
            cat = _parse_int(parts[3], "category", nodes_path, lineno)
            feats = (
                [_parse_int(tok, "feature id", nodes_path, lineno) for tok in parts[4].split(",")]
                if parts[4]
                else []
            )
            bucket = per_source.setdefault(sid, {})
            if nid in bucket:
                raise GraphFormatError(f"duplicate node id {nid} in source {sid}", nodes_path, lineno)
            bucket[nid] = Node(id=nid, category=cat, type=ntype, features=feats)

    if not per_source:
        raise GraphFormatError("no nodes", nodes_path, 0)
    m = max(per_source) + 1
    if set(per_source) != set(range(m)):
        raise GraphFormatError(f"source indices must be dense 0..{m - 1}", nodes_path, 0)

    edge_lists: dict[int, list[tuple[int, int, float]]] = {j: [] for j in range(m)}
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            row = raw.rstrip("\n")
            if not row:
                continue
            parts = row.split("\t")
            if len(parts) not in (3, 4):
                raise GraphFormatError(
                    f"expected 3 or 4 tab-separated fields, got {len(parts)}", edges_path, lineno
                )
            sid = _parse_int(parts[0], "source id", edges_path, lineno)
            u = _parse_int(parts[1], "node id", edges_path, lineno)
            v = _parse_int(parts[2], "node id", edges_path, lineno)
            if sid not in edge_lists:
                raise GraphFormatError(f"unknown source id {sid}", edges_path, lineno)
            if len(parts) == 4 and parts[3]:
                try:
                    w = float(parts[3])
                except ValueError:
                    raise GraphFormatError(
                        f"weight is not a number: {parts[3]!r}", edges_path, lineno
                    ) from None
            else:
                w = 1.0
            for endpoint in (u, v):
                if endpoint not in per_source[sid]:
                    raise GraphFormatError(
                        f"edge references unknown node id {endpoint} in source {sid}",
                        edges_path,
                        lineno,
                    )
            edge_lists[sid].append((u, v, w))

    sources = []
    for j in range(m):
        src = SourceGraph(nodes=per_source[j], edges=edge_lists[j])
        src.build()
        sources.append(src)
    k = num_categories
    if k is None:
        k = 1 + max((n.category for src in sources for n in src.nodes.values()), default=-1)
        k = max(k, 1)
    graph = MultiSourceGraph(sources=sources, num_categories=k)
    graph.validate()
    return graph


def _format_weight(w: float) -> str:
    return repr(float(w))


def write(graph: MultiSourceGraph, nodes_path, edges_path) -> None:
    """Write the TSV pair; loading it back reproduces the graph."""
    with open(nodes_path, "w", encoding="utf-8", newline="\n") as fh:
        for j, src in enumerate(graph.sources):
            for nid in src.node_ids():
                n = src.nodes[nid]
                feats = ",".join(str(f) for f in n.features)
                fh.write(f"{j}\t{nid}\t{n.type}\t{n.category}\t{feats}\n")
    with open(edges_path, "w", encoding="utf-8", newline="\n") as fh:
        for j, src in enumerate(graph.sources):
            for u, v, w in sorted(src.edges):
                fh.write(f"{j}\t{u}\t{v}\t{_format_weight(w)}\n")


# ---------------------------------------------------------------------------
# Synthetic generator with controllable cross-source conflicts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the planted-cluster generator.

    ``conflict_rate`` is the fraction of categories whose cross-source cluster
    correspondence is deliberately permuted, so that the shared concept
    features attached to a cluster disagree with its edge structure in sources
    other than source 0. Clusters carry distinct edge densities
    (``edge_density`` scaled by ``sparse_factor**k`` for cluster k), which
    makes the structural signature of a cluster visible in representations —
    in conflicted categories the concept feature and the structure then point
    at different clusters.
    """

    m: int = 2
    num_categories: int = 4
    nodes_per_source: int = 120
    edge_density: float = 0.3
    conflict_rate: float = 0.0
    seed: int = 0
    clusters_per_category: int = 2
    sparse_factor: float = 1.0  # < 1 gives cluster k+1 sparser edges than cluster k
    size_ratio: float = 2.0  # cluster k holds ~size_ratio x the nodes of cluster k+1

    def validate(self) -> None:
        if self.m < 1 or self.num_categories < 1 or self.nodes_per_source < 1:
            raise ValueError("m, num_categories and nodes_per_source must be positive")
        if not (0.0 <= self.conflict_rate <= 1.0):
            raise ValueError("conflict_rate must lie in [0, 1]")
        if not (0.0 < self.edge_density <= 1.0):
            raise ValueError("edge_density must lie in (0, 1]")
        if not (0.0 < self.sparse_factor <= 1.0):
            raise ValueError("sparse_factor must lie in (0, 1]")
        if self.size_ratio < 1.0:
            raise ValueError("size_ratio must be >= 1")
        if self.clusters_per_category < 2:
            raise ValueError("need at least 2 clusters per category to express conflicts")
        if self.nodes_per_source < self.num_categories * self.clusters_per_category:
            raise ValueError("nodes_per_source too small for the requested cluster grid")


@dataclass(frozen=True)
class CorrespondenceRow:
    """Ground-truth pairing of planted clusters carrying the same latent concept."""

    category: int
    source_a: int
    cluster_a: int
    source_b: int
    cluster_b: int


def generate_synthetic(spec: SyntheticSpec) -> tuple[MultiSourceGraph, list[CorrespondenceRow]]:
    """Build a deterministic multi-source graph with planted per-category clusters.

    Every node carries three discrete features: a concept feature shared
    across sources, a per-source cluster feature, and a per-node identity
    feature. Edges connect nodes within a cluster and between cluster k of
    category c and cluster k of category c+1. In conflicted categories the
    concept feature of sources j >= 1 is rotated across clusters, so the
    shared concept disagrees with the edge structure — naive cross-source
    alignment then pulls contradictory objectives together.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    m, k_cat, n_clusters = spec.m, spec.num_categories, spec.clusters_per_category

    n_conflicted = int(round(spec.conflict_rate * k_cat))
    conflicted = set(rng.choice(k_cat, size=n_conflicted, replace=False).tolist())

    # The concept feature is each node's only feature: representations must be
    # concept-indexed, so a permuted correspondence cannot be "dodged" by
    # re-anchoring to per-source signals
    def concept_feature(c: int, s: int) -> int:
        return c * n_clusters + s

    per_cat = spec.nodes_per_source // k_cat
    # conflicted categories get size-skewed clusters: the cross-source mass
    # profiles then disagree and rank matching must pair across concepts;
    # clean categories stay balanced so their gate populations have no skew
    skewed = np.array([spec.size_ratio ** (n_clusters - 1 - k) for k in range(n_clusters)])
    cluster_weights = {
        True: skewed / skewed.sum(),
        False: np.full(n_clusters, 1.0 / n_clusters),
    }
    sources = []
    for j in range(m):
        nodes: dict[int, Node] = {}
        cluster_members: dict[tuple[int, int], list[int]] = {}
        nid = 0
        for c in range(k_cat):
            counts = [max(1, int(per_cat * w)) for w in cluster_weights[c in conflicted]]
            counts[0] += per_cat - sum(counts)
            for k in range(n_clusters):
                if j > 0 and c in conflicted:
                    # conflated labels: the node claims every concept at once,
                    # so its representation sits between the concept anchors
                    # and rank matching against a clean source pairs it wrong
                    feats = [concept_feature(c, s) for s in range(n_clusters)]
                else:
                    feats = [concept_feature(c, k)]
                for _ in range(counts[k]):
                    nodes[nid] = Node(id=nid, category=c, type="item", features=list(feats))
                    cluster_members.setdefault((c, k), []).append(nid)
                    nid += 1

        edges: list[tuple[int, int, float]] = []
        for c in range(k_cat):
            for k in range(n_clusters):
                density = spec.edge_density * spec.sparse_factor**k
                members = cluster_members[(c, k)]
                # concept homophily inside a cluster
                for a_idx in range(len(members)):
                    for b_idx in range(a_idx + 1, len(members)):
                        if rng.random() < density:
                            edges.append((members[a_idx], members[b_idx], 1.0))
                # cross-category edges ignore clusters, so cluster identity is
                # carried by the concept feature alone
                if k_cat > 1:
                    next_cat = (c + 1) % k_cat
                    partners = [
                        nid
                        for kk in range(n_clusters)
                        for nid in cluster_members[(next_cat, kk)]
                    ]
                    cross_p = density / (2.0 * n_clusters)
                    for a in members:
                        for b in partners:
                            if rng.random() < cross_p:
                                key = (min(a, b), max(a, b))
                                edges.append((key[0], key[1], 1.0))
        # rng.random is drawn per candidate pair, so layout is seed-stable
        dedup = {}
        for u, v, w in edges:
            dedup[(min(u, v), max(u, v))] = w
        src = SourceGraph(nodes=nodes, edges=[(u, v, w) for (u, v), w in sorted(dedup.items())])
        src.build()
        sources.append(src)

    graph = MultiSourceGraph(sources=sources, num_categories=k_cat)
    graph.validate()

    table: list[CorrespondenceRow] = []
    for c in range(k_cat):
        for a in range(m):
            for b in range(a + 1, m):
                for k in range(n_clusters):
                    concept = (k + 1) % n_clusters if (a > 0 and c in conflicted) else k
                    if b > 0 and c in conflicted:
                        k_b = (concept - 1) % n_clusters
                    else:
                        k_b = concept
                    table.append(CorrespondenceRow(c, a, k, b, k_b))
    return graph, table


def conflicted_categories(table: list[CorrespondenceRow]) -> set[int]:
    """Categories whose emitted correspondence is not the identity permutation."""
    return {row.category for row in table if row.cluster_a != row.cluster_b}


def write_correspondence(table: list[CorrespondenceRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in table:
            fh.write(
                f"{row.category}\t{row.source_a}\t{row.cluster_a}\t{row.source_b}\t{row.cluster_b}\n"
            )


def read_correspondence(path) -> list[CorrespondenceRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            row = raw.rstrip("\n")
            if not row:
                continue
            parts = row.split("\t")
            if len(parts) != 5:
                raise GraphFormatError("expected 5 fields", path, lineno)
            c, sa, ka, sb, kb = (_parse_int(p, "field", path, lineno) for p in parts)
            rows.append(CorrespondenceRow(c, sa, ka, sb, kb))
    return rows
