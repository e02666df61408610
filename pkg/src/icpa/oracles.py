"""Independent brute-force verifiers.

These deliberately share no numerical kernels with the library modules they
check: exact 1D transport comes from a Hungarian assignment solve, fronts from
a full pairwise dominance scan, and hypervolumes from grid counting.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment


def exact_ot_1d(a, b) -> float:
    """Minimum over bijections of sum((a_i - b_sigma(i))**2), |a| = |b| <= 12."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be equal-length 1D arrays")
    if a.size > 12:
        raise ValueError("oracle capped at 12 points")
    if a.size == 0:
        return 0.0
    cost = (a[:, None] - b[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def exact_ot_1d_exhaustive(a, b) -> float:
    """Same quantity by literal enumeration of all bijections (n <= 8)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size > 8:
        raise ValueError("exhaustive search capped at 8 points")
    best = np.inf
    for perm in permutations(range(a.size)):
        best = min(best, float(np.sum((a - b[list(perm)]) ** 2)))
    return 0.0 if a.size == 0 else best


def enumerate_front(points) -> list[int]:
    """Indices of non-dominated points by an O(n^2) pairwise scan."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("need a non-empty 2D point array")
    n = pts.shape[0]
    dominated = np.zeros(n, dtype=bool)
    for i in range(n):
        leq = np.all(pts <= pts[i], axis=1)
        lt = np.any(pts < pts[i], axis=1)
        dominated[i] = bool(np.any(leq & lt))
    return [i for i in range(n) if not dominated[i]]


@dataclass(frozen=True)
class TheoremWitness:
    source: int
    index: int
    loss: tuple[float, ...]


def verify_theorem2(points) -> list[TheoremWitness]:
    """For each objective j, find a front point attaining the global minimum of L_j.

    Fails loudly (AssertionError) if no witness exists — that would indicate a
    broken enumeration, not a false theorem.
    """
    pts = np.asarray(points, dtype=float)
    front = set(enumerate_front(pts))
    witnesses = []
    for j in range(pts.shape[1]):
        best = pts[:, j].min()
        candidates = [i for i in np.flatnonzero(pts[:, j] == best) if i in front]
        assert candidates, f"no front point attains the minimum of objective {j}"
        i = min(candidates)
        witnesses.append(TheoremWitness(source=j, index=int(i), loss=tuple(pts[i])))
    return witnesses


def verify_theorem1(points, f1_index: int, target: int, deltas) -> TheoremWitness | None:
    """Constrained negative-transfer lower bound sits on the front.

    Feasible set: points f with L_{j'}(f1) - L_{j'}(f) >= delta_{j'} for every
    j' != target. Returns a witness (a feasible front point attaining the
    feasible minimum of L_target) or None when the constraints are infeasible.
    Raises AssertionError if the minimum is attained only off the front.
    """
    pts = np.asarray(points, dtype=float)
    n, m = pts.shape
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (m,):
        raise ValueError("deltas must have one entry per objective")
    f1 = pts[f1_index]
    others = [j for j in range(m) if j != target]
    feasible = np.ones(n, dtype=bool)
    for j in others:
        feasible &= (f1[j] - pts[:, j]) >= deltas[j]
    if not feasible.any():
        return None
    feas_idx = np.flatnonzero(feasible)
    cmin = pts[feas_idx, target].min()
    attaining = feas_idx[pts[feas_idx, target] == cmin]
    # lexicographic refinement (target first) reproduces the constructive proof
    order = [target] + others
    keys = tuple(pts[attaining, j] for j in reversed(order))
    best = attaining[np.lexsort(keys)][0]
    front = set(enumerate_front(pts))
    assert int(best) in front, "constrained minimizer's lexicographic refinement left the front"
    return TheoremWitness(source=target, index=int(best), loss=tuple(pts[best]))


def grid_hypervolume(front, baseline, ceiling=None, resolution: int = 200) -> float:
    """Volume between the baseline and the front by counting grid-cell centers.

    A cell center nu counts when baseline <= nu componentwise and nu <= L(f)
    for at least one front point f. Reference implementation for huf().
    """
    pts = np.asarray(front, dtype=float)
    base = np.asarray(baseline, dtype=float)
    if resolution < 10:
        raise ValueError("resolution must be at least 10 per axis")
    if pts.ndim != 2:
        raise ValueError("front must be 2D")
    m = pts.shape[1]
    top = pts.max(axis=0) if ceiling is None else np.minimum(np.asarray(ceiling, float), pts.max(axis=0))
    pts = np.minimum(pts, top)
    widths = top - base
    if np.any(widths <= 0):
        return 0.0
    axes = [base[d] + (np.arange(resolution) + 0.5) * widths[d] / resolution for d in range(m)]
    covered = np.zeros((resolution,) * m, dtype=bool)
    for p in pts:
        masks = [axes[d] <= p[d] for d in range(m)]
        block = masks[0]
        for d in range(1, m):
            block = block[..., None] & masks[d]
        covered |= block
    cell = float(np.prod(widths / resolution))
    return float(covered.sum()) * cell
