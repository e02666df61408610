"""Multi-objective machinery: dominance, fronts, hypervolume-under-front,
negative-transfer accounting, mixture sampling, and preference-constrained
descent weights.

All loss vectors are "smaller is better". A point a dominates b (a < b in the
Pareto order) when a <= b componentwise with at least one strict coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIMPLEX_TOL = 1e-9


def _as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty 1D array")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def dominates(a, b) -> bool:
    """True iff a <= b componentwise with strict inequality somewhere."""
    a, b = _as_vector(a, "a"), _as_vector(b, "b")
    if a.shape != b.shape:
        raise ValueError("loss vectors must have equal length")
    return bool(np.all(a <= b) and np.any(a < b))


def extract_front(points) -> list[int]:
    """Indices of points not dominated by any other point; duplicates retained.

    Scans in lexicographic order so each candidate only needs checking against
    already-accepted front members (any dominator lexicographically precedes
    what it dominates).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("need a non-empty 2D point array")
    order = np.lexsort(tuple(pts[:, d] for d in range(pts.shape[1] - 1, -1, -1)))
    front: list[int] = []
    for i in order:
        p = pts[i]
        dominated = False
        for j in front:
            q = pts[j]
            if np.all(q <= p) and np.any(q < p):
                dominated = True
                break
        if not dominated:
            front.append(int(i))
    return sorted(front)


@dataclass(frozen=True)
class BaselineOptima:
    """Empirical per-source optima nu0 with the provenance that produced them."""

    values: tuple[float, ...]
    seed: int
    config_hash: str


@dataclass(frozen=True)
class TntReport:
    """Per-source training negative transfer: epsilon_j = L_j - nu0_j."""

    epsilon: tuple[float, ...]


def tnt(losses, nu0) -> TntReport:
    loss = _as_vector(losses, "losses")
    base = np.asarray(nu0.values if isinstance(nu0, BaselineOptima) else nu0, dtype=float)
    if loss.shape != base.shape:
        raise ValueError("losses and baseline must have equal length")
    return TntReport(epsilon=tuple(float(e) for e in loss - base))


@dataclass(frozen=True)
class VRec:
    volume: float
    am_gm_bound: float


def v_rec(losses, nu0) -> VRec:
    """Hyperrectangle volume prod_j(L_j - nu0_j) and its AM-GM upper bound."""
    loss = _as_vector(losses, "losses")
    base = np.asarray(nu0.values if isinstance(nu0, BaselineOptima) else nu0, dtype=float)
    gaps = loss - base
    if np.any(gaps < 0):
        raise ValueError("loss vector lies below the baseline optima")
    m = gaps.size
    return VRec(volume=float(np.prod(gaps)), am_gm_bound=float(gaps.mean() ** m))


@dataclass(frozen=True)
class HufResult:
    volume: float
    stderr: float | None
    method: str


def huf(front, nu0, ceiling=None, num_samples: int = 200_000, seed: int = 0) -> HufResult:
    """Hypervolume under the front: measure of the union of boxes [nu0, L(f)].

    Exact staircase sweep for one or two objectives; seeded Monte Carlo with a
    reported standard error for three or more. Points are clipped to the
    ceiling (default: componentwise max of the front), which never changes the
    value when the ceiling dominates every point.
    """
    pts = np.asarray(front, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("front must be a non-empty 2D array")
    base = np.asarray(nu0.values if isinstance(nu0, BaselineOptima) else nu0, dtype=float)
    if np.any(pts < base - 1e-12):
        raise ValueError("front point below the baseline optima: inconsistent baseline")
    if ceiling is not None:
        pts = np.minimum(pts, np.asarray(ceiling, dtype=float))
        pts = np.maximum(pts, base)
    m = pts.shape[1]
    gaps = pts - base

    if m == 1:
        return HufResult(volume=float(gaps.max()), stderr=None, method="exact")
    if m == 2:
        # keep maximal corners only, then sweep left to right
        keep = []
        for i in range(gaps.shape[0]):
            if not any(
                np.all(gaps[k] >= gaps[i]) and np.any(gaps[k] > gaps[i])
                for k in range(gaps.shape[0])
            ):
                keep.append(i)
        corners = np.unique(gaps[keep], axis=0)
        corners = corners[np.argsort(corners[:, 0])]
        # strip [x_{i-1}, x_i] is covered up to the tallest box reaching past x_i
        xs, ys = corners[:, 0], corners[:, 1]
        suffix_max_y = np.maximum.accumulate(ys[::-1])[::-1]
        area = float(xs[0] * suffix_max_y[0])
        for i in range(1, xs.size):
            area += float((xs[i] - xs[i - 1]) * suffix_max_y[i])
        return HufResult(volume=area, stderr=None, method="exact")

    top = gaps.max(axis=0)
    box = float(np.prod(top))
    if box == 0.0:
        return HufResult(volume=0.0, stderr=0.0, method="monte_carlo")
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 50_000
    remaining = num_samples
    while remaining > 0:
        take = min(chunk, remaining)
        sample = rng.uniform(0.0, 1.0, size=(take, m)) * top
        inside = np.any(np.all(sample[:, None, :] <= gaps[None, :, :], axis=2), axis=1)
        hits += int(inside.sum())
        remaining -= take
    p = hits / num_samples
    volume = box * p
    stderr = box * float(np.sqrt(max(p * (1.0 - p), 0.0) / num_samples))
    return HufResult(volume=volume, stderr=stderr, method="monte_carlo")


def sample_lambda(m: int, rng: np.random.Generator) -> np.ndarray:
    """Mixture weights: m Uniform(0,1) draws normalized by their sum."""
    if m < 1:
        raise ValueError("m must be positive")
    while True:
        u = rng.uniform(0.0, 1.0, size=m)
        total = u.sum()
        if total > 1e-12:
            return u / total


@dataclass(frozen=True)
class PreferenceVector:
    """Near-one-hot preference: 1 at the target source, epsilon_pref elsewhere."""

    m: int
    target: int
    epsilon_pref: float = 0.05

    def __post_init__(self):
        if not (0 <= self.target < self.m):
            raise ValueError("target out of range")
        if self.epsilon_pref < 0:
            raise ValueError("epsilon_pref must be non-negative")

    def as_array(self) -> np.ndarray:
        z = np.full(self.m, self.epsilon_pref, dtype=float)
        z[self.target] = 1.0
        return z


@dataclass(frozen=True)
class PmtlResult:
    weights: np.ndarray
    direction: np.ndarray
    restricted: bool
    active: tuple[int, ...]


def _frank_wolfe_min_norm(gram: np.ndarray, w0: np.ndarray, max_iter: int, gap_tol: float):
    """Min-norm point over the convex hull of vectors with Gram matrix ``gram``."""
    w = w0.copy()
    for _ in range(max_iter):
        dots = gram @ w  # <g_j, d> for the current d = sum_j w_j g_j
        v = int(np.argmin(dots))
        gap = float(w @ dots - dots[v])
        if gap < gap_tol:
            break
        dd = float(w @ dots)
        dv = float(dots[v])
        vv = float(gram[v, v])
        denom = dd - 2.0 * dv + vv
        gamma = 1.0 if denom <= 0 else min(1.0, max(0.0, (dd - dv) / denom))
        w *= 1.0 - gamma
        w[v] += gamma
    return w


def pmtl_weights(
    losses,
    gradients,
    preference: PreferenceVector,
    max_iter: int = 100,
    gap_tol: float = 1e-6,
) -> PmtlResult:
    """Simplex loss weights whose combined direction respects the preference.

    Solves the min-norm point over the convex hull of all per-source gradients
    by Frank-Wolfe (warm-started at the one-hot target weight), so the
    combined d = sum_j w_j grad_j is a non-ascent direction for every source
    up to the dual gap — in particular for the target and for every active
    preference constraint (source j is active when L_j / sum L > z_j / sum z).
    When no descent direction exists (the hull contains the origin) the
    one-hot target weight is returned and the step is flagged restricted.
    """
    loss = _as_vector(losses, "losses")
    m = loss.size
    grads = np.asarray(gradients, dtype=float)
    if grads.ndim != 2 or grads.shape[0] != m:
        raise ValueError("gradients must be an (m, dim) array")
    if preference.m != m:
        raise ValueError("preference vector length mismatch")
    target = preference.target

    one_hot = np.zeros(m)
    one_hot[target] = 1.0
    if m == 1:
        return PmtlResult(weights=one_hot, direction=grads[0].copy(), restricted=False, active=())

    z = preference.as_array()
    total = loss.sum()
    z_share = z / z.sum()
    active = tuple(
        int(j)
        for j in range(m)
        if j != target and total > 0 and loss[j] / total > z_share[j]
    )

    gram = grads @ grads.T
    scale = max(1.0, float(np.max(np.abs(gram))))
    w = _frank_wolfe_min_norm(gram, one_hot.copy(), max_iter, gap_tol * scale)
    direction = w @ grads
    norm2 = float(direction @ direction)

    tol = 1e-8 * max(1.0, float(np.sqrt(norm2)) * float(np.max(np.linalg.norm(grads, axis=1))))
    ok = norm2 > 1e-12 * scale
    if ok:
        checked = {target, *active}
        ok = all(float(direction @ grads[j]) >= -tol for j in checked)
    if not ok:
        return PmtlResult(weights=one_hot, direction=grads[target].copy(), restricted=True, active=active)
    return PmtlResult(weights=w, direction=direction, restricted=False, active=active)


def convexity_fraction(front_points, num_probes: int = 256, seed: int = 0) -> float:
    """Fraction of front points supported by some hyperplane with simplex normal.

    A point is counted when it minimizes lambda . x over the set for at least
    one probed lambda; for two objectives the probes form a deterministic grid,
    otherwise seeded normalized-uniform draws. Diagnostic only.
    """
    pts = np.asarray(front_points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("need a non-empty 2D point array")
    n, m = pts.shape
    if n == 1:
        return 1.0
    if m == 2:
        ts = np.linspace(0.0, 1.0, num_probes)
        lambdas = np.stack([ts, 1.0 - ts], axis=1)
    else:
        rng = np.random.default_rng(seed)
        lambdas = np.stack([sample_lambda(m, rng) for _ in range(num_probes)])
    scores = lambdas @ pts.T  # (probes, n)
    supported = np.zeros(n, dtype=bool)
    for row in scores:
        supported |= row <= row.min() + 1e-12
    return float(supported.sum()) / n
