import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icpa import oracles, pareto
from icpa.pareto import (
    BaselineOptima,
    PreferenceVector,
    dominates,
    extract_front,
    huf,
    pmtl_weights,
    sample_lambda,
    tnt,
    v_rec,
)


def test_dominates_cases():
    assert not dominates([1, 2], [1, 2])
    assert dominates([1, 2], [1, 3])
    assert not dominates([1, 3], [2, 2])
    assert not dominates([2, 2], [1, 3])
    with pytest.raises(ValueError):
        dominates([1, 2], [1, 2, 3])


def test_extract_front_examples():
    assert extract_front([[1, 2], [2, 1], [2, 2]]) == [0, 1]
    assert extract_front([[4.0, 4.0]]) == [0]


def test_extract_front_retains_duplicates():
    assert extract_front([[1, 1], [1, 1], [2, 2]]) == [0, 1]


point_sets = st.integers(1, 80).flatmap(
    lambda n: st.integers(2, 4).flatmap(
        lambda m: st.lists(
            st.lists(st.floats(0, 10, allow_nan=False), min_size=m, max_size=m),
            min_size=n,
            max_size=n,
        )
    )
)


@given(point_sets)
@settings(max_examples=60, deadline=None)
def test_extract_front_matches_oracle(points):
    assert extract_front(points) == sorted(oracles.enumerate_front(points))


@given(point_sets)
@settings(max_examples=40, deadline=None)
def test_front_is_mutually_nondominating_and_covering(points):
    pts = np.asarray(points, float)
    front = extract_front(points)
    for i in front:
        for j in front:
            assert not dominates(pts[i], pts[j])
    for i in range(len(points)):
        if i not in front:
            assert any(dominates(pts[j], pts[i]) for j in front)


def test_huf_single_point_rectangle():
    res = huf([[2.0, 3.0]], [0.0, 0.0])
    assert res.method == "exact"
    assert res.volume == pytest.approx(6.0)


def test_huf_two_point_inclusion_exclusion():
    res = huf([[1.0, 3.0], [3.0, 1.0]], [0.0, 0.0])
    assert res.volume == pytest.approx(5.0)


def test_huf_dominated_point_changes_nothing():
    base = huf([[1.0, 3.0], [3.0, 1.0]], [0.0, 0.0]).volume
    more = huf([[1.0, 3.0], [3.0, 1.0], [0.5, 0.5]], [0.0, 0.0]).volume
    assert more == pytest.approx(base)


def test_huf_rejects_point_below_baseline():
    with pytest.raises(ValueError, match="below the baseline"):
        huf([[1.0, -0.5]], [0.0, 0.0])


def test_huf_one_point_equals_v_rec_with_ceiling_at_point():
    point = [2.5, 1.5, 3.0]
    res = huf([point], [1.0, 0.5, 1.0], ceiling=point, num_samples=400_000, seed=4)
    rect = v_rec(point, [1.0, 0.5, 1.0])
    assert res.method == "monte_carlo"
    assert abs(res.volume - rect.volume) <= 4 * res.stderr + 1e-9


@given(
    st.lists(
        st.lists(st.floats(0.0, 5.0, allow_nan=False), min_size=2, max_size=2),
        min_size=1,
        max_size=12,
    ),
    st.lists(st.floats(0.0, 5.0, allow_nan=False), min_size=2, max_size=2),
)
@settings(max_examples=60, deadline=None)
def test_huf_monotone_in_points_2d(points, extra):
    before = huf(points, [0.0, 0.0]).volume
    after = huf(points + [extra], [0.0, 0.0]).volume
    assert after >= before - 1e-12


def test_huf_m3_matches_grid_oracle():
    rng = np.random.default_rng(5)
    pts = rng.uniform(0.5, 3.0, size=(6, 3))
    res = huf(pts, [0.0, 0.0, 0.0], num_samples=300_000, seed=1)
    grid = oracles.grid_hypervolume(pts, [0.0, 0.0, 0.0], resolution=200)
    assert abs(res.volume - grid) <= 3 * res.stderr + 0.05 * grid


def test_v_rec_cases():
    assert v_rec([1.0, 1.0], [1.0, 1.0]).volume == 0.0
    res = v_rec([2.0, 3.0], [0.0, 0.0])
    assert res.volume == pytest.approx(6.0)
    assert res.am_gm_bound == pytest.approx(6.25)
    one = v_rec([3.5], [1.0])
    assert one.volume == pytest.approx(2.5)
    assert one.am_gm_bound == pytest.approx(2.5)
    with pytest.raises(ValueError):
        v_rec([0.5, 2.0], [1.0, 0.0])


@given(
    st.lists(st.floats(0.0, 10.0, allow_nan=False), min_size=1, max_size=5),
)
@settings(max_examples=80, deadline=None)
def test_v_rec_bounded_by_am_gm(gaps):
    res = v_rec(gaps, [0.0] * len(gaps))
    assert res.volume <= res.am_gm_bound + 1e-9


def test_tnt_cases():
    nu0 = BaselineOptima(values=(1.0, 2.0), seed=0, config_hash="x")
    assert tnt([1.0, 2.0], nu0).epsilon == (0.0, 0.0)
    assert tnt([0.9, 2.5], nu0).epsilon == pytest.approx((-0.1, 0.5))


def test_sample_lambda_m1():
    lam = sample_lambda(1, np.random.default_rng(0))
    assert lam.tolist() == [1.0]


def test_sample_lambda_simplex_and_symmetry():
    rng = np.random.default_rng(0)
    draws = np.stack([sample_lambda(2, rng) for _ in range(100_000)])
    assert np.all(np.abs(draws.sum(axis=1) - 1.0) < 1e-9)
    assert abs(draws[:, 0].mean() - 0.5) < 0.01


def test_pmtl_m1():
    res = pmtl_weights([1.0], [[0.3, -0.2]], PreferenceVector(m=1, target=0))
    assert res.weights.tolist() == [1.0]
    assert not res.restricted


def test_pmtl_identical_gradients():
    g = np.array([[1.0, 2.0], [1.0, 2.0]])
    res = pmtl_weights([1.0, 1.0], g, PreferenceVector(m=2, target=0))
    assert res.weights.sum() == pytest.approx(1.0)
    assert np.allclose(res.direction, g[0])


def test_pmtl_orthogonal_unit_gradients():
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    res = pmtl_weights([1.0, 1.0], g, PreferenceVector(m=2, target=0))
    assert np.allclose(res.weights, [0.5, 0.5])
    assert res.direction @ res.direction == pytest.approx(0.5)


def test_pmtl_opposing_gradients_restricted():
    g = np.array([[1.0, 0.0], [-1.0, 0.0]])
    res = pmtl_weights([1.0, 1.0], g, PreferenceVector(m=2, target=0))
    assert res.restricted
    assert res.weights.tolist() == [1.0, 0.0]
    assert np.allclose(res.direction, g[0])


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_pmtl_contract_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 5))
    dim = int(rng.integers(2, 20))
    grads = rng.normal(size=(m, dim))
    losses = rng.uniform(0.1, 3.0, size=m)
    target = int(rng.integers(0, m))
    res = pmtl_weights(losses, grads, PreferenceVector(m=m, target=target))
    assert res.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(res.weights >= -1e-12)
    if not res.restricted:
        norms = np.linalg.norm(grads, axis=1)
        tol = 1e-6 * max(1.0, norms.max() ** 2)
        assert res.direction @ grads[target] >= -tol
        for j in res.active:
            assert res.direction @ grads[j] >= -tol


def test_convexity_fraction_triangle():
    # middle point above the segment -> unsupported
    frac = pareto.convexity_fraction([[0.0, 2.0], [1.0, 1.9], [2.0, 0.0]])
    assert frac == pytest.approx(2.0 / 3.0)
    frac_convex = pareto.convexity_fraction([[0.0, 2.0], [0.5, 0.5], [2.0, 0.0]])
    assert frac_convex == pytest.approx(1.0)
