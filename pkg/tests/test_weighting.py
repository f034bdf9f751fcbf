import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semmark.errors import DimensionMismatch, TooFewPoints
from semmark.weighting import (
    WeightConfig,
    adaptive_weight,
    build_lof_index,
    fit_weight_bounds,
    lof,
    lof_batch,
)

RNG = np.random.default_rng(99)


# ---------------------------------------------------------------------------
# brute-force oracle (independent of the library implementation)
# ---------------------------------------------------------------------------

def lof_bruteforce(points, k, query=None):
    """Plain-loop LOF with k-distance neighborhoods and reachability."""
    pts = [np.asarray(p, dtype=np.float64) for p in points]
    n = len(pts)

    def dist(a, b):
        return math.sqrt(float(np.sum((a - b) ** 2)))

    def kdist_and_neighbors(i):
        ds = sorted((dist(pts[i], pts[j]), j) for j in range(n) if j != i)
        kd = ds[k - 1][0]
        nb = [j for d, j in ds if d <= kd]
        return kd, nb

    kds, nbs = zip(*(kdist_and_neighbors(i) for i in range(n)))

    def density(i):
        total = sum(max(kds[j], dist(pts[i], pts[j])) for j in nbs[i])
        return 1e12 if total == 0.0 else len(nbs[i]) / total

    rho = [density(i) for i in range(n)]

    def lof_of_point(i):
        return sum(rho[j] for j in nbs[i]) / (len(nbs[i]) * rho[i])

    if query is None:
        return [lof_of_point(i) for i in range(n)]

    q = np.asarray(query, dtype=np.float64)
    ds = sorted(
        (dist(q, pts[j]), j) for j in range(n) if not np.array_equal(q, pts[j])
    )
    kd = ds[k - 1][0]
    nb = [j for d, j in ds if d <= kd]
    total = sum(max(kds[j], dist(q, pts[j])) for j in nb)
    rho_q = 1e12 if total == 0.0 else len(nb) / total
    return sum(rho[j] for j in nb) / (len(nb) * rho_q)


# ---------------------------------------------------------------------------
# index construction
# ---------------------------------------------------------------------------

def test_minimal_index_all_neighbors():
    pts = RNG.standard_normal((5, 3))
    idx = build_lof_index(pts, k=4)
    for i in range(5):
        assert len(idx._neighbors[i]) == 4


def test_duplicate_points_use_sentinel_density():
    pts = np.vstack([np.zeros((3, 2)), RNG.standard_normal((4, 2))])
    idx = build_lof_index(pts, k=2)
    assert np.isfinite(idx.k_dist).all()
    assert idx.density[0] == 1e12


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        build_lof_index(RNG.standard_normal((5, 2)), k=5)


def test_index_matches_bruteforce_20_points():
    pts = RNG.standard_normal((20, 2))
    idx = build_lof_index(pts, k=4)
    want = lof_bruteforce(pts, 4)
    assert np.allclose(idx.point_lof, want, atol=1e-12)


# ---------------------------------------------------------------------------
# query-time LOF
# ---------------------------------------------------------------------------

def test_interior_point_of_uniform_grid():
    pts = np.linspace(0.0, 1.0, 101)[:, None]
    idx = build_lof_index(pts, k=5)
    q = np.array([0.505])
    val = lof(idx, q)
    assert 0.95 <= val <= 1.05
    assert val == pytest.approx(lof_bruteforce(pts, 5, q), abs=1e-12)


def test_far_outlier_has_high_lof():
    pts = RNG.standard_normal((80, 3)) * 0.1
    idx = build_lof_index(pts, k=10)
    q = np.array([10.0, 10.0, 10.0])
    val = lof(idx, q)
    assert val > 2.0
    assert val == pytest.approx(lof_bruteforce(pts, 10, q), abs=1e-9)


def test_query_equal_to_index_point_self_consistent():
    # symmetric ring: query equal to an index point reproduces its LOF
    angles = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    idx = build_lof_index(pts, k=3)
    for i in (0, 5):
        assert lof(idx, pts[i]) == pytest.approx(idx.point_lof[i], abs=1e-9)


def test_lof_batch_matches_scalar():
    pts = RNG.standard_normal((60, 4))
    idx = build_lof_index(pts, k=8)
    qs = RNG.standard_normal((10, 4))
    batch = lof_batch(idx, qs)
    singles = [lof(idx, q) for q in qs]
    assert np.allclose(batch, singles, atol=1e-12)


def test_lof_dimension_mismatch():
    idx = build_lof_index(RNG.standard_normal((30, 4)), k=5)
    with pytest.raises(DimensionMismatch):
        lof(idx, np.ones(3))


def test_random_sets_match_bruteforce():
    # sweep of random configurations, exact agreement with the oracle
    rng = np.random.default_rng(5)
    for trial in range(10):
        n = int(rng.integers(12, 40))
        d = int(rng.integers(2, 8))
        k = int(rng.integers(2, min(10, n - 1)))
        pts = rng.standard_normal((n, d))
        idx = build_lof_index(pts, k=k)
        assert np.allclose(idx.point_lof, lof_bruteforce(pts, k), atol=1e-9)
        q = rng.standard_normal(d)
        assert lof(idx, q) == pytest.approx(lof_bruteforce(pts, k, q), abs=1e-9)


# ---------------------------------------------------------------------------
# weight bounds and the adaptive weight
# ---------------------------------------------------------------------------

def test_bounds_on_symmetric_circle():
    angles = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    pts = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    cfg = fit_weight_bounds(build_lof_index(pts, k=4))
    assert cfg.l_max - cfg.l_min <= 0.05


def test_bounds_attained_at_outlier():
    pts = np.vstack([RNG.standard_normal((50, 2)) * 0.1, [[5.0, 5.0]]])
    idx = build_lof_index(pts, k=6)
    cfg = fit_weight_bounds(idx)
    assert cfg.l_max == pytest.approx(idx.point_lof[-1])
    assert cfg.l_min <= cfg.l_max


def test_adaptive_weight_cases():
    cfg = WeightConfig(delta=0.30, epsilon=0.05, l_min=1.0, l_max=2.0)
    assert adaptive_weight(2.5, cfg) == pytest.approx(0.30)
    assert adaptive_weight(0.5, cfg) == pytest.approx(0.25)
    assert adaptive_weight(1.5, cfg) == pytest.approx(0.275)


def test_adaptive_weight_continuity_at_bounds():
    cfg = WeightConfig(delta=0.30, epsilon=0.05, l_min=1.0, l_max=2.0)
    assert adaptive_weight(1.0, cfg) == pytest.approx(0.25, abs=1e-12)
    assert adaptive_weight(2.0, cfg) == pytest.approx(0.30, abs=1e-12)


def test_adaptive_weight_degenerate_bounds():
    cfg = WeightConfig(delta=0.30, epsilon=0.05, l_min=1.3, l_max=1.3)
    assert adaptive_weight(1.3, cfg) == pytest.approx(0.275)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 10), st.floats(-5, 10))
def test_adaptive_weight_range_and_monotonicity(a, b):
    cfg = WeightConfig(delta=0.30, epsilon=0.05, l_min=0.9, l_max=1.8)
    lo, hi = min(a, b), max(a, b)
    w_lo, w_hi = adaptive_weight(lo, cfg), adaptive_weight(hi, cfg)
    assert 0.25 - 1e-12 <= w_lo <= 0.30 + 1e-12
    assert w_lo <= w_hi + 1e-12


def test_weight_config_validation():
    with pytest.raises(ValueError):
        WeightConfig(delta=0.05, epsilon=0.30)
    with pytest.raises(ValueError):
        WeightConfig(l_min=2.0, l_max=1.0)
