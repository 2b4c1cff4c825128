from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcnlm.core import InfeasibleError, NlmParams, PatchConfig, SamplingPattern
from mcnlm.oracle import enumerate_active_sets
from mcnlm.pipeline import build_patch_database
from mcnlm.sampling import (
    BisectionConfig, bisect_tau, bisect_tau_iters, build_envelope, draw_bernoulli, equal_width_bins,
    g_t, optimal_pattern, optimal_pattern_rows, pattern_from_tau, quantize_bounds, quantized_g_t,
    quantized_tau, rng_stream, shared_uniform_indices, theorem_t, two_stage_sample, uniform_pattern,
    waterfill_lower_bounded,
)
from mcnlm.synthetic import piecewise_corpus

B4 = np.array([0.9, 0.5, 0.1, 0.05])

bounds_st = st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=60).map(np.array)
xi_st = st.floats(0.01, 1.0)


def test_uniform_pattern():
    assert np.all(uniform_pattern(7, 1.0).probs == 1.0)
    p = uniform_pattern(5, 0.2)
    assert np.allclose(p.probs, 0.2) and abs(p.probs.sum() - 1.0) < 1e-12


@given(st.integers(1, 10_000), xi_st)
def test_uniform_budget(n, xi):
    assert abs(uniform_pattern(n, xi).probs.mean() - xi) <= 1e-6


def test_g_t_uniform_root_and_saturation():
    b = np.full(10, 0.4)
    t = theorem_t(b, 0.3)
    assert abs(g_t(0.3 / 0.4, b, t, 0.3)) < 1e-12
    assert g_t(1 / 0.4, b, t, 0.3) == pytest.approx(10 * (1 - 0.3))


def test_g_t_matches_loop(rng):
    b = rng.uniform(0.01, 1, 30)
    t = theorem_t(b, 0.2) * 1.5
    tau = 3.7
    ref = sum(max(min(bj * tau, 1.0), bj / t) for bj in b) - 30 * 0.2
    assert g_t(tau, b, t, 0.2) == pytest.approx(ref, abs=1e-12)
    with pytest.raises(InfeasibleError):
        g_t(tau, b, 0.5 * b.max(), 0.2)


@given(bounds_st, st.floats(0.01, 0.99), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_g_t_nondecreasing(b, xi, u, v):
    t = theorem_t(b, xi)
    lo, hi = 1 / t, 1 / b.min()
    a, c = sorted((lo + u * (hi - lo), lo + v * (hi - lo)))
    assert g_t(a, b, t, xi) <= g_t(c, b, t, xi) + 1e-9


def test_bisect_constant_bounds():
    b = np.full(8, 0.5)
    tau = bisect_tau(b, 0.3, theorem_t(b, 0.3))
    assert tau == pytest.approx(0.3 / 0.5, abs=1e-7)


def test_bisect_four_point_instance_against_grid():
    xi = 0.5
    t = theorem_t(B4, xi)
    tau = bisect_tau(B4, xi, t)
    grid = np.arange(1 / t, 1 / B4.min(), 1e-6)
    sums = np.maximum(np.minimum(np.outer(grid, B4), 1), B4 / t).sum(axis=1)
    best = grid[np.argmin(np.abs(sums - 2.0))]
    assert abs(tau - best) < 1e-5
    assert pattern_from_tau(B4, tau, t).sum() == pytest.approx(2.0, abs=1e-7)


@given(bounds_st, st.floats(0.01, 0.99))
def test_bisection_converges_fast(b, xi):
    _, iters = bisect_tau_iters(b, xi, theorem_t(b, xi), BisectionConfig(tol=1e-8))
    assert iters <= 60


def test_quantize_single_value():
    h = quantize_bounds(np.full(10, 0.3), Q=8)
    assert h.counts.tolist() == [10] and h.centers[0] == pytest.approx(0.3)


def test_quantize_uniform_grid_four_bins():
    b = np.linspace(0.01, 1.0, 400)
    assert quantize_bounds(b, Q=4).counts.tolist() == [100, 100, 100, 100]


def test_equal_width_bins_closedness():
    lower, upper, labels = equal_width_bins(np.array([0.0, 1.0, 2.0, 3.0, 4.0]), 4)
    # right-closed bins, first bin closed on both sides
    assert labels.tolist() == [0, 0, 1, 2, 3]
    v = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    assert np.all((lower[labels] <= v) & (v <= upper[labels]))


def test_quantized_g_t_single_bin():
    b = np.array([0.2, 0.4])
    h = quantize_bounds(b, 1)
    t, tau, xi = 1.0, 1.5, 0.3
    c = 0.3
    assert quantized_g_t(tau, h, t, xi) == pytest.approx(2 * max(min(c * tau, 1), c / t) - 2 * xi)


@given(bounds_st.filter(lambda b: b.size >= 2), st.floats(0.05, 0.95), st.sampled_from([4, 8, 32, 64]),
       st.floats(0.0, 1.0))
def test_quantized_g_t_error_bound(b, xi, Q, u):
    t = theorem_t(b, xi)
    tau = 1 / t + u * (1 / b.min() - 1 / t)
    h = quantize_bounds(b, Q)
    width = h.width
    slack = b.size * tau * width / 2 + b.size * width / (2 * t)
    assert abs(quantized_g_t(tau, h, t, xi) - g_t(tau, b, t, xi)) <= slack + 1e-9


def test_quantized_root_budget(rng):
    for _ in range(50):
        b = rng.uniform(0.01, 1, 2000) ** rng.uniform(0.5, 3)
        xi = rng.uniform(0.05, 0.5)
        tau = quantized_tau(b, xi, Q=64)
        p = np.minimum(b * tau, 1.0)
        assert abs(p.sum() - b.size * xi) <= 0.01 * b.size * xi


def test_optimal_all_ones_is_uniform():
    p = optimal_pattern(np.ones(12), 0.25)
    assert np.allclose(p.probs, 0.25, atol=1e-12)


def test_optimal_full_sampling():
    assert np.all(optimal_pattern(B4, 1.0).probs == 1.0)


@given(bounds_st, st.floats(0.01, 0.99))
def test_optimal_pattern_structure_and_budget(b, xi):
    pat = optimal_pattern(b, xi)
    p = pat.probs
    assert np.all(p > 0) and np.all(p <= 1)
    assert abs(p.sum() - b.size * xi) <= 1e-6 * b.size * xi
    assert np.array_equal(p, pattern_from_tau(b, pat.tau, pat.t))


def test_waterfill_zero_lower_bound_is_plain_clip(rng):
    b = rng.uniform(0.05, 1, 40)
    p = waterfill_lower_bounded(b, 0.3, 0.0)
    tau = p[p < 1].max() / b[p < 1].max()
    assert np.allclose(p, np.minimum(b * tau, 1.0), atol=1e-9)


def test_waterfill_with_theorem_t_lower_bound_equals_optimal(rng):
    for _ in range(20):
        b = rng.uniform(0.01, 1, 50)
        xi = rng.uniform(0.05, 0.9)
        t = theorem_t(b, xi)
        assert np.allclose(waterfill_lower_bounded(b, xi, b / t), optimal_pattern(b, xi).probs, atol=1e-8)


def test_waterfill_matches_kkt_enumeration(rng):
    for _ in range(40):
        n = int(rng.integers(1, 9))
        b = rng.uniform(0.02, 1, n)
        xi = rng.uniform(0.1, 0.95)
        delta = rng.uniform(0, 1, n) * min(1.0, xi) * 0.9
        p_kkt, examined = enumerate_active_sets(b, n * xi, delta)
        assert examined == 3 ** n
        assert np.allclose(waterfill_lower_bounded(b, xi, delta), p_kkt, atol=1e-7)


def test_rows_solver_matches_scalar(rng):
    B = rng.uniform(0.01, 1, (30, 25))
    valid = rng.random((30, 25)) < 0.8
    valid[:, 0] = True
    P = optimal_pattern_rows(B, valid, 0.2)
    for k in range(30):
        ref = optimal_pattern(B[k, valid[k]], 0.2).probs
        assert np.allclose(P[k, valid[k]], ref, atol=1e-9)
        assert np.all(P[k, ~valid[k]] == 0)


def test_draw_bernoulli_edge_cases(rng):
    assert draw_bernoulli(SamplingPattern(np.ones(9), 1.0), rng).tolist() == list(range(9))
    tiny = SamplingPattern(np.full(1000, 1e-9), 1e-9)
    assert sum(draw_bernoulli(tiny, rng).size for _ in range(100)) == 0


def test_draw_bernoulli_frequencies():
    rng = rng_stream(3, 0)
    p = np.linspace(0.05, 0.95, 20)
    pattern = SamplingPattern(p, p.mean())
    runs = 100_000
    counts = np.zeros(p.size)
    for _ in range(runs):
        counts[draw_bernoulli(pattern, rng)] += 1
    sd = np.sqrt(runs * p * (1 - p))
    assert np.all(np.abs(counts - runs * p) <= 4 * sd)


def test_shared_uniform_indices():
    rng = rng_stream(0, 5)
    idx = shared_uniform_indices(10, 1.0, rng)
    assert idx.size == 10 and idx.min() >= 0 and idx.max() <= 9
    assert shared_uniform_indices(1000, 0.2, rng).size == 200
    hist = np.bincount(np.concatenate([shared_uniform_indices(50, 0.2, rng) for _ in range(5000)]),
                       minlength=50)
    from scipy.stats import chisquare
    assert chisquare(hist).pvalue > 0.001


def test_rng_streams_are_keyed():
    a = rng_stream(1, 7).random(4)
    assert np.array_equal(a, rng_stream(1, 7).random(4))
    assert not np.array_equal(a, rng_stream(1, 8).random(4))
    assert not np.array_equal(a, rng_stream(2, 7).random(4))


def small_db(n_images=2, shape=(20, 20), Q=16, seed=0):
    params = NlmParams(h_r=26 / 255)
    return build_patch_database(piecewise_corpus(n_images, shape, seed), PatchConfig(5), params, Q=Q), params


def test_envelope_own_bin_and_dominance():
    db, _ = small_db(4, (60, 60))
    rng = np.random.default_rng(1)
    for y in np.concatenate([rng.uniform(db.projections.min() - 1, db.projections.max() + 1, 50),
                             db.projections[:5]]):
        env = build_envelope(db, y, 0.1)
        own = db.members(env.q0)
        assert np.all(env.r_raw[own] == 1.0)
        b = np.exp(-(db.projections - y) ** 2)
        assert np.all(env.r_raw >= b)
        assert np.all(env.r >= env.target(b))


def test_single_bin_envelope_is_flat():
    db, _ = small_db(1, (20, 20), Q=1)
    env = build_envelope(db, float(db.projections[3]), 0.2)
    assert np.all(env.r_raw == 1.0)
    assert np.unique(env.r).size == 1


def test_two_stage_full_saturation():
    db, _ = small_db(1, (12, 12))
    draw = two_stage_sample(db, float(db.projections[0]), 1.0, rng_stream(0, 0))
    assert draw.indices.tolist() == list(range(db.n))


def test_two_stage_deterministic_and_stage1_mean():
    db, _ = small_db(2, (30, 30))
    y = float(np.median(db.projections))
    a = two_stage_sample(db, y, 0.1, rng_stream(4, 2))
    b = two_stage_sample(db, y, 0.1, rng_stream(4, 2))
    assert np.array_equal(a.indices, b.indices)
    env = build_envelope(db, y, 0.1)
    b_r = np.exp(-(db.projections - y) ** 2)
    # expected stage-1 size dominates the expected final size, which is about n xi
    assert env.r.sum() >= env.target(b_r).sum()
    sizes = [two_stage_sample(db, y, 0.1, rng_stream(5, k)).n_stage1 for k in range(300)]
    assert np.mean(sizes) >= 0.95 * db.n * 0.1


def test_exact_envelope_targets_optimal_pattern():
    db, _ = small_db(2, (30, 30))
    y = float(db.projections[10])
    env = build_envelope(db, y, 0.15, exact=True)
    b = np.exp(-(db.projections - y) ** 2)
    assert np.allclose(env.target(b), optimal_pattern(b, 0.15).probs, atol=1e-12)
