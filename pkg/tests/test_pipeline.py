from __future__ import annotations

import math

import numpy as np
import pytest

from mcnlm.core import Image, NlmParams, PatchConfig, PatchDatabase, extract_patch
from mcnlm.pipeline import (
    ConfigError, ExternalJob, InternalJob, add_gaussian_noise, build_patch_database, default_params,
    denoise_external, denoise_internal, full_nlm_external, full_nlm_internal, psnr, run_external,
    run_internal, sample_queries,
)
from mcnlm.synthetic import piecewise_corpus, piecewise_image
from mcnlm.weights import combined_weight, compute_projections

PARAMS = NlmParams(h_r=26 / 255, h_s=10 / 3, rho=10)


def test_noise_identity_and_determinism():
    img = piecewise_image((20, 20), 0)
    assert add_gaussian_noise(img, 0.0, 3) == img
    assert add_gaussian_noise(img, 0.1, 3) == add_gaussian_noise(img, 0.1, 3)
    assert add_gaussian_noise(img, 0.1, 3) != add_gaussian_noise(img, 0.1, 4)


def test_noise_variance():
    img = Image(np.full((300, 300), 0.5))
    sigma = 20 / 255
    noisy = add_gaussian_noise(img, sigma, 1)
    assert abs(np.var(noisy.data - 0.5) / sigma ** 2 - 1) < 0.05


def test_psnr_cases():
    a = Image(np.full((4, 4), 0.2))
    b = Image(np.full((4, 4), 0.3))
    assert psnr(a, a) == math.inf
    assert psnr(a, b) == pytest.approx(20.0)
    assert psnr(a, b) == psnr(b, a)


def test_default_params():
    p = default_params(20, 21)
    assert p.h_r == pytest.approx(26 / 255) and p.h_s == pytest.approx(10 / 3) and p.rho == 10


def _brute_force_nlm(noisy: Image, params: NlmParams, cfg: PatchConfig) -> np.ndarray:
    """Per-pixel loop over the search window using the scalar weight functions."""
    H, W = noisy.shape
    out = np.empty((H, W))
    r = int(params.rho)
    for i in range(H):
        for j in range(W):
            y = extract_patch(noisy, (i, j), cfg)
            num = den = 0.0
            for a in range(max(0, i - r), min(H, i + r + 1)):
                for b in range(max(0, j - r), min(W, j + r + 1)):
                    w = combined_weight((i, j), (a, b), y, extract_patch(noisy, (a, b), cfg), params)
                    num += w * noisy.data[a, b]
                    den += w
            out[i, j] = num / den
    return out


def test_full_nlm_matches_brute_force():
    noisy = add_gaussian_noise(piecewise_image((14, 17), 2), 0.08, 0)
    params = NlmParams(h_r=0.1, h_s=2.0, rho=3)
    cfg = PatchConfig(3)
    assert np.max(np.abs(full_nlm_internal(noisy, params, cfg).data - _brute_force_nlm(noisy, params, cfg))) < 1e-12


@pytest.mark.parametrize("kind", ["uniform", "spatial", "oracle"])
def test_full_sampling_is_exact(kind):
    noisy = add_gaussian_noise(piecewise_image((40, 48), 5), 20 / 255, 1)
    ref = full_nlm_internal(noisy, PARAMS)
    for workers in (1, 2):
        out = denoise_internal(InternalJob(noisy, PARAMS, xi=1.0, pattern_kind=kind, seed=workers, workers=workers))
        assert np.array_equal(out.data, ref.data)


def test_reproducible_regardless_of_workers():
    noisy = add_gaussian_noise(piecewise_image((48, 40), 6), 20 / 255, 1)
    job = dict(noisy=noisy, params=PARAMS, xi=0.2, pattern_kind="spatial", seed=11)
    a = denoise_internal(InternalJob(**job, workers=1))
    b = denoise_internal(InternalJob(**job, workers=3))
    assert a == b
    assert a != denoise_internal(InternalJob(**{**job, "seed": 12}))


def test_sampling_ratio_close_to_xi():
    noisy = add_gaussian_noise(piecewise_image((48, 48), 7), 20 / 255, 1)
    for kind in ("uniform", "spatial", "oracle"):
        res = run_internal(InternalJob(noisy, PARAMS, xi=0.2, pattern_kind=kind))
        assert abs(res.sampling_ratio - 0.2) < 0.01


def test_whole_image_window_and_flat_spatial():
    noisy = add_gaussian_noise(piecewise_image((24, 24), 8), 15 / 255, 1)
    params = NlmParams(h_r=15 / 255)
    ref = full_nlm_internal(noisy, params)
    assert denoise_internal(InternalJob(noisy, params, xi=1.0, pattern_kind="uniform")) == ref
    with pytest.raises(ConfigError):
        InternalJob(noisy, params, xi=0.5, pattern_kind="spatial")
    out = run_internal(InternalJob(noisy, params, xi=0.3, pattern_kind="uniform"))
    assert psnr(out.image, ref) > 25


def test_fast_mode_runs_and_differs():
    noisy = add_gaussian_noise(piecewise_image((40, 40), 9), 20 / 255, 1)
    for kind in ("uniform", "spatial"):
        fast = run_internal(InternalJob(noisy, PARAMS, xi=0.2, pattern_kind=kind, fast=True))
        slow = run_internal(InternalJob(noisy, PARAMS, xi=0.2, pattern_kind=kind))
        assert fast.image != slow.image
        assert psnr(fast.image, slow.image) > 20
    with pytest.raises(ConfigError):
        run_internal(InternalJob(noisy, PARAMS, xi=0.2, pattern_kind="oracle", fast=True))


def test_empty_fallback_to_noisy_pixel():
    noisy = add_gaussian_noise(piecewise_image((16, 16), 10), 20 / 255, 1)
    params = NlmParams(h_r=26 / 255, h_s=10 / 3, rho=1)
    one = run_internal(InternalJob(noisy, params, xi=0.01, pattern_kind="uniform", seed=2))
    keep = run_internal(InternalJob(noisy, params, xi=0.01, pattern_kind="uniform", seed=2, empty_fallback="noisy"))
    changed = one.image.data != keep.image.data
    assert changed.any()
    assert np.all(one.image.data[changed] == 1.0)
    assert np.array_equal(keep.image.data[changed], noisy.data[changed])


def test_invalid_jobs():
    noisy = piecewise_image((16, 16), 1)
    with pytest.raises(ConfigError):
        InternalJob(noisy, PARAMS, xi=0.0)
    with pytest.raises(ConfigError):
        InternalJob(noisy, PARAMS, pattern_kind="intensity")


def test_quality_improves_with_xi():
    noisy_src = piecewise_image((64, 64), 12)
    noisy = add_gaussian_noise(noisy_src, 20 / 255, 3)
    means = []
    for xi in (0.05, 0.1, 0.2, 0.5):
        ps = [psnr(denoise_internal(InternalJob(noisy, PARAMS, xi=xi, seed=s)), noisy_src) for s in range(5)]
        means.append((np.mean(ps), np.std(ps)))
    means.append((psnr(full_nlm_internal(noisy, PARAMS), noisy_src), 0.0))
    for (m0, s0), (m1, s1) in zip(means, means[1:]):
        assert m1 >= m0 - max(s0, s1, 0.02)


# ----------------------------------------------------------------- external


def test_database_counts_and_bins():
    imgs = [piecewise_image((20, 30), 1), piecewise_image((11, 9), 2)]
    db = build_patch_database(imgs, PatchConfig(5), PARAMS, Q=16)
    assert db.n == 16 * 26 + 7 * 5
    assert db.counts.sum() == db.n
    lo, hi = db.bin_lower[db.bin_of], db.bin_upper[db.bin_of]
    assert np.all((lo <= db.projections) & (db.projections <= hi))
    assert np.allclose(db.projections, compute_projections(db.patches, PARAMS))


def test_database_single_patch():
    db = build_patch_database([piecewise_image((5, 5), 3)], PatchConfig(5), PARAMS, Q=32)
    assert db.n == 1 and db.n_bins == 1


def test_database_empty_corpus():
    with pytest.raises(ValueError):
        build_patch_database([piecewise_image((3, 3), 3)], PatchConfig(5), PARAMS)


def test_external_degenerate_database():
    clean = np.linspace(0.2, 0.6, 25)
    patches = np.tile(clean, (200, 1))
    centers = np.full(200, clean[12])
    params = NlmParams(h_r=0.01)
    proj = compute_projections(patches, params)
    db = PatchDatabase(patches, centers, proj, [proj.min()], [proj.max()], np.zeros(200, int), h_r=0.01, side=5)
    q = clean[None, :] + 0.001
    for xi in (1.0, 0.2):
        assert denoise_external(ExternalJob(db, q, params, xi=xi)) == pytest.approx([clean[12]], abs=1e-12)


def _corpus_db(n_images=4, shape=(50, 50), seed=1):
    params = NlmParams(h_r=26 / 255)
    db = build_patch_database(piecewise_corpus(n_images, shape, seed), PatchConfig(5), params)
    test = piecewise_corpus(2, (40, 40), seed + 100)
    noisy = [add_gaussian_noise(t, 20 / 255, k) for k, t in enumerate(test)]
    q, truth = sample_queries(test, noisy, PatchConfig(5), 300, 0)
    return db, params, q, truth


def test_external_full_equals_direct_sum():
    db, params, q, _ = _corpus_db()
    assert np.array_equal(denoise_external(ExternalJob(db, q, params, xi=1.0)), full_nlm_external(db, q, params))
    assert np.array_equal(denoise_external(ExternalJob(db, q, params, xi=1.0, pattern_kind="uniform")),
                          full_nlm_external(db, q, params))


def test_external_reproducible_and_ratio():
    db, params, q, _ = _corpus_db()
    a = run_external(ExternalJob(db, q, params, xi=0.1, seed=3))
    b = run_external(ExternalJob(db, q, params, xi=0.1, seed=3))
    assert np.array_equal(a.estimates, b.estimates)
    assert abs(a.sampling_ratio - 0.1) < 0.01
    assert np.all(a.stage1 >= 0)


def test_intensity_beats_uniform_on_synthetic_db():
    # ~1e4 patches, 2000 queries, paired comparison at xi = 0.1
    params = NlmParams(h_r=26 / 255)
    db = build_patch_database(piecewise_corpus(4, (54, 54), 4), PatchConfig(5), params)
    assert 9_000 <= db.n <= 11_000
    test = piecewise_corpus(2, (48, 48), 77)
    noisy = [add_gaussian_noise(t, 20 / 255, k) for k, t in enumerate(test)]
    q, truth = sample_queries(test, noisy, PatchConfig(5), 2000, 1)
    ps = {kind: np.mean([psnr(np.clip(denoise_external(ExternalJob(db, q, params, xi=0.1, pattern_kind=kind,
                                                                    seed=s)), 0, 1), truth) for s in range(3)])
          for kind in ("intensity", "uniform")}
    assert ps["intensity"] >= ps["uniform"]


def test_external_rejects_mismatched_queries():
    db, params, q, _ = _corpus_db(1, (12, 12))
    with pytest.raises(ValueError):
        ExternalJob(db, q[:, :9], params)
    with pytest.raises(ConfigError):
        ExternalJob(db, q, NlmParams(h_r=0.5))
