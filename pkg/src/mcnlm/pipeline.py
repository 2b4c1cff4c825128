"""Internal (single image) and external (patch database) denoising, noise synthesis, PSNR."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import DimensionError, Image, NlmParams, PatchConfig, PatchDatabase, patch_matrix
from .sampling import (
    DEFAULT_BINS, equal_width_bins, optimal_pattern_rows, rng_stream,
    shared_uniform_indices, two_stage_sample,
)
from .weights import compute_projections, spatial_bound_offsets

INTERNAL_KINDS = ("uniform", "spatial", "oracle")
EXTERNAL_KINDS = ("uniform", "intensity")
WORKERS_ENV = "MCNLM_WORKERS"
# cap on (pixels in a band) x (window offsets) held in memory at once
_BAND_BUDGET = 1 << 21
_PIXELWISE_K = 2048  # windows with more offsets than this are processed pixel by pixel
_SHARED_STREAM = 2**32  # stream id reserved for patterns shared by all pixels


class ConfigError(ValueError):
    pass


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def default_params(sigma255: float, window: int = 21) -> NlmParams:
    """``h_r = 1.3 sigma / 255``, ``h_s = floor(window / 2) / 3``, half-window ``floor(window / 2)``."""
    half = window // 2
    return NlmParams(h_r=1.3 * sigma255 / 255.0, h_s=half / 3.0, rho=half)


def add_gaussian_noise(img: Image, sigma: float, seed: int) -> Image:
    """Add i.i.d. N(0, sigma^2) noise (normalized units) and clamp to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img
    rng = np.random.default_rng(seed)
    noisy = img.data + sigma * rng.standard_normal(img.shape)
    return Image(np.clip(noisy, 0.0, 1.0))


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)`` for [0, 1] data; ``inf`` for identical inputs."""
    a = a.data if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def patch_sq_dist(patches_a: np.ndarray, patches_b: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Row-wise weighted squared distance; every code path that needs bit-identical weights uses this."""
    diff = patches_a - patches_b
    return np.einsum("ij,ij,j->i", diff, diff, lam)


# --------------------------------------------------------------------------- internal


@dataclass(frozen=True, eq=False)
class InternalJob:
    noisy: Image
    params: NlmParams
    cfg: PatchConfig = field(default_factory=PatchConfig)
    xi: float = 1.0
    pattern_kind: str = "spatial"
    seed: int = 0
    fast: bool = False
    empty_fallback: str = "one"
    workers: int | None = None

    def __post_init__(self):
        if self.pattern_kind not in INTERNAL_KINDS:
            raise ConfigError(f"pattern_kind must be one of {INTERNAL_KINDS}")
        if not 0 < self.xi <= 1:
            raise ConfigError("xi must lie in (0, 1]")
        if self.pattern_kind == "spatial" and math.isinf(self.params.rho) and math.isinf(self.params.h_s):
            raise ConfigError("spatial pattern needs a finite rho or a finite h_s")
        if self.empty_fallback not in ("one", "noisy"):
            raise ConfigError("empty_fallback must be 'one' or 'noisy'")


@dataclass(frozen=True, eq=False)
class InternalResult:
    image: Image
    sampled: int
    candidates: int
    seconds: float

    @property
    def sampling_ratio(self) -> float:
        """Empirical fraction of candidate weights that were computed."""
        return self.sampled / self.candidates


class _Window:
    """Search-window geometry shared by every pixel of one image."""

    def __init__(self, shape, params: NlmParams):
        H, W = shape
        ry = H - 1 if math.isinf(params.rho) else min(int(params.rho), H - 1)
        rx = W - 1 if math.isinf(params.rho) else min(int(params.rho), W - 1)
        if ry < 1 and rx < 1:
            raise ConfigError("search window is empty")
        dy, dx = np.meshgrid(np.arange(-ry, ry + 1), np.arange(-rx, rx + 1), indexing="ij")
        self.offsets = np.stack([dy.ravel(), dx.ravel()], axis=1)
        self.ws = spatial_bound_offsets(self.offsets, params)
        self.lin = self.offsets[:, 0] * W + self.offsets[:, 1]
        self.shape = (H, W)
        self.ry, self.rx = ry, rx

    @property
    def K(self) -> int:
        return self.offsets.shape[0]

    def valid(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        H, W = self.shape
        r2 = rows[:, None] + self.offsets[None, :, 0]
        c2 = cols[:, None] + self.offsets[None, :, 1]
        return (r2 >= 0) & (r2 < H) & (c2 >= 0) & (c2 < W) & (self.ws > 0)[None, :]


def _bands(H: int, W: int, K: int):
    rows = max(1, min(H, _BAND_BUDGET // max(1, W * K)))
    return [(r, min(H, r + rows)) for r in range(0, H, rows)]


def _spatial_probs(win: _Window, rows, cols, valid, xi) -> np.ndarray:
    """Spatial-optimal pattern per pixel; pixels sharing a truncated window share a pattern."""
    H, W = win.shape
    key_r = np.minimum(rows, win.ry) * (2 * H) + np.minimum(H - 1 - rows, win.ry)
    key_c = np.minimum(cols, win.rx) * (2 * W) + np.minimum(W - 1 - cols, win.rx)
    key = key_r.astype(np.int64) * (4 * W * W) + key_c
    uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
    B = np.broadcast_to(win.ws, (uniq.size, win.K))
    table = optimal_pattern_rows(B, valid[first], xi)
    return table[inv]


def _weights_for(Pm, x, lam, h_r, ws_k, ii, jj):
    dist = patch_sq_dist(Pm[ii], Pm[jj], lam)
    return ws_k * np.exp(-dist / (2.0 * h_r * h_r)), x[jj]


def _internal_band(job: InternalJob, win: _Window, Pm, x, lam, r0, r1, shared):
    H, W = win.shape
    px = np.arange(r0 * W, r1 * W)
    rows, cols = px // W, px % W
    valid = win.valid(rows, cols)
    xi = job.xi
    h_r = job.params.h_r

    W_all = None
    if xi == 1.0:
        P = valid.astype(np.float64)
    elif job.pattern_kind == "uniform":
        P = np.where(valid, xi, 0.0)
    elif job.pattern_kind == "spatial":
        P = _spatial_probs(win, rows, cols, valid, xi)
    else:
        W_all = np.zeros(valid.shape)
        for k in range(win.K):
            sel = np.flatnonzero(valid[:, k])
            if sel.size:
                W_all[sel, k], _ = _weights_for(Pm, x, lam, h_r, win.ws[k], px[sel], px[sel] + win.lin[k])
        P = optimal_pattern_rows(np.maximum(W_all, 1e-300), valid, xi)

    if shared is not None:
        coef_mult = np.where(valid, shared[None, :], 0.0)
    elif np.all(P[valid] == 1.0):
        coef_mult = valid.astype(np.float64)
    else:
        U = np.empty(valid.shape)
        for k, i in enumerate(px):
            U[k] = rng_stream(job.seed, i).random(win.K)
        taken = valid & (U < P)
        coef_mult = np.where(taken, 1.0 / np.where(taken, P, 1.0), 0.0)

    num = np.zeros(px.size)
    den = np.zeros(px.size)
    sampled = 0
    for k in range(win.K):
        sel = np.flatnonzero(coef_mult[:, k])
        if not sel.size:
            continue
        sampled += sel.size
        if W_all is not None:
            w, xj = W_all[sel, k], x[px[sel] + win.lin[k]]
        else:
            w, xj = _weights_for(Pm, x, lam, h_r, win.ws[k], px[sel], px[sel] + win.lin[k])
        coef = w * coef_mult[sel, k]
        num[sel] += coef * xj
        den[sel] += coef
    empty = den == 0
    out = np.empty(px.size)
    out[~empty] = num[~empty] / den[~empty]
    out[empty] = 1.0 if job.empty_fallback == "one" else x[px[empty]]
    return r0, r1, out, sampled, int(valid.sum())


def _internal_pixels(job: InternalJob, win: _Window, Pm, x, lam, r0, r1, shared):
    """Same estimator as :func:`_internal_band`, vectorized over offsets one pixel at a time.

    Used for large search windows.  Random numbers, weights and the
    ascending-offset accumulation order match the banded path exactly.
    """
    H, W = win.shape
    xi = job.xi
    h2 = 2.0 * job.params.h_r * job.params.h_r
    span = 2 * win.rx + 1
    out = np.empty((r1 - r0) * W)
    sampled = candidates = 0
    spatial_cache = {}
    for r in range(r0, r1):
        dys = np.arange(max(-win.ry, -r), min(win.ry, H - 1 - r) + 1) + win.ry
        for c in range(W):
            i = r * W + c
            key = (dys[0], dys[-1], max(-win.rx, -c), min(win.rx, W - 1 - c))
            kk = (dys[:, None] * span + np.arange(key[2], key[3] + 1)[None, :] + win.rx).ravel()
            kk = kk[win.ws[kk] > 0]
            js = i + win.lin[kk]
            candidates += kk.size
            w_all = None
            if xi == 1.0:
                P = None
            elif job.pattern_kind == "uniform":
                P = np.full(kk.size, xi)
            elif job.pattern_kind == "spatial":
                if key not in spatial_cache:
                    spatial_cache[key] = optimal_pattern_rows(win.ws[kk][None, :], np.ones((1, kk.size), bool), xi)[0]
                P = spatial_cache[key]
            else:
                dist = patch_sq_dist(np.broadcast_to(Pm[i], (kk.size, Pm.shape[1])), Pm[js], lam)
                w_all = win.ws[kk] * np.exp(-dist / h2)
                P = optimal_pattern_rows(np.maximum(w_all, 1e-300)[None, :], np.ones((1, kk.size), bool), xi)[0]
            if shared is not None:
                mult = shared[kk]
            elif P is None:
                mult = np.ones(kk.size)
            else:
                U = rng_stream(job.seed, i).random(win.K)[kk]
                taken = U < P
                mult = np.where(taken, 1.0 / np.where(taken, P, 1.0), 0.0)
            sel = np.flatnonzero(mult)
            sampled += sel.size
            if sel.size == 0:
                out[i - r0 * W] = 1.0 if job.empty_fallback == "one" else x[i]
                continue
            if w_all is None:
                dist = patch_sq_dist(np.broadcast_to(Pm[i], (sel.size, Pm.shape[1])), Pm[js[sel]], lam)
                w = win.ws[kk[sel]] * np.exp(-dist / h2)
            else:
                w = w_all[sel]
            coef = w * mult[sel]
            # running sums in ascending offset order, as in the banded path
            num = np.cumsum(coef * x[js[sel]])[-1]
            den = np.cumsum(coef)[-1]
            if den == 0:
                out[i - r0 * W] = 1.0 if job.empty_fallback == "one" else x[i]
            else:
                out[i - r0 * W] = num / den
    return r0, r1, out, sampled, candidates


def _shared_multipliers(job: InternalJob, win: _Window):
    """Per-offset multipliers reused by every pixel (fast mode)."""
    rng = rng_stream(job.seed, _SHARED_STREAM)
    if job.xi == 1.0:
        return np.ones(win.K)
    if job.pattern_kind == "uniform":
        idx = shared_uniform_indices(win.K, job.xi, rng)
        return np.bincount(idx, minlength=win.K).astype(np.float64)
    if job.pattern_kind == "spatial":
        p = optimal_pattern_rows(win.ws[None, :], (win.ws > 0)[None, :], job.xi)[0]
        taken = rng.random(win.K) < p
        return np.where(taken, 1.0 / np.where(p > 0, p, 1.0), 0.0)
    raise ConfigError("fast mode is not available for the oracle pattern")


def run_internal(job: InternalJob) -> InternalResult:
    start = time.perf_counter()
    img = job.noisy
    H, W = img.shape
    win = _Window(img.shape, job.params)
    Pm = patch_matrix(img, job.cfg)
    lam = job.params.metric(job.cfg.d)
    x = img.data.ravel()
    shared = _shared_multipliers(job, win) if job.fast else None
    out = np.empty(H * W)
    sampled = candidates = 0
    workers = job.workers or default_workers()
    if win.K > _PIXELWISE_K:
        tasks = [(r, min(H, r + 4)) for r in range(0, H, 4)]
        kernel = _internal_pixels
    else:
        tasks = _bands(H, W, win.K)
        kernel = _internal_band
    run = lambda band: kernel(job, win, Pm, x, lam, band[0], band[1], shared)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    for r0, r1, vals, s, c in results:
        out[r0 * W:r1 * W] = vals
        sampled += s
        candidates += c
    res = Image(np.clip(out.reshape(H, W), 0.0, 1.0))
    return InternalResult(res, sampled, candidates, time.perf_counter() - start)


def denoise_internal(job: InternalJob) -> Image:
    return run_internal(job).image


def full_nlm_internal(noisy: Image, params: NlmParams, cfg: PatchConfig = PatchConfig()) -> Image:
    """Deterministic NLM over the whole search window; no sampling machinery involved."""
    H, W = noisy.shape
    win = _Window(noisy.shape, params)
    Pm = patch_matrix(noisy, cfg)
    lam = params.metric(cfg.d)
    x = noisy.data.ravel()
    rows, cols = np.divmod(np.arange(H * W), W)
    num = np.zeros(H * W)
    den = np.zeros(H * W)
    for k in range(win.K):
        dy, dx = win.offsets[k]
        ok = (rows + dy >= 0) & (rows + dy < H) & (cols + dx >= 0) & (cols + dx < W)
        if win.ws[k] == 0:
            continue
        ii = np.flatnonzero(ok)
        jj = ii + win.lin[k]
        w = win.ws[k] * np.exp(-patch_sq_dist(Pm[ii], Pm[jj], lam) / (2.0 * params.h_r * params.h_r))
        num[ii] += w * x[jj]
        den[ii] += w
    return Image(np.clip((num / den).reshape(H, W), 0.0, 1.0))


# --------------------------------------------------------------------------- external


def build_patch_database(images, cfg: PatchConfig, params: NlmParams, Q: int = DEFAULT_BINS) -> PatchDatabase:
    """Every fully-inside patch (stride 1) of every image, with projections and Q equal-width bins."""
    patches, centers = [], []
    for img in images:
        data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
        if data.shape[0] < cfg.side or data.shape[1] < cfg.side:
            continue
        win = np.lib.stride_tricks.sliding_window_view(data, (cfg.side, cfg.side))
        patches.append(win.reshape(-1, cfg.d))
        centers.append(data[cfg.half:data.shape[0] - cfg.half, cfg.half:data.shape[1] - cfg.half].ravel())
    if not patches:
        raise DimensionError("corpus contains no image large enough for one patch")
    patches = np.ascontiguousarray(np.concatenate(patches))
    centers = np.concatenate(centers)
    proj = compute_projections(patches, params)
    lower, upper, labels = equal_width_bins(proj, Q)
    return PatchDatabase(patches, centers, proj, lower, upper, labels, h_r=params.h_r, side=cfg.side)


@dataclass(frozen=True, eq=False)
class ExternalJob:
    db: PatchDatabase
    queries: np.ndarray
    params: NlmParams
    xi: float = 1.0
    pattern_kind: str = "intensity"
    seed: int = 0
    empty_fallback: str = "one"

    def __post_init__(self):
        if self.pattern_kind not in EXTERNAL_KINDS:
            raise ConfigError(f"pattern_kind must be one of {EXTERNAL_KINDS}")
        if not 0 < self.xi <= 1:
            raise ConfigError("xi must lie in (0, 1]")
        q = np.asarray(self.queries, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.db.d:
            raise DimensionError("queries must be (k, d) with d matching the database")
        if self.params.h_r != self.db.h_r and self.pattern_kind == "intensity":
            raise ConfigError("database projections were built with a different h_r")
        object.__setattr__(self, "queries", q)


@dataclass(frozen=True, eq=False)
class ExternalResult:
    estimates: np.ndarray
    sampled: np.ndarray
    stage1: np.ndarray
    seconds: float

    @property
    def sampling_ratio(self) -> float:
        return float(self.sampled.mean())


def _external_query(job: ExternalJob, q: int, lam, y_proj):
    db = job.db
    y = job.queries[q]
    n = db.n
    stage1 = 0
    if job.xi == 1.0:
        idx = np.arange(n)
        scale = None
    elif job.pattern_kind == "uniform":
        idx = np.flatnonzero(rng_stream(job.seed, q).random(n) < job.xi)
        scale = np.full(idx.size, job.xi)
    else:
        draw = two_stage_sample(db, y_proj, job.xi, rng_stream(job.seed, q))
        idx, scale = draw.indices, draw.probs
        stage1 = draw.n_stage1
    if idx.size == 0:
        return (1.0 if job.empty_fallback == "one" else float(y[y.size // 2])), 0, stage1
    ref = db.patches if scale is None else db.patches[idx]
    w = np.exp(-patch_sq_dist(ref, y[None, :], lam) / (2.0 * job.params.h_r ** 2))
    coef = w if scale is None else w / scale
    num = float(np.sum(coef * (db.centers if scale is None else db.centers[idx])))
    den = float(np.sum(coef))
    if den == 0:
        return (1.0 if job.empty_fallback == "one" else float(y[y.size // 2])), idx.size, stage1
    return float(num) / den, idx.size, stage1


def run_external(job: ExternalJob) -> ExternalResult:
    start = time.perf_counter()
    lam = job.params.metric(job.db.d)
    proj = compute_projections(job.queries, job.params)
    k = job.queries.shape[0]
    est = np.empty(k)
    sampled = np.empty(k)
    stage1 = np.zeros(k)
    for q in range(k):
        est[q], s, s1 = _external_query(job, q, lam, proj[q])
        sampled[q] = s / job.db.n
        stage1[q] = s1 / job.db.n
    return ExternalResult(est, sampled, stage1, time.perf_counter() - start)


def denoise_external(job: ExternalJob) -> np.ndarray:
    return run_external(job).estimates


def full_nlm_external(db: PatchDatabase, queries, params: NlmParams) -> np.ndarray:
    """Direct weighted average over the whole database for each query."""
    queries = np.asarray(queries, dtype=np.float64)
    lam = params.metric(db.d)
    out = np.empty(queries.shape[0])
    for q, y in enumerate(queries):
        w = np.exp(-patch_sq_dist(db.patches, y[None, :], lam) / (2.0 * params.h_r ** 2))
        out[q] = float(np.sum(w * db.centers)) / float(np.sum(w))
    return out


def sample_queries(clean_images, noisy_images, cfg: PatchConfig, count: int, seed: int):
    """Random fully-inside noisy patches and the clean values at their centers."""
    rng = np.random.default_rng(seed)
    sizes = np.array([max(0, img.height - cfg.side + 1) * max(0, img.width - cfg.side + 1)
                      for img in noisy_images])
    if sizes.sum() == 0:
        raise DimensionError("no image large enough for one patch")
    which = rng.choice(len(noisy_images), size=count, p=sizes / sizes.sum())
    patches = np.empty((count, cfg.d))
    truth = np.empty(count)
    for q, t in enumerate(which):
        noisy = noisy_images[t]
        r = rng.integers(noisy.height - cfg.side + 1)
        c = rng.integers(noisy.width - cfg.side + 1)
        patches[q] = noisy.data[r:r + cfg.side, c:c + cfg.side].ravel()
        truth[q] = clean_images[t].data[r + cfg.half, c + cfg.half]
    return patches, truth
