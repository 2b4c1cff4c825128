"""Similarity weights and the cheap upper bounds that drive sampling."""

from __future__ import annotations

import math

import numpy as np

from .core import DimensionError, Image, NlmParams, PatchConfig


def weighted_sq_dist(y, x, lam) -> float:
    """Return ``(y - x)^T diag(lam) (y - x)``."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if y.shape != x.shape or y.shape != lam.shape:
        raise DimensionError(f"shape mismatch: {y.shape}, {x.shape}, {lam.shape}")
    diff = y - x
    return float(np.sum(lam * diff * diff))


def intensity_weight(y, x, params: NlmParams) -> float:
    y = np.asarray(y, dtype=np.float64)
    dist = weighted_sq_dist(y, x, params.metric(y.size))
    return math.exp(-dist / (2.0 * params.h_r**2))


def _spatial_profile(dy, dx, params: NlmParams):
    dy = np.asarray(dy, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    inside = np.maximum(np.abs(dy), np.abs(dx)) <= params.rho
    if math.isinf(params.h_s):
        g = np.ones(np.broadcast(dy, dx).shape)
    else:
        g = np.exp(-(dy * dy + dx * dx) / (2.0 * params.h_s**2))
    return np.where(inside, g, 0.0)


def spatial_weight(i, j, params: NlmParams) -> float:
    """Gaussian of the Euclidean pixel distance, cut off outside the l-inf window ``rho``."""
    return float(_spatial_profile(j[0] - i[0], j[1] - i[1], params))


def combined_weight(i, j, y_i, x_j, params: NlmParams) -> float:
    ws = spatial_weight(i, j, params)
    if ws == 0.0:
        return 0.0
    return ws * intensity_weight(y_i, x_j, params)


def spatial_bound(i, j, params: NlmParams) -> float:
    """Upper bound on ``combined_weight`` that ignores patch content."""
    return spatial_weight(i, j, params)


def spatial_bound_offsets(offsets: np.ndarray, params: NlmParams) -> np.ndarray:
    """Vectorised spatial bound for an (k, 2) array of (dy, dx) offsets."""
    offsets = np.asarray(offsets)
    return _spatial_profile(offsets[:, 0], offsets[:, 1], params)


def projection_vector(d: int, params: NlmParams) -> np.ndarray:
    """``s = Lam 1 / (sqrt(2) h_r ||1||_Lam)``."""
    lam = params.metric(d)
    norm = math.sqrt(float(lam.sum()))
    return lam / (math.sqrt(2.0) * params.h_r * norm)


def compute_projections(source, params: NlmParams, cfg: PatchConfig | None = None) -> np.ndarray:
    """Project patches onto ``s``.

    ``source`` is either an (n, d) patch array or an :class:`Image`; for an
    image the result is an (height, width) array produced with an integral
    image (default metric) or a direct window correlation (general metric).
    """
    if isinstance(source, Image):
        if cfg is None:
            raise ValueError("a PatchConfig is required to project an image")
        return _image_projections(source, params, cfg)
    patches = np.asarray(source, dtype=np.float64)
    if patches.ndim == 1:
        return float(patches @ projection_vector(patches.size, params))
    return patches @ projection_vector(patches.shape[1], params)


def _image_projections(img: Image, params: NlmParams, cfg: PatchConfig) -> np.ndarray:
    s = projection_vector(cfg.d, params)
    padded = np.pad(img.data, cfg.half, mode="edge")
    if params.is_default_metric():
        # integral image: every entry of s is the same scalar
        ii = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
        np.cumsum(np.cumsum(padded, axis=0), axis=1, out=ii[1:, 1:])
        k = cfg.side
        box = ii[k:, k:] - ii[:-k, k:] - ii[k:, :-k] + ii[:-k, :-k]
        return box * s[0]
    win = np.lib.stride_tricks.sliding_window_view(padded, (cfg.side, cfg.side))
    return np.tensordot(win, s.reshape(cfg.side, cfg.side), axes=([2, 3], [0, 1]))


def intensity_bound(x_proj, y_proj):
    """``exp(-(x_proj - y_proj)^2)``; dominates the intensity weight for matching projections."""
    diff = np.asarray(x_proj, dtype=np.float64) - y_proj
    out = np.exp(-diff * diff)
    return float(out) if out.ndim == 0 else out
