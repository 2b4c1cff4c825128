"""Seeded synthetic data: piecewise-smooth 1-D signals and 2-D test images."""

from __future__ import annotations

import numpy as np

from .core import Image


def piecewise_signal(n: int, rng: np.random.Generator, pieces: int = 8) -> np.ndarray:
    """Clean signal in [0.1, 0.9]: constant, ramp and sinusoid segments with jumps between them."""
    cuts = np.sort(rng.choice(np.arange(1, n), size=min(pieces - 1, n - 1), replace=False))
    out = np.empty(n)
    for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, n]):
        t = np.linspace(0.0, 1.0, hi - lo)
        kind = rng.integers(3)
        base = rng.uniform(0.2, 0.8)
        if kind == 0:
            seg = np.full(hi - lo, base)
        elif kind == 1:
            seg = base + rng.uniform(-0.2, 0.2) * t
        else:
            seg = base + 0.1 * np.sin(2 * np.pi * rng.uniform(0.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
        out[lo:hi] = seg
    return np.clip(out, 0.1, 0.9)


def signal_instance(n: int, sigma: float, h_r: float, patch: int, seed: int, index: int | None = None):
    """Weights and centers for denoising one sample of a noisy 1-D signal.

    Patches are length-``patch`` windows (edge-replicated); the distance is the
    mean squared difference, ``h_s`` is infinite.  Returns ``(weights, centers)``
    over all ``n`` samples for the sample at ``index`` (default ``n // 2``).
    """
    rng = np.random.default_rng(seed)
    clean = piecewise_signal(n, rng)
    noisy = clean + sigma * rng.standard_normal(n)
    half = patch // 2
    padded = np.pad(noisy, half, mode="edge")
    P = np.lib.stride_tricks.sliding_window_view(padded, patch)
    i = n // 2 if index is None else index
    dist = np.mean((P - P[i]) ** 2, axis=1)
    return np.exp(-dist / (2.0 * h_r * h_r)), noisy


def random_instance(n: int, rng: np.random.Generator):
    """Generic instance: weights in (0, 1] with a few near-duplicates, centers in [0, 1]."""
    w = rng.uniform(0.0, 1.0, n) ** rng.uniform(0.5, 4.0)
    w = np.maximum(w, 1e-3)
    w[rng.integers(n)] = 1.0
    return w, rng.uniform(0.0, 1.0, n)


def piecewise_image(shape, seed: int, shapes: int = 12) -> Image:
    """Smooth background gradient with random flat rectangles and discs plus a faint texture."""
    rng = np.random.default_rng(seed)
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W] / max(H, W)
    img = rng.uniform(0.2, 0.8) + rng.uniform(-0.2, 0.2) * xx + rng.uniform(-0.2, 0.2) * yy
    for _ in range(shapes):
        level = rng.uniform(0.05, 0.95)
        cy, cx = rng.uniform(0, 1, 2)
        size = rng.uniform(0.05, 0.3)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < size) & (np.abs(xx - cx) < size * rng.uniform(0.3, 1.5))
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < size * size
        img[mask] = level
    freq = rng.uniform(4, 16)
    img = img + 0.03 * np.sin(2 * np.pi * freq * (xx + 0.5 * yy))
    return Image(np.clip(img, 0.0, 1.0))


def piecewise_corpus(count: int, shape, seed: int) -> list[Image]:
    return [piecewise_image(shape, int(s)) for s in np.random.SeedSequence(seed).generate_state(count)]
