"""Per-pixel NLM estimates: the exact weighted average and its Monte Carlo version."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SamplingPattern


class DegenerateWeightsError(ValueError):
    """All similarity weights are zero, so the weighted average is undefined."""


@dataclass
class EstimateAccumulators:
    """Running sums ``A = (1/n) sum x_j w_j I_j / p_j`` and ``B = (1/n) sum w_j I_j / p_j``."""

    n: int
    num: float = 0.0
    den: float = 0.0
    sampled: int = 0

    def add(self, w: float, x: float, p: float):
        self.num += w * x / p
        self.den += w / p
        self.sampled += 1

    @property
    def A(self) -> float:
        return self.num / self.n

    @property
    def B(self) -> float:
        return self.den / self.n

    def ratio(self) -> float:
        # the 1/n factors cancel; dividing the raw sums keeps p = 1 identical to full NLM
        if self.den == 0.0:
            return 1.0
        return self.num / self.den


def full_nlm_pixel(weights, centers) -> float:
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(centers, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError("weights and centers differ in length")
    num = den = 0.0
    for wj, xj in zip(w.tolist(), x.tolist()):
        num += wj * xj
        den += wj
    if den == 0.0:
        raise DegenerateWeightsError("all weights are zero")
    return num / den


def mcnlm_pixel(weight_fn, pattern: SamplingPattern, rng: np.random.Generator,
                acc: EstimateAccumulators | None = None) -> float:
    """Monte Carlo NLM for one pixel.

    ``weight_fn(j)`` returns ``(w_j, x_j)`` and is called only for sampled
    indices, in ascending order.  Indices with ``p_j = 1`` are always taken.
    Returns 1 when nothing was sampled.
    """
    p = pattern.probs
    if acc is None:
        acc = EstimateAccumulators(p.size)
    if np.all(p == 1.0):
        chosen = range(p.size)
    else:
        chosen = np.flatnonzero(rng.random(p.size) < p).tolist()
    for j in chosen:
        w, x = weight_fn(j)
        acc.add(w, x, float(p[j]))
    return acc.ratio()


def population_moments(weights, centers) -> tuple[float, float]:
    """``(mu_A, mu_B) = (mean(x w), mean(w))``."""
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(centers, dtype=np.float64)
    if w.size < 1 or w.shape != x.shape:
        raise ValueError("need equal-length, nonempty weights and centers")
    return float(np.mean(x * w)), float(np.mean(w))


def sample_estimates(weights, centers, pattern: SamplingPattern, trials: int,
                     rng: np.random.Generator, chunk: int = 2048) -> np.ndarray:
    """``trials`` independent draws of Z for a fixed instance.

    Uniform patterns use geometric gaps between selected indices, which
    costs O(n xi) per draw instead of O(n).
    """
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(centers, dtype=np.float64)
    p = pattern.probs
    out = np.empty(trials)
    if np.all(p == p[0]):
        return _sample_uniform(w * x, w, float(p[0]), trials, rng, out)
    a, b = w * x / p, w / p
    for s in range(0, trials, chunk):
        k = min(chunk, trials - s)
        ind = rng.random((k, p.size)) < p
        num = ind @ a
        den = ind @ b
        out[s:s + k] = _ratio(num, den)
    return out


def _ratio(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)


def _sample_uniform(a, b, xi, trials, rng, out, chunk=4096):
    n = a.size
    if xi == 1.0:
        out[:] = _ratio(a.sum(), b.sum())
        return out
    a_ext = np.append(a, 0.0)
    b_ext = np.append(b, 0.0)
    mean = n * xi
    width = int(mean + 8 * np.sqrt(mean) + 16)
    for s in range(0, trials, chunk):
        k = min(chunk, trials - s)
        pos = np.cumsum(rng.geometric(xi, size=(k, width)), axis=1) - 1
        short = pos[:, -1] < n
        while short.any():
            more = np.cumsum(rng.geometric(xi, size=(int(short.sum()), width)), axis=1)
            ext = np.full((k, width), n, dtype=pos.dtype)
            ext[short] = more + pos[short, -1:]
            pos = np.concatenate([pos, ext], axis=1)
            short = pos[:, -1] < n
        pos = np.minimum(pos, n)
        out[s:s + k] = _ratio(a_ext[pos].sum(axis=1), b_ext[pos].sum(axis=1))
    return out
