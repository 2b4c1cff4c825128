"""Brute-force reference computations for tiny instances.

These are deliberately exhaustive (2^n or 3^n) and share no code with the
fast paths they are used to check.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .core import InfeasibleError, SamplingPattern

MAX_ENUM_N = 20
MAX_GRID_N = 10


@dataclass(frozen=True, eq=False)
class EstimatorDistribution:
    """Exact law of Z over all indicator outcomes."""

    values: np.ndarray
    probs: np.ndarray
    z: float

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def tail(self, eps: float) -> float:
        """``Pr[|Z - z| > eps]``."""
        return float(self.probs[np.abs(self.values - self.z) > eps].sum())

    def mse(self) -> float:
        return float(np.dot((self.values - self.z) ** 2, self.probs))

    def atoms(self, decimals: int = 12):
        """Merge equal support points; returns ``(values, probs)`` sorted by value."""
        keys = np.round(self.values, decimals)
        uniq, inv = np.unique(keys, return_inverse=True)
        return uniq, np.bincount(inv, weights=self.probs)


def enumerate_estimator(weights, centers, pattern: SamplingPattern) -> EstimatorDistribution:
    """Distribution of ``Z = sum(w x I / p) / sum(w I / p)`` over all 2^n outcomes (Z = 1 if none sampled)."""
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(centers, dtype=np.float64)
    p = pattern.probs
    n = w.size
    if n > MAX_ENUM_N:
        raise ValueError(f"enumeration limited to n <= {MAX_ENUM_N}, got {n}")
    codes = np.arange(2**n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    prob = np.prod(np.where(bits, p, 1.0 - p), axis=1)
    num = bits @ (w * x / p)
    den = bits @ (w / p)
    vals = np.ones(codes.size)
    pos = den > 0
    vals[pos] = num[pos] / den[pos]
    z = float((w * x).sum() / w.sum())
    return EstimatorDistribution(vals, prob, z)


@functools.lru_cache(maxsize=None)
def _regimes(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1, 2), repeat=n)), dtype=np.int8)


def enumerate_active_sets(b, budget: float, delta, atol: float = 1e-12):
    """Solve ``min sum b_j^2 / p_j`` s.t. ``sum p = budget``, ``delta <= p <= 1`` by KKT enumeration.

    Each index is assigned one of three regimes (at its lower bound, free with
    ``p_j = b_j tau``, or at 1); every one of the 3^n assignments is checked
    for consistency and the best consistent point is returned together with
    the number of assignments examined.
    """
    b = np.asarray(b, dtype=np.float64)
    delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), b.shape)
    n = b.size
    reg = _regimes(n)
    low, free, up = reg == 0, reg == 1, reg == 2
    fixed = (low * delta).sum(axis=1) + up.sum(axis=1)
    slope = (free * b).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(slope > 0, (budget - fixed) / slope, 0.0)
    scaled = b[None, :] * tau[:, None]
    ok = np.where(slope > 0, tau > 0, np.abs(fixed - budget) <= 1e-9)
    ok &= np.all(~free | ((scaled >= delta - atol) & (scaled <= 1 + atol)), axis=1)
    ok &= np.all(~low | (scaled <= delta + atol), axis=1)
    ok &= np.all(~up | (scaled >= 1 - atol), axis=1)
    ok &= np.all(~low | (delta > 0), axis=1)
    if not ok.any():
        raise InfeasibleError("no consistent active set")
    P = np.where(low, delta, np.where(up, 1.0, scaled))[ok]
    obj = (b**2 / P).sum(axis=1)
    return P[np.argmin(obj)], reg.shape[0]


def problem_objective(b, p, M: float) -> float:
    """``(1/n) sum b_j^2 (1 - p_j) / p_j + M max_j b_j / p_j``."""
    b = np.asarray(b, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return float(np.mean(b**2 * (1 - p) / p) + M * np.max(b / p))


def grid_solve_pattern(b, xi: float, resolution: float = 1e-3, M: float = 1.0,
                       span: float = 4.0) -> np.ndarray:
    """Pattern minimising the bound-design objective, found without the closed form.

    The max term is handled through an epigraph scale ``t`` (``p_j >= b_j / t``);
    for each ``t`` on a grid of relative spacing ``resolution`` covering
    ``[t_min, span * t_min]`` the inner problem is solved by active-set
    enumeration, and the grid point with the lowest full objective wins.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    if n > MAX_GRID_N:
        raise ValueError(f"grid solver limited to n <= {MAX_GRID_N}, got {n}")
    if not 0 < xi <= 1:
        raise ValueError("xi must lie in (0, 1]")
    budget = n * xi
    t_min = max(b.sum() / budget, b.max())
    steps = int(np.ceil(np.log(span) / np.log1p(resolution)))
    best, best_val = None, np.inf
    cache = {}
    for k in range(steps + 1):
        t = t_min * (1 + resolution) ** k
        delta = np.minimum(b / t, 1.0)
        if delta.sum() > budget * (1 + 1e-12):
            continue
        p, _ = enumerate_active_sets(b, budget, delta)
        key = tuple(np.round(p, 12))
        if key not in cache:
            cache[key] = problem_objective(b, p, M)
        if cache[key] < best_val:
            best, best_val = p, cache[key]
    return best
