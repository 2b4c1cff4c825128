"""Sampling patterns: uniform, water-filling optimal, quantized, and the samplers that draw from them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InfeasibleError, PatchDatabase, SamplingPattern, WeightBounds


@dataclass(frozen=True)
class BisectionConfig:
    tol: float = 1e-8
    max_iters: int = 200

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


DEFAULT_BISECTION = BisectionConfig()
DEFAULT_BINS = 32


def _as_bounds(b) -> np.ndarray:
    if isinstance(b, WeightBounds):
        return b.bounds
    return WeightBounds(b).bounds


def _check_xi(xi: float):
    if not 0 < xi <= 1:
        raise ValueError(f"sampling ratio must lie in (0, 1], got {xi}")


def rng_stream(seed: int, *stream_id: int) -> np.random.Generator:
    """Independent generator for ``stream_id`` under a master ``seed``.

    Streams are keyed, not sequential, so a pixel's randomness does not depend
    on which worker handles it or in what order.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in stream_id)))


def uniform_pattern(n: int, xi: float) -> SamplingPattern:
    _check_xi(xi)
    if n < 1:
        raise ValueError("n must be >= 1")
    return SamplingPattern(np.full(n, float(xi)), xi, tau=None, t=None)


def theorem_t(b, xi: float) -> float:
    """The lower-bound scale ``t = max(sum(b) / (n xi), max(b))``."""
    b = _as_bounds(b)
    return max(float(b.sum()) / (b.size * xi), float(b.max()))


def g_t(tau: float, b, t: float, xi: float) -> float:
    """Budget residual ``sum_j max(min(b_j tau, 1), b_j / t) - n xi``."""
    b = _as_bounds(b)
    _check_xi(xi)
    n = b.size
    if t < b.max() * (1 - 1e-12) or t < b.sum() / (n * xi) * (1 - 1e-12):
        raise InfeasibleError(f"t={t} violates t >= max(b) and t >= sum(b)/(n xi)")
    p = np.maximum(np.minimum(b * tau, 1.0), b / t)
    return float(p.sum() - n * xi)


def bisection(func, lo: float, hi: float, cfg: BisectionConfig = DEFAULT_BISECTION):
    """Bisection on a nondecreasing function with ``func(lo) <= 0 <= func(hi)``.

    Returns ``(root, iterations)``.  Stops when the bracket is narrower than
    ``cfg.tol`` or the midpoint residual is within ``cfg.tol`` of zero; an
    endpoint whose residual is already within ``cfg.tol`` is returned as is.
    """
    fa, fb = func(lo), func(hi)
    if abs(fa) <= cfg.tol:
        return lo, 0
    if abs(fb) <= cfg.tol:
        return hi, 0
    if fa > 0 or fb < 0:
        raise InfeasibleError(f"no sign change on [{lo}, {hi}]: g={fa}, {fb}")
    a, b = lo, hi
    c, fc = 0.5 * (a + b), math.inf
    it = 0
    while abs(b - a) > cfg.tol and abs(fc) > cfg.tol and it < cfg.max_iters:
        c = 0.5 * (a + b)
        fc = func(c)
        if fa < 0 and fc > 0:
            b, fb = c, fc
        else:
            a, fa = c, fc
        it += 1
    return c, it


def _polish(b: np.ndarray, lower: np.ndarray, budget: float, tau: float) -> float:
    """One exact step on the linear piece of the residual containing ``tau``."""
    scaled = b * tau
    top = scaled >= 1.0
    bottom = (scaled <= lower) & ~top
    free = ~(top | bottom)
    slope = b[free].sum()
    if slope <= 0:
        return tau
    cand = (budget - top.sum() - lower[bottom].sum()) / slope
    p = lambda x: np.maximum(np.minimum(b * x, 1.0), lower).sum() - budget
    return cand if abs(p(cand)) < abs(p(tau)) else tau


def bisect_tau(b, xi: float, t: float, cfg: BisectionConfig = DEFAULT_BISECTION) -> float:
    """Root of :func:`g_t` on the bracket ``[1/t, 1/min(b)]``."""
    tau, _ = bisect_tau_iters(b, xi, t, cfg)
    return tau


def bisect_tau_iters(b, xi: float, t: float, cfg: BisectionConfig = DEFAULT_BISECTION):
    b = _as_bounds(b)
    return bisection(lambda x: g_t(x, b, t, xi), 1.0 / t, 1.0 / b.min(), cfg)


def pattern_from_tau(b, tau: float, t: float) -> np.ndarray:
    b = _as_bounds(b)
    return np.minimum(np.maximum(np.minimum(b * tau, 1.0), b / t), 1.0)


def optimal_pattern(b, xi: float, cfg: BisectionConfig = DEFAULT_BISECTION) -> SamplingPattern:
    """Water-filling pattern ``p_j = max(min(b_j tau, 1), b_j / t)`` with budget ``n xi``."""
    b = _as_bounds(b)
    _check_xi(xi)
    t = theorem_t(b, xi)
    if xi == 1.0:
        return SamplingPattern(np.ones(b.size), 1.0, tau=1.0 / b.min(), t=t)
    tau = bisect_tau(b, xi, t, cfg)
    tau = _polish(b, b / t, b.size * xi, tau)
    return SamplingPattern(pattern_from_tau(b, tau, t), xi, tau=tau, t=t)


def waterfill_lower_bounded(b, xi: float, delta, cfg: BisectionConfig = DEFAULT_BISECTION) -> np.ndarray:
    """Probabilities ``max(min(b_j tau, 1), delta_j)`` summing to ``n xi``."""
    b = _as_bounds(b)
    _check_xi(xi)
    delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), b.shape)
    if np.any(delta < 0) or np.any(delta > 1):
        raise ValueError("lower bounds must lie in [0, 1]")
    budget = b.size * xi
    if delta.sum() > budget * (1 + 1e-12):
        raise InfeasibleError(f"lower bounds sum to {delta.sum()} > budget {budget}")
    resid = lambda x: float(np.maximum(np.minimum(b * x, 1.0), delta).sum() - budget)
    tau, _ = bisection(resid, 0.0, 1.0 / b.min(), cfg)
    tau = _polish(b, delta, budget, tau)
    return np.maximum(np.minimum(b * tau, 1.0), delta)


def optimal_pattern_rows(B: np.ndarray, valid: np.ndarray, xi: float,
                         cfg: BisectionConfig = DEFAULT_BISECTION) -> np.ndarray:
    """Row-wise :func:`optimal_pattern` for a stack of bound vectors.

    ``B`` is (k, K); entries where ``valid`` is False are excluded and get
    probability 0.  Each row is solved with its own budget ``n_row * xi``.
    """
    _check_xi(xi)
    B = np.where(valid, B, 0.0)
    n = valid.sum(axis=1)
    if np.any(n == 0):
        raise ValueError("every row needs at least one valid entry")
    if np.any(B[valid] <= 0) or np.any(B > 1):
        raise ValueError("weight bounds must lie in (0, 1]")
    budget = n * xi
    t = np.maximum(B.sum(axis=1) / budget, B.max(axis=1))
    if xi == 1.0:
        return valid.astype(np.float64)
    bmin = np.where(valid, B, np.inf).min(axis=1)
    lo, hi = 1.0 / t, 1.0 / bmin
    lower = B / t[:, None]

    def resid(tau):
        p = np.maximum(np.minimum(B * tau[:, None], 1.0), lower)
        return p.sum(axis=1) - budget

    fa = resid(lo)
    at_lo = np.abs(fa) <= cfg.tol
    fc = np.where(at_lo, fa, np.inf)
    c = np.where(at_lo, lo, 0.5 * (lo + hi))
    for _ in range(cfg.max_iters):
        active = (np.abs(hi - lo) > cfg.tol) & (np.abs(fc) > cfg.tol)
        if not active.any():
            break
        c = np.where(active, 0.5 * (lo + hi), c)
        f = resid(c)
        fc = np.where(active, f, fc)
        up = active & (fa < 0) & (f > 0)
        down = active & ~up
        hi = np.where(up, c, hi)
        lo = np.where(down, c, lo)
        fa = np.where(down, f, fa)
    # exact step on the linear piece, as in _polish
    scaled = B * c[:, None]
    top = valid & (scaled >= 1.0)
    free = valid & ~top & (scaled > lower)
    bottom = valid & ~top & ~free
    slope = np.where(free, B, 0.0).sum(axis=1)
    fixed = top.sum(axis=1) + np.where(bottom, lower, 0.0).sum(axis=1)
    cand = np.where(slope > 0, (budget - fixed) / np.where(slope > 0, slope, 1.0), c)
    better = np.abs(resid(cand)) < np.abs(resid(c))
    tau = np.where(better, cand, c)
    p = np.maximum(np.minimum(B * tau[:, None], 1.0), lower)
    return np.where(valid, np.minimum(p, 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class BoundHistogram:
    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray
    labels: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def width(self) -> float:
        return float((self.upper - self.lower).max())


def equal_width_bins(values: np.ndarray, n_bins: int):
    """Equal-width bins over ``[min, max]``.

    Bins are right-closed ``(l_q, u_q]`` with the first bin also closed on the
    left.  Returns ``(lower, upper, labels)``.
    """
    if n_bins < 1:
        raise ValueError("need at least one bin")
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        n_bins = 1
    edges = np.linspace(lo, hi, n_bins + 1)
    edges[0], edges[-1] = lo, hi
    labels = np.searchsorted(edges[1:-1], values, side="left")
    return edges[:-1].copy(), edges[1:].copy(), labels


def quantize_bounds(b, Q: int = DEFAULT_BINS) -> BoundHistogram:
    b = _as_bounds(b)
    lower, upper, labels = equal_width_bins(b, Q)
    counts = np.bincount(labels, minlength=lower.size)
    return BoundHistogram(lower, upper, counts, labels)


def quantized_g_t(tau: float, hist: BoundHistogram, t: float, xi: float) -> float:
    """O(Q) approximation of :func:`g_t` using bin centers."""
    c = hist.centers
    p = np.maximum(np.minimum(c * tau, 1.0), c / t)
    return float((hist.counts * p).sum() - hist.n * xi)


def quantized_tau(b, xi: float, Q: int = DEFAULT_BINS, cfg: BisectionConfig = DEFAULT_BISECTION) -> float:
    """Root of :func:`quantized_g_t`; the bracket comes from the bin centers."""
    b = _as_bounds(b)
    _check_xi(xi)
    hist = quantize_bounds(b, Q)
    c = hist.centers[hist.counts > 0]
    t = max(float((hist.counts * hist.centers).sum()) / (hist.n * xi), float(c.max()))
    tau, _ = bisection(lambda x: quantized_g_t(x, hist, t, xi), 1.0 / t, 1.0 / c.min(), cfg)
    return tau


def draw_bernoulli(pattern: SamplingPattern, rng: np.random.Generator) -> np.ndarray:
    """Indices ``j`` with ``I_j = 1``, each kept independently with probability ``p_j``."""
    p = pattern.probs
    return np.flatnonzero(rng.random(p.size) < p)


def shared_uniform_indices(n: int, xi: float, rng: np.random.Generator) -> np.ndarray:
    """``round(xi n)`` indices in ``0..n-1`` drawn uniformly with replacement, for reuse across pixels."""
    _check_xi(xi)
    k = int(math.floor(xi * n + 0.5))
    return rng.integers(0, n, size=k)


@dataclass(frozen=True, eq=False)
class Envelope:
    """Piecewise-constant stage-1 envelope for one query.

    ``r_bin[q]`` is the bound ``r_j`` shared by members of bin ``q``;
    ``rbar_bin[q] = min(r_bin[q] * tau1, 1)`` is the stage-1 probability.
    Stage 2 targets ``p_j = min(b_j * tau2, 1)``; ``tau1 = tau2`` keeps
    ``p_j <= rbar_j`` for every ``j``.  Full sampling uses ``tau = inf``.
    """

    y_proj: float
    q0: int
    r_bin: np.ndarray
    rbar_bin: np.ndarray
    tau1: float
    tau2: float
    bin_of: np.ndarray

    @property
    def r(self) -> np.ndarray:
        return self.rbar_bin[self.bin_of]

    @property
    def r_raw(self) -> np.ndarray:
        return self.r_bin[self.bin_of]

    def target(self, b: np.ndarray) -> np.ndarray:
        if math.isinf(self.tau2):
            return np.ones_like(b, dtype=np.float64)
        return np.minimum(b * self.tau2, 1.0)


def query_bin(db: PatchDatabase, y_proj: float) -> tuple[int, float]:
    """Bin containing ``y_proj`` after clamping it into ``[l_1, u_Q]``."""
    y = min(max(float(y_proj), float(db.bin_lower[0])), float(db.bin_upper[-1]))
    q0 = int(np.searchsorted(db.bin_upper[:-1], y, side="left"))
    return q0, y


def envelope_bounds(db: PatchDatabase, y_proj: float) -> tuple[int, np.ndarray]:
    """Per-bin upper bound on ``exp(-(x_proj - y_proj)^2)`` and the query's bin."""
    q0, y = query_bin(db, y_proj)
    q = np.arange(db.n_bins)
    gap = np.where(q < q0, y - db.bin_upper, np.where(q > q0, db.bin_lower - y, 0.0))
    return q0, np.exp(-np.maximum(gap, 0.0) ** 2)


def build_envelope(db: PatchDatabase, y_proj: float, xi: float, *, exact: bool = False,
                   cfg: BisectionConfig = DEFAULT_BISECTION) -> Envelope:
    """Stage-1 envelope for the intensity-optimal pattern.

    By default ``tau2`` solves the budget on the bin histogram (bins weighted
    by the bound at their mean projection), costing O(Q).  With
    ``exact=True`` it is solved on all ``n`` bounds, so the net pattern is
    exactly :func:`optimal_pattern` of the intensity bounds.
    """
    _check_xi(xi)
    q0, r_bin = envelope_bounds(db, y_proj)
    if xi == 1.0:
        # full sampling: every stage is certain, tau is unbounded
        return Envelope(float(y_proj), q0, r_bin, np.ones_like(r_bin), math.inf, math.inf, db.bin_of)
    if exact:
        b = np.exp(-(db.projections - y_proj) ** 2)
        tau2 = optimal_pattern(b, xi, cfg).tau
    else:
        counts = db.counts
        occupied = counts > 0
        rep = np.exp(-(db.bin_means[occupied] - y_proj) ** 2)
        cnt = counts[occupied]
        budget = db.n * xi
        resid = lambda x: float((cnt * np.minimum(rep * x, 1.0)).sum() - budget)
        tau2, _ = bisection(resid, 0.0, 1.0 / rep.min(), cfg)
    rbar = np.minimum(r_bin * tau2, 1.0)
    return Envelope(float(y_proj), q0, r_bin, rbar, tau2, tau2, db.bin_of)


@dataclass(frozen=True, eq=False)
class TwoStageDraw:
    indices: np.ndarray
    stage1: np.ndarray
    accept_prob: np.ndarray
    bounds: np.ndarray
    probs: np.ndarray

    @property
    def n_stage1(self) -> int:
        return self.stage1.size


def two_stage_sample(db: PatchDatabase, y_proj: float, xi: float, rng: np.random.Generator,
                     envelope: Envelope | None = None) -> TwoStageDraw:
    """Draw from the envelope, then thin survivors with ``p_j / rbar_j``.

    Intensity bounds are evaluated only for stage-1 survivors.  ``indices``
    are returned in ascending order; ``stage1``, ``accept_prob`` and
    ``bounds`` record every stage-1 survivor; ``probs`` holds the target
    inclusion probability of each returned index.
    """
    env = envelope if envelope is not None else build_envelope(db, y_proj, xi)
    counts = db.counts
    k = rng.binomial(counts, env.rbar_bin)
    picked = []
    for q in np.flatnonzero(k):
        members = db.members(q)
        if k[q] == members.size:
            picked.append(members)
        else:
            picked.append(rng.choice(members, size=k[q], replace=False))
    stage1 = np.sort(np.concatenate(picked)) if picked else np.empty(0, dtype=np.int64)
    b = np.exp(-(db.projections[stage1] - y_proj) ** 2)
    p = env.target(b)
    ratio = p / env.rbar_bin[db.bin_of[stage1]]
    if np.any(ratio > 1.0 + 1e-12):
        raise RuntimeError("stage-2 acceptance ratio exceeds 1: envelope does not dominate")
    keep = rng.random(stage1.size) < ratio
    return TwoStageDraw(stage1[keep], stage1, ratio, b, p[keep])
