"""Tail and MSE bounds for the Monte Carlo estimate, plus the Chebyshev baseline.

Every bound takes instance statistics rather than images.  Exponentials are
evaluated in log space and anything below 1e-300 is reported as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SamplingPattern

_TINY_LOG = math.log(1e-300)


def _exp(log_value: float) -> float:
    return 0.0 if log_value < _TINY_LOG else math.exp(log_value)


def _check_eps(eps: float):
    if not eps > 0:
        raise ValueError("eps must be > 0")


def chebyshev_bound(var_I1: float, n: int, eps: float) -> float:
    """``Var[I_1] / (n eps^2)``; may exceed 1 (callers clamp for display)."""
    _check_eps(eps)
    if n < 1 or var_I1 < 0:
        raise ValueError("need n >= 1 and a nonnegative variance")
    return var_I1 / (n * eps * eps)


def bernstein_bound(variances, M: float, n: int, eps: float) -> float:
    """One-sided Bernstein bound on ``Pr[S_n - E S_n > eps]`` for a mean of ``n`` bounded variables."""
    _check_eps(eps)
    v = np.broadcast_to(np.asarray(variances, dtype=np.float64), (n,)) if np.ndim(variances) == 0 \
        else np.asarray(variances, dtype=np.float64)
    if np.any(v < 0) or not M > 0 or n < 1:
        raise ValueError("variances must be >= 0, M > 0, n >= 1")
    mean_var = float(v.mean())
    return _exp(-n * eps * eps / (2.0 * (mean_var + M * eps / 3.0)))


@dataclass(frozen=True)
class InstanceStats:
    """Quantities entering the general tail bound for one pixel."""

    n: int
    xi: float
    mu_B: float
    z: float
    var_alpha: float
    var_beta: float
    M_alpha: float
    M_beta: float


def instance_stats(weights, centers, pattern: SamplingPattern, eps: float) -> InstanceStats:
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(centers, dtype=np.float64)
    p = pattern.probs
    z = float((w * x).sum() / w.sum())
    alpha = w * (x - z - eps)
    beta = w * (x - z + eps)
    r = (1.0 - p) / p
    return InstanceStats(
        n=w.size, xi=pattern.xi, mu_B=float(w.mean()), z=z,
        var_alpha=float(np.mean(alpha**2 * r)), var_beta=float(np.mean(beta**2 * r)),
        M_alpha=float(np.max(np.abs(alpha) / p)), M_beta=float(np.max(np.abs(beta) / p)),
    )


def theorem1_bound_from_stats(n: int, xi: float, mu_B: float, eps: float,
                              var_alpha: float, var_beta: float,
                              M_alpha: float, M_beta: float) -> float:
    """General-pattern tail bound from precomputed statistics.

    ``var_alpha`` is ``(1/n) sum alpha_j^2 (1 - p_j) / p_j`` (likewise for beta).
    """
    _check_eps(eps)
    a = mu_B * eps
    log_terms = [-n * xi]
    for var, M in ((var_alpha, M_alpha), (var_beta, M_beta)):
        denom = 2.0 * (var + a * M / 6.0)
        log_terms.append(-math.inf if denom == 0 else -n * a * a / denom)
    return sum(_exp(t) for t in log_terms)


def theorem1_bound_uniform(n: int, xi: float, mu_B: float, eps: float,
                           mean_alpha_sq: float, mean_beta_sq: float,
                           M_alpha: float, M_beta: float) -> float:
    """Same bound for ``p = xi`` everywhere, from plain means of ``alpha_j^2`` and ``beta_j^2``.

    With a constant pattern the factor ``(1 - p_j) / p_j`` comes out of the
    sums, so published summaries that report ``(1/n) sum alpha_j^2`` can be
    plugged in directly.
    """
    r = (1.0 - xi) / xi
    return theorem1_bound_from_stats(n, xi, mu_B, eps, mean_alpha_sq * r, mean_beta_sq * r, M_alpha, M_beta)


def theorem1_bound(alphas, betas, mu_B: float, pattern: SamplingPattern, eps: float) -> float:
    """Bound on ``Pr[|Z - z| > eps]`` for any pattern, given the alpha/beta vectors."""
    alphas = np.asarray(alphas, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    p = pattern.probs
    r = (1.0 - p) / p
    return theorem1_bound_from_stats(
        p.size, pattern.xi, mu_B, eps,
        float(np.mean(alphas**2 * r)), float(np.mean(betas**2 * r)),
        float(np.max(np.abs(alphas) / p)), float(np.max(np.abs(betas) / p)),
    )


def theorem1_bound_instance(weights, centers, pattern: SamplingPattern, eps: float) -> float:
    s = instance_stats(weights, centers, pattern, eps)
    return theorem1_bound_from_stats(s.n, s.xi, s.mu_B, eps, s.var_alpha, s.var_beta, s.M_alpha, s.M_beta)


def prop1_f(eps: float) -> float:
    return eps * eps / (2.0 * (1.0 + eps) * (1.0 + 7.0 * eps / 6.0))


def prop1_bound(mu_B: float, n: int, xi: float, eps: float) -> float:
    """Uniform-pattern tail bound ``exp(-n xi) + 2 exp(-n mu_B f(eps) xi)``."""
    if not 0 < xi <= 1:
        raise ValueError("xi must lie in (0, 1]")
    _check_eps(eps)
    return _exp(-n * xi) + 2.0 * _exp(-n * mu_B * prop1_f(eps) * xi)


def prop2_mse_bound(mu_B: float, n: int, xi: float) -> float:
    """Uniform-pattern MSE bound ``exp(-n xi) + 52 / (3 mu_B n xi)``."""
    if not 0 < xi <= 1 or not mu_B > 0:
        raise ValueError("need 0 < xi <= 1 and mu_B > 0")
    return _exp(-n * xi) + 52.0 / (3.0 * mu_B * n * xi)
