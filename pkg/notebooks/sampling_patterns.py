"""
Optimal sampling patterns and tail bounds
==========================================

Build the optimal pattern for a vector of weight bounds, check it against
the brute-force solver, and compare the tail bounds with the simulated tail
of the estimate on a noisy 1-D signal.
"""

import numpy as np

from mcnlm.bounds import prop1_bound, theorem1_bound_instance
from mcnlm.estimator import sample_estimates
from mcnlm.oracle import grid_solve_pattern
from mcnlm.sampling import optimal_pattern, uniform_pattern
from mcnlm.synthetic import signal_instance

b = np.array([0.9, 0.5, 0.1, 0.05])
pattern = optimal_pattern(b, 0.5)
print("closed form:", np.round(pattern.probs, 6), "tau =", round(pattern.tau, 6))
print("grid solver:", np.round(grid_solve_pattern(b, 0.5), 6))

# one pixel of a noisy piecewise-smooth signal, sampled at 5%
n, xi = 10_000, 0.05
w, x = signal_instance(n, 5 / 255, 15 / 255, 5, seed=0)
z = float((w * x).sum() / w.sum())
rng = np.random.default_rng(0)
for name, pat in (("uniform", uniform_pattern(n, xi)), ("optimal", optimal_pattern(w, xi))):
    est = sample_estimates(w, x, pat, 100_000, rng)
    print(f"\n{name} pattern, mean squared error {np.mean((est - z) ** 2):.3e}")
    for eps in (0.005, 0.01, 0.02):
        emp = np.mean(np.abs(est - z) > eps)
        line = f"  eps={eps:<6g} empirical {emp:.2e}  general bound {theorem1_bound_instance(w, x, pat, eps):.2e}"
        if name == "uniform":
            line += f"  uniform bound {prop1_bound(float(w.mean()), n, xi, eps):.2e}"
        print(line)
