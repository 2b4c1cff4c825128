"""
Denoising from an external patch database
==========================================

Build a patch database from synthetic images, then denoise held-out noisy
patches by sampling the database with the uniform and the intensity-based
two-stage patterns.
"""

import numpy as np

from mcnlm import ExternalJob, add_gaussian_noise, build_patch_database, denoise_external, psnr
from mcnlm.core import NlmParams, PatchConfig
from mcnlm.pipeline import sample_queries
from mcnlm.synthetic import piecewise_corpus

params = NlmParams(h_r=26 / 255)
cfg = PatchConfig(5)
db = build_patch_database(piecewise_corpus(4, (64, 64), 1), cfg, params)
print(f"database: {db.n} patches in {db.n_bins} projection bins")

test = piecewise_corpus(2, (48, 48), 101)
noisy = [add_gaussian_noise(img, 20 / 255, k) for k, img in enumerate(test)]
queries, truth = sample_queries(test, noisy, cfg, 1000, seed=0)

for xi in (0.01, 0.1, 1.0):
    for kind in ("uniform", "intensity"):
        est = denoise_external(ExternalJob(db, queries, params, xi=xi, pattern_kind=kind, seed=0))
        print(f"xi={xi:<5g} {kind:9s} {psnr(np.clip(est, 0, 1), truth):.2f} dB")
