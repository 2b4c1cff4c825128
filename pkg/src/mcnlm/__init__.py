"""Monte Carlo non-local means: subsampled NLM with optimized sampling patterns and tail bounds."""

from __future__ import annotations

__version__ = "0.1.0"

from .core import (
    DimensionError, Image, InfeasibleError, NlmParams, PatchConfig, PatchDatabase, SamplingPattern,
    WeightBounds, extract_patch, normalize_image, patch_matrix,
)
from .bounds import (
    bernstein_bound, chebyshev_bound, prop1_bound, prop2_mse_bound, theorem1_bound,
    theorem1_bound_from_stats,
)
from .estimator import full_nlm_pixel, mcnlm_pixel, sample_estimates
from .pipeline import (
    ExternalJob, InternalJob, add_gaussian_noise, build_patch_database, denoise_external,
    denoise_internal, full_nlm_internal, psnr,
)
from .sampling import optimal_pattern, two_stage_sample, uniform_pattern
