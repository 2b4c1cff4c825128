"""Shared domain types: images, patch geometry, NLM parameters, sampling patterns."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised on empty inputs or mismatched array lengths."""


class InfeasibleError(ValueError):
    """Raised when a budget or bracket admits no solution."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Image:
    """Grayscale image with intensities in [0, 1], stored as a (height, width) array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.size == 0:
            raise DimensionError(f"image must be a nonempty 2-D raster, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True)
class PatchConfig:
    side: int = 5
    boundary: str = "replicate"

    def __post_init__(self):
        if int(self.side) != self.side or self.side < 1 or self.side % 2 == 0:
            raise ValueError(f"patch side must be an odd integer >= 1, got {self.side}")
        if self.boundary != "replicate":
            raise ValueError(f"unsupported boundary rule {self.boundary!r}")

    @property
    def d(self) -> int:
        return self.side * self.side

    @property
    def half(self) -> int:
        return self.side // 2


@dataclass(frozen=True, eq=False)
class NlmParams:
    """Weight parameters.

    ``h_r`` is in normalized-intensity units, ``h_s`` and ``rho`` in pixels
    (either may be ``math.inf``).  ``lam`` holds the diagonal of the patch
    metric; ``None`` means ``diag(1/d)``.
    """

    h_r: float
    h_s: float = math.inf
    rho: float = math.inf
    lam: np.ndarray | None = None

    def __post_init__(self):
        if not self.h_r > 0 or not math.isfinite(self.h_r):
            raise ValueError("h_r must be finite and > 0")
        if not self.h_s > 0:
            raise ValueError("h_s must be > 0 (or inf)")
        if not self.rho >= 1:
            raise ValueError("rho must be >= 1 (or inf)")
        if self.rho != math.inf and int(self.rho) != self.rho:
            raise ValueError("rho must be an integer number of pixels")
        if self.lam is not None:
            lam = np.asarray(self.lam, dtype=np.float64).ravel()
            if lam.size == 0 or np.any(~(lam > 0)):
                raise ValueError("all metric weights must be > 0")
            object.__setattr__(self, "lam", _frozen(lam))

    def metric(self, d: int) -> np.ndarray:
        """Diagonal of the patch metric for patch dimension ``d``."""
        if self.lam is None:
            return np.full(d, 1.0 / d)
        if self.lam.size != d:
            raise DimensionError(f"metric has {self.lam.size} entries, patches have {d}")
        return self.lam

    def is_default_metric(self) -> bool:
        return self.lam is None or bool(np.all(self.lam == 1.0 / self.lam.size))


@dataclass(frozen=True, eq=False)
class SamplingPattern:
    """Bernoulli inclusion probabilities with average ratio ``xi``.

    ``tau`` and ``t`` are filled in by the water-filling solver so the
    closed-form structure can be re-checked from the returned object.
    """

    probs: np.ndarray
    xi: float
    tau: float | None = None
    t: float | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).ravel()
        if p.size == 0:
            raise DimensionError("empty sampling pattern")
        if np.any(~(p > 0)) or np.any(p > 1):
            raise ValueError("inclusion probabilities must lie in (0, 1]")
        if abs(p.mean() - self.xi) > 1e-6:
            raise ValueError(f"pattern mean {p.mean():.9g} does not match xi={self.xi:.9g}")
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def n(self) -> int:
        return self.probs.size


@dataclass(frozen=True, eq=False)
class WeightBounds:
    bounds: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=np.float64).ravel()
        if b.size == 0:
            raise DimensionError("empty bound vector")
        if np.any(~(b > 0)) or np.any(b > 1):
            raise ValueError("weight bounds must lie in (0, 1]")
        object.__setattr__(self, "bounds", _frozen(b))

    @property
    def n(self) -> int:
        return self.bounds.size


@dataclass(frozen=True, eq=False)
class PatchDatabase:
    """External reference patches plus their projections and histogram bins.

    Bins are stored as arrays: ``bin_lower``/``bin_upper`` (length Q),
    ``bin_of`` (bin index per patch), and ``order``/``bin_start`` giving the
    member indices of bin ``q`` as ``order[bin_start[q]:bin_start[q+1]]``.
    ``h_r`` and ``side`` record the parameters the projections were made with.
    """

    patches: np.ndarray
    centers: np.ndarray
    projections: np.ndarray
    bin_lower: np.ndarray
    bin_upper: np.ndarray
    bin_of: np.ndarray
    h_r: float
    side: int
    bin_means: np.ndarray = field(default=None)
    order: np.ndarray = field(init=False)
    bin_start: np.ndarray = field(init=False)

    def __post_init__(self):
        patches = np.asarray(self.patches, dtype=np.float64)
        if patches.ndim != 2 or patches.shape[0] == 0:
            raise DimensionError("database needs at least one patch")
        n = patches.shape[0]
        centers = np.asarray(self.centers, dtype=np.float64).ravel()
        proj = np.asarray(self.projections, dtype=np.float64).ravel()
        bin_of = np.asarray(self.bin_of, dtype=np.int64).ravel()
        lo = np.asarray(self.bin_lower, dtype=np.float64).ravel()
        hi = np.asarray(self.bin_upper, dtype=np.float64).ravel()
        if not (centers.size == proj.size == bin_of.size == n):
            raise DimensionError("patches, centers, projections and bin labels disagree in length")
        if lo.size != hi.size or lo.size == 0:
            raise DimensionError("bin table is malformed")
        if np.any(bin_of < 0) or np.any(bin_of >= lo.size):
            raise ValueError("bin label out of range")
        if np.any(lo[1:] < hi[:-1]) or np.any(hi < lo):
            raise ValueError("bins must be ordered and non-overlapping")
        if np.any(proj < lo[bin_of]) or np.any(proj > hi[bin_of]):
            raise ValueError("a projection lies outside its bin")
        order = np.argsort(bin_of, kind="stable")
        start = np.zeros(lo.size + 1, dtype=np.int64)
        np.cumsum(np.bincount(bin_of, minlength=lo.size), out=start[1:])
        means = self.bin_means
        if means is None:
            sums = np.bincount(bin_of, weights=proj, minlength=lo.size)
            counts = np.diff(start)
            means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.5 * (lo + hi))
        for name, value in (
            ("patches", patches), ("centers", centers), ("projections", proj),
            ("bin_lower", lo), ("bin_upper", hi), ("bin_means", means),
        ):
            object.__setattr__(self, name, _frozen(value))
        object.__setattr__(self, "bin_of", _frozen(bin_of, np.int64))
        object.__setattr__(self, "order", _frozen(order, np.int64))
        object.__setattr__(self, "bin_start", _frozen(start, np.int64))

    @property
    def n(self) -> int:
        return self.patches.shape[0]

    @property
    def d(self) -> int:
        return self.patches.shape[1]

    @property
    def n_bins(self) -> int:
        return self.bin_lower.size

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.bin_start)

    def members(self, q: int) -> np.ndarray:
        return self.order[self.bin_start[q]:self.bin_start[q + 1]]


def normalize_image(raw) -> Image:
    """Map an 8-bit raster to [0, 1] by dividing by 255."""
    a = np.asarray(raw)
    if a.ndim != 2 or a.size == 0:
        raise DimensionError(f"expected a nonempty 2-D raster, got shape {a.shape}")
    if np.any(a < 0) or np.any(a > 255):
        raise ValueError("8-bit raster values must lie in [0, 255]")
    return Image(a.astype(np.float64) / 255.0)


def extract_patch(img: Image, pixel: tuple[int, int], cfg: PatchConfig) -> np.ndarray:
    """Row-major patch around ``pixel``; out-of-image neighbours replicate the nearest edge."""
    r, c = pixel
    if not (0 <= r < img.height and 0 <= c < img.width):
        raise IndexError(f"pixel {pixel} outside {img.height}x{img.width} image")
    k = np.arange(-cfg.half, cfg.half + 1)
    rows = np.clip(r + k, 0, img.height - 1)
    cols = np.clip(c + k, 0, img.width - 1)
    return img.data[np.ix_(rows, cols)].ravel()


def patch_matrix(img: Image, cfg: PatchConfig) -> np.ndarray:
    """All patches of ``img`` as an (m, d) array, pixel index ``r * width + c`` per row."""
    h = cfg.half
    padded = np.pad(img.data, h, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (cfg.side, cfg.side))
    return np.ascontiguousarray(win.reshape(img.height * img.width, cfg.d))
