"""Per-sample depth quality scores.

Two families of score are computed on the valid pixels of a depth map:

* a *distribution* score built from a K-bin depth histogram (chi-square
  uniformity, maximum-bin concentration, range utilization), and
* a *gradient continuity* score, ``1 / (1 + CV)`` of the gradient magnitude
  over the non-edge pixels, where edges are the top 10% of magnitudes.

Their mean is the total score used for filtering. Every score is in [0, 1]
and higher is better.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .depthio import FAR_PLANE, DepthSample

DEFAULT_BINS = 20
DIST_WEIGHTS = (0.5, 0.3, 0.2)  # chi-square, concentration, range
EDGE_PERCENTILE = 90
FLAT_MEAN = 1e-12


class DegenerateInputError(ValueError):
    """The sample has no pixels a score can be computed from."""


@dataclass(frozen=True)
class DepthHistogram:
    k: int
    lo: float
    hi: float
    counts: np.ndarray
    n: int

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.k


@dataclass
class QualityScores:
    id: str
    valid_ratio: float
    s_chi2: float = math.nan
    s_conc: float = math.nan
    s_range: float = math.nan
    s_dist: float = math.nan
    s_grad: float = math.nan
    s_total: float = math.nan
    dataset: str = ""
    # set when the sample could not be read or scored
    error: str = ""

    @property
    def scored(self) -> bool:
        return math.isfinite(self.s_dist) and math.isfinite(self.s_grad)


def histogram_range(sample: DepthSample, mode: str = "fixed",
                    far_plane: float = FAR_PLANE) -> tuple[float, float]:
    """Histogram bounds: ``[0, far_plane]`` ("fixed") or the sample's own
    valid min/max ("sample")."""
    if mode == "fixed":
        return 0.0, float(far_plane)
    if mode != "sample":
        raise ValueError(f"unknown range mode {mode!r}")
    d = sample.depth[sample.valid]
    if d.size == 0:
        raise DegenerateInputError(f"{sample.id}: no valid pixels")
    lo, hi = float(d.min()), float(d.max())
    if hi <= lo:
        hi = lo + 1.0
    return lo, hi


def depth_histogram(sample: DepthSample, k: int = DEFAULT_BINS, lo: float = 0.0,
                    hi: float = FAR_PLANE) -> DepthHistogram:
    if not lo < hi:
        raise ValueError(f"histogram range needs lo < hi, got [{lo}, {hi}]")
    if k < 1:
        raise ValueError("k must be positive")
    d = sample.depth[sample.valid].astype(np.float64)
    if d.size == 0:
        raise DegenerateInputError(f"{sample.id}: no valid pixels")
    idx = np.floor(k * (np.clip(d, lo, hi) - lo) / (hi - lo)).astype(np.int64)
    np.minimum(idx, k - 1, out=idx)
    counts = np.bincount(idx, minlength=k)
    return DepthHistogram(k, float(lo), float(hi), counts, int(d.size))


def chi_square_score(h: DepthHistogram) -> float:
    expected = h.n / h.k
    chi2 = float(np.sum((h.counts - expected) ** 2)) / expected
    return math.exp(-chi2 / h.n)


def concentration_score(h: DepthHistogram) -> float:
    if h.k <= 4:
        raise ValueError(f"concentration score needs K > 4, got K={h.k}")
    p_max = int(h.counts.max()) / h.n
    free = 2.0 / h.k
    if p_max <= free:
        return 1.0
    return 1.0 - min(1.0, (p_max - free) / (0.5 - free))


def range_utilization(h: DepthHistogram) -> float:
    return int(np.count_nonzero(h.counts)) / h.k


def combine_distribution(s_chi2: float, s_conc: float, s_range: float) -> float:
    w_chi2, w_conc, w_range = DIST_WEIGHTS
    return w_chi2 * s_chi2 + w_conc * s_conc + w_range * s_range


def distribution_score(h: DepthHistogram) -> float:
    return combine_distribution(chi_square_score(h), concentration_score(h),
                                range_utilization(h))


def _axis_derivative(d: np.ndarray, valid: np.ndarray, axis: int):
    """Central differences inside, one-sided at the borders.

    Returns the derivative and a mask telling where every pixel of the
    stencil (the pixel itself included) is valid.
    """
    d = np.moveaxis(d, axis, -1)
    v = np.moveaxis(valid, axis, -1)
    n = d.shape[-1]
    der = np.zeros_like(d)
    ok = v.copy()
    if n >= 2:
        der[..., 0] = d[..., 1] - d[..., 0]
        der[..., -1] = d[..., -1] - d[..., -2]
        ok[..., 0] &= v[..., 1]
        ok[..., -1] &= v[..., -2]
        if n >= 3:
            der[..., 1:-1] = (d[..., 2:] - d[..., :-2]) / 2.0
            ok[..., 1:-1] &= v[..., 2:] & v[..., :-2]
    return np.moveaxis(der, -1, axis), np.moveaxis(ok, -1, axis)


def gradient_magnitude(sample: DepthSample) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel gradient magnitude and the mask of pixels where it is defined."""
    d = np.where(sample.valid, sample.depth.astype(np.float64), 0.0)
    gx, okx = _axis_derivative(d, sample.valid, axis=1)
    gy, oky = _axis_derivative(d, sample.valid, axis=0)
    defined = okx & oky
    g = np.sqrt(gx * gx + gy * gy)
    g[~defined] = 0.0
    return g, defined


def nearest_rank_threshold(values: np.ndarray, percentile: int = EDGE_PERCENTILE) -> float:
    """Nearest-rank percentile: the ceil(p*n/100)-th smallest value."""
    n = values.size
    rank = max(1, -(-percentile * n // 100))
    return float(np.partition(values, rank - 1)[rank - 1])


def gradient_continuity_score(sample: DepthSample) -> float:
    g, defined = gradient_magnitude(sample)
    g = g[defined]
    if g.size == 0:
        raise DegenerateInputError(f"{sample.id}: no pixel has a defined gradient")
    t = nearest_rank_threshold(g)
    smooth = g[g <= t]
    mu = float(smooth.mean())
    cv = 0.0 if mu < FLAT_MEAN else float(smooth.std()) / mu
    return 1.0 / (1.0 + cv)


def total_score(s_dist: float, s_grad: float) -> float:
    return (s_grad + s_dist) / 2.0


def score_sample(sample: DepthSample, k: int = DEFAULT_BINS, lo: float = 0.0,
                 hi: float = FAR_PLANE, range_mode: str = "fixed") -> QualityScores:
    """All scores for one sample.

    Scores that cannot be computed (no valid pixel, or no defined gradient)
    are left as NaN rather than raising, so a corpus audit can keep going.
    """
    out = QualityScores(sample.id, sample.valid_ratio, dataset=sample.dataset)
    if not sample.valid.any():
        return out
    if range_mode == "sample":
        lo, hi = histogram_range(sample, "sample")
    h = depth_histogram(sample, k, lo, hi)
    out.s_chi2 = chi_square_score(h)
    out.s_conc = concentration_score(h)
    out.s_range = range_utilization(h)
    out.s_dist = combine_distribution(out.s_chi2, out.s_conc, out.s_range)
    try:
        out.s_grad = gradient_continuity_score(sample)
    except DegenerateInputError:
        return out
    out.s_total = total_score(out.s_dist, out.s_grad)
    return out
