"""Affine-invariant depth evaluation and the training-loss definitions.

Predictions are disparities known only up to scale and shift. Evaluation
fits ``s * pred + t`` to the ground-truth disparity by least squares over
the mask, inverts back to depth and reports AbsRel and delta-1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DELTA_TAU = 1.25
GM_SCALES = 4
GM_WEIGHT = 2.0  # ssi : gm = 1 : 2


class DegenerateFitError(ValueError):
    """The scale/shift normal equations are singular (constant prediction)."""


@dataclass(frozen=True)
class AffineFit:
    s: float
    t: float


@dataclass(frozen=True)
class EvalResult:
    absrel: float
    delta1: float
    m: int


def _masked(a, mask):
    a = np.asarray(a, dtype=np.float64)
    if mask is None:
        return a.ravel()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ValueError(f"mask shape {mask.shape} != array shape {a.shape}")
    return a[mask]


def lsq_align(pred, gt, mask=None) -> AffineFit:
    """Closed-form ``argmin_{s,t} sum (s*pred + t - gt)^2`` over the mask."""
    p = _masked(pred, mask)
    g = _masked(gt, mask)
    if p.size < 2:
        raise DegenerateFitError(f"need at least 2 masked pixels, got {p.size}")
    if np.ptp(p) == 0:
        raise DegenerateFitError("prediction is constant over the mask")
    # centred form of the 2x2 normal equations
    pm, gm = p.mean(), g.mean()
    dp = p - pm
    var = float(dp @ dp)
    if var == 0.0:
        raise DegenerateFitError("prediction is constant over the mask")
    s = float(dp @ (g - gm)) / var
    return AffineFit(s, float(gm - s * pm))


def absrel(pred_depth, gt_depth, mask=None) -> float:
    p = _masked(pred_depth, mask)
    g = _masked(gt_depth, mask)
    if g.size == 0:
        raise ValueError("empty mask")
    if np.any(g <= 0):
        raise ValueError("ground-truth depth must be positive on the mask")
    return float(np.mean(np.abs(p - g) / g))


def delta1(pred_depth, gt_depth, mask=None, tau: float = DELTA_TAU) -> float:
    p = _masked(pred_depth, mask)
    g = _masked(gt_depth, mask)
    if g.size == 0:
        raise ValueError("empty mask")
    if np.any(g <= 0) or np.any(p <= 0):
        raise ValueError("depths must be positive on the mask")
    return float(np.mean(np.maximum(p / g, g / p) < tau))


def evaluate_affine_invariant(pred_disparity, gt_depth, mask=None,
                              depth_cap: float = 100.0, tau: float = DELTA_TAU) -> EvalResult:
    gt_depth = np.asarray(gt_depth, dtype=np.float64)
    if mask is None:
        mask = np.ones(gt_depth.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    g = gt_depth[mask]
    if g.size == 0:
        raise ValueError("empty mask")
    if not np.all((g > 0) & (g <= depth_cap)):
        raise ValueError(f"masked ground truth must lie in (0, {depth_cap}]")
    gt_disp = np.zeros_like(gt_depth)
    gt_disp[mask] = 1.0 / g
    fit = lsq_align(pred_disparity, gt_disp, mask)
    aligned = fit.s * np.asarray(pred_disparity, dtype=np.float64)[mask] + fit.t
    pred_depth = 1.0 / np.maximum(aligned, 1.0 / depth_cap)
    return EvalResult(absrel(pred_depth, g), delta1(pred_depth, g, tau=tau), int(g.size))


# ---------------------------------------------------------------- losses

def aligned_residual(pred_disp, gt_disp, mask=None) -> np.ndarray:
    """``s*pred + t - gt`` after alignment; zero outside the mask."""
    pred_disp = np.asarray(pred_disp, dtype=np.float64)
    gt_disp = np.asarray(gt_disp, dtype=np.float64)
    if mask is None:
        mask = np.ones(pred_disp.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    fit = lsq_align(pred_disp, gt_disp, mask)
    return np.where(mask, fit.s * pred_disp + fit.t - gt_disp, 0.0)


def ssi_loss(pred_disp, gt_disp, mask=None) -> float:
    """Mean squared residual after least-squares scale/shift alignment."""
    if mask is None:
        mask = np.ones(np.shape(pred_disp), dtype=bool)
    r = aligned_residual(pred_disp, gt_disp, mask)[np.asarray(mask, dtype=bool)]
    return float(np.mean(r * r))


def _pool2(r: np.ndarray, mask: np.ndarray):
    """Mask-aware 2x2 average pooling; odd edges are padded with invalid pixels."""
    h, w = r.shape
    ph, pw = h % 2, w % 2
    if ph or pw:
        r = np.pad(r, ((0, ph), (0, pw)))
        mask = np.pad(mask, ((0, ph), (0, pw)))
    m = mask.astype(np.float64)
    vals = (r * m).reshape(r.shape[0] // 2, 2, r.shape[1] // 2, 2).sum(axis=(1, 3))
    cnt = m.reshape(m.shape[0] // 2, 2, m.shape[1] // 2, 2).sum(axis=(1, 3))
    pooled_mask = cnt > 0
    return np.where(pooled_mask, vals / np.maximum(cnt, 1), 0.0), pooled_mask


def multiscale_gradient_loss(residual, mask, scales: int = GM_SCALES) -> float:
    """Mean over scales of ``(sum |dx R| + sum |dy R|) / #valid`` on a 2x pyramid.

    Forward differences count only where both ends are valid.
    """
    r = np.asarray(residual, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    total = 0.0
    for level in range(scales):
        if level:
            r, m = _pool2(r, m)
        n = int(m.sum())
        if n == 0:
            continue
        mx = m[:, 1:] & m[:, :-1]
        my = m[1:, :] & m[:-1, :]
        gx = np.abs(r[:, 1:] - r[:, :-1])[mx].sum()
        gy = np.abs(r[1:, :] - r[:-1, :])[my].sum()
        total += (gx + gy) / n
    return float(total / scales)


def gradient_matching_loss(pred_disp, gt_disp, mask=None, scales: int = GM_SCALES) -> float:
    if mask is None:
        mask = np.ones(np.shape(pred_disp), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    return multiscale_gradient_loss(aligned_residual(pred_disp, gt_disp, mask), mask, scales)


def combine_losses(ssi: float, gm: float) -> float:
    return ssi + GM_WEIGHT * gm


def total_loss(pred_disp, gt_disp, mask=None, scales: int = GM_SCALES) -> float:
    return combine_losses(ssi_loss(pred_disp, gt_disp, mask),
                          gradient_matching_loss(pred_disp, gt_disp, mask, scales))
