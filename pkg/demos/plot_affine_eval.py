"""
Affine-invariant evaluation
===========================

A relative-depth model predicts disparity only up to an unknown scale and
shift. Evaluation first fits that pair by least squares against the true
disparity, then inverts back to depth and scores AbsRel and delta1.
"""

import numpy as np

from depthkit.evalkit import (evaluate_affine_invariant, gradient_matching_loss, lsq_align,
                              ssi_loss, total_loss)
from depthkit.synthetic import scene

rng = np.random.default_rng(1)
gt = scene(rng, (48, 64))
mask = np.ones_like(gt, bool)

###############################################################################
# Any positive affine map of the true disparity scores perfectly.

for a, b in [(1.0, 0.0), (0.3, 0.05), (25.0, -0.1)]:
    res = evaluate_affine_invariant(a / gt + b, gt, mask)
    print(f"a={a:5.1f} b={b:+.2f}: AbsRel {res.absrel:.2e}  delta1 {res.delta1:.3f}")

###############################################################################
# Corrupt one pixel in ten and the metrics move.

pred = 1.0 / gt
pred[rng.random(gt.shape) < 0.1] *= 2
res = evaluate_affine_invariant(pred, gt, mask)
fit = lsq_align(pred, 1.0 / gt, mask)
print(f"fit s={fit.s:.4f} t={fit.t:.5f}; AbsRel {res.absrel:.4f}, delta1 {res.delta1:.4f}")

###############################################################################
# The training losses use the same alignment. The gradient term compares
# residual differences over a four-level pyramid and carries twice the
# weight of the squared residual term.

noisy = 2.0 / gt + 0.1 + rng.normal(0, 1e-3, gt.shape)
ssi = ssi_loss(noisy, 1.0 / gt, mask)
gm = gradient_matching_loss(noisy, 1.0 / gt, mask)
print(f"ssi {ssi:.3e}  gm {gm:.3e}  total {total_loss(noisy, 1.0 / gt, mask):.3e}")
