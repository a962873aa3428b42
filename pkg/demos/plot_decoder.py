"""
The single-path decoder
=======================

Four layers of encoder tokens are projected, blended by softmax weights and
reshaped once into a feature map. A depthwise block restores local detail,
four learned x2 resamplers bring the map back to full resolution and a
small head turns it into disparity. This script runs the pipeline on random
tokens and prints the analytic parameter and FLOP counts.
"""

import time

import numpy as np

from depthkit.sdt import (CONVENTIONS, DPT_PARAMS_M, DecoderConfig, count_flops, count_params,
                          dysample2x, flops_breakdown, format_latency, forward, init_params,
                          random_tokens)

###############################################################################
# A forward pass on a 16x16 token grid, i.e. a 256x256 input.

cfg = DecoderConfig.named("s")
params = init_params(cfg, seed=0)
tokens = random_tokens(cfg.d_enc, (16, 16), seed=0)
t0 = time.perf_counter()
disp = forward(tokens, params)
print(f"disparity {disp.shape}, {time.perf_counter() - t0:.2f} s, min {disp.min():.3f}")

###############################################################################
# With zero offsets each learned resampler is plain bilinear x2 upsampling,
# which is how it starts out after initialization.

x = np.arange(9.0).reshape(1, 3, 3)
print(dysample2x(x, np.zeros((8, 1)), np.zeros(8))[0].round(2))

###############################################################################
# Parameter counts against the multi-branch baseline decoder.

for name in "sbl":
    n = count_params(DecoderConfig.named(name))
    ref = DPT_PARAMS_M[name] * 1e6
    print(f"{name}: {n / 1e6:5.2f} M vs {ref / 1e6:5.2f} M  ({100 * (1 - n / ref):.1f}% fewer)")

###############################################################################
# FLOPs grow with pixel count. The decoder alone scales exactly 4x per
# doubling of resolution; the encoder estimate's class token nudges the
# full model slightly below 4x.

print(CONVENTIONS)
big = DecoderConfig.named("l")
prev = None
for r in (256, 512, 1024):
    dec = count_flops(big, r, r)
    full = count_flops(big, r, r, include_encoder=True)
    ratio = "" if prev is None else f"  x{full / prev:.4f}"
    print(f"{r:5d}: decoder {dec / 1e9:8.2f} G  full {full / 1e9:8.2f} G{ratio}")
    prev = full
print({k: round(v / 1e9, 2) for k, v in flops_breakdown(big, 512, 512).items()})
print(format_latency(123.456, 1.5))
