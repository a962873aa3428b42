"""Channels-last numeric kernels used by the decoder forward pass.

Feature maps are (H, W, C) arrays. Convolutions are zero-padded, stride 1,
and run as row-strip im2col GEMMs so full-resolution maps never need a
9x-sized column buffer.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

# bytes of im2col buffer per GEMM strip
_STRIP_BYTES = 16 << 20


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf) GELU."""
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0).astype(x.dtype)))


def bn_affine(gamma, beta, mean, var, eps: float):
    """Inference batch norm folded into ``x * a + b``."""
    a = gamma / np.sqrt(var + eps)
    return a, beta - mean * a


def conv2d(x: np.ndarray, weight: np.ndarray, bias=None, scale=None, shift=None,
           relu: bool = False) -> np.ndarray:
    """Dense conv of a (H, W, Cin) map with a (Cout, Cin, k, k) kernel, k odd.

    The optional per-channel ``scale``/``shift`` (a folded batch norm) and
    ReLU are applied to each strip straight after its GEMM.
    """
    h, w, cin = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin_w != cin:
        raise ValueError(f"kernel expects {cin_w} input channels, map has {cin}")
    out = np.empty((h, w, cout), dtype=np.result_type(x.dtype, weight.dtype))
    if cout == 0:
        return out
    # (kh, kw, cin) -> cout
    wmat = np.ascontiguousarray(weight.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout))
    if kh == kw == 1:
        np.matmul(x.reshape(-1, cin), wmat, out=out.reshape(-1, cout))
        _epilogue(out.reshape(-1, cout), bias, scale, shift, relu)
        return out

    ph, pw = kh // 2, kw // 2
    row_bytes = w * kh * kw * max(cin, 1) * out.itemsize
    rows = max(1, min(h, _STRIP_BYTES // row_bytes))
    cols = np.empty((rows, w, kh, kw, cin), dtype=out.dtype)
    for r0 in range(0, h, rows):
        r1 = min(h, r0 + rows)
        n = r1 - r0
        block = cols[:n]
        for dy in range(kh):
            src0, src1 = max(0, r0 + dy - ph), min(h, r1 + dy - ph)
            if src0 >= src1:
                block[:, :, dy] = 0
                continue
            dst0 = src0 - (r0 + dy - ph)
            dst1 = dst0 + src1 - src0
            # zero only the halo that falls outside the image
            block[:dst0, :, dy] = 0
            block[dst1:, :, dy] = 0
            for dx in range(kw):
                c0, c1 = max(0, dx - pw), min(w, w + dx - pw)
                if c0 >= c1:
                    block[dst0:dst1, :, dy, dx] = 0
                    continue
                d0 = c0 - (dx - pw)
                d1 = d0 + c1 - c0
                block[dst0:dst1, :d0, dy, dx] = 0
                block[dst0:dst1, d1:, dy, dx] = 0
                block[dst0:dst1, d0:d1, dy, dx, :] = x[src0:src1, c0:c1, :]
        dst = out[r0:r1].reshape(-1, cout)
        np.matmul(block.reshape(n * w, -1), wmat, out=dst)
        _epilogue(dst, bias, scale, shift, relu)
    return out


def _epilogue(y: np.ndarray, bias, scale, shift, relu: bool) -> None:
    if bias is not None:
        y += bias
    if scale is not None:
        y *= scale
    if shift is not None:
        y += shift
    if relu:
        np.maximum(y, 0, out=y)


def depthwise3x3(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Per-channel zero-padded 3x3 conv; ``weight`` is (C, 1, 3, 3)."""
    h, w, c = x.shape
    k = weight.reshape(c, 3, 3)
    xp = np.zeros((h + 2, w + 2, c), dtype=np.result_type(x.dtype, weight.dtype))
    xp[1:-1, 1:-1] = x
    out = np.zeros_like(xp[1:-1, 1:-1])
    for dy in range(3):
        for dx in range(3):
            out += xp[dy:dy + h, dx:dx + w] * k[:, dy, dx]
    return out


def bilinear_sample(x: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample a (h, w, C) map at pixel-unit positions (sx, sy).

    Pixel centres sit at integer coordinates. Positions are clamped to the
    border, matching ``grid_sample(..., align_corners=False,
    padding_mode="border")`` once coordinates are unnormalized.
    """
    h, w, c = x.shape
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (sx - x0).astype(x.dtype)[..., None]
    wy = (sy - y0).astype(x.dtype)[..., None]
    flat = x.reshape(-1, c)
    out_shape = sx.shape + (c,)
    out = np.empty(out_shape, dtype=x.dtype)
    ho = sx.shape[0]
    rows = max(1, min(ho, (_STRIP_BYTES // 4) // max(1, sx.shape[1] * c * x.itemsize)))
    for r0 in range(0, ho, rows):
        s = slice(r0, r0 + rows)
        top = flat[y0[s] * w + x0[s]]
        top += wx[s] * (flat[y0[s] * w + x1[s]] - top)
        bot = flat[y1[s] * w + x0[s]]
        bot += wx[s] * (flat[y1[s] * w + x1[s]] - bot)
        bot -= top
        bot *= wy[s]
        top += bot
        out[s] = top
    return out
