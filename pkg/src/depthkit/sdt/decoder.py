"""Forward pass of the single-path depth decoder.

    tokens (4 layers) -> per-layer projection + GELU -> softmax-weighted fusion
    -> reshape to an (h, w) map -> spatial detail enhancer
    -> x16 upsampler: R(S(R(S(x)))), S = B o B,
       B = ReLU(BN(conv3x3(dysample_x2(x)))), R = ReLU(BN(conv3x3(x)))
    -> head: ReLU(conv1x1(ReLU(conv3x3(x)))) -> disparity

Public per-stage functions take and return channels-first (C, H, W) arrays;
``forward`` stays channels-last internally.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .config import DecoderConfig
from .params import N_DYSAMPLE, DecoderParams
from .tokens import TokenSet


def _chw(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def _hwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(1, 2, 0))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


def project_layer(tokens: np.ndarray, cls: np.ndarray, weight: np.ndarray,
                  bias: np.ndarray) -> np.ndarray:
    """GELU(Linear([token, cls])) for every spatial token: (N_p, D) -> (N_p, width)."""
    n, d = tokens.shape
    if cls.shape != (d,) or weight.shape[1] != 2 * d:
        raise ValueError(f"projection expects tokens (N, {weight.shape[1] // 2}) and a "
                         f"matching class token, got {tokens.shape} and {cls.shape}")
    # the class-token half of the concatenation is shared by every row
    y = tokens @ weight[:, :d].T
    y += cls @ weight[:, d:].T + bias
    return ops.gelu(y)


def fuse(projected, logits: np.ndarray) -> np.ndarray:
    projected = list(projected)
    if len(projected) != len(logits):
        raise ValueError("one logit per projected layer")
    alpha = softmax(np.asarray(logits))
    out = alpha[0] * projected[0]
    for a, p in zip(alpha[1:], projected[1:]):
        out = out + a * p
    return out


def tokens_to_map(fused: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """(N_p, C) -> (C, h, w); token r lands at (r // w, r % w)."""
    h, w = grid
    return _chw(fused.reshape(h, w, -1))


def map_to_tokens(fmap: np.ndarray) -> np.ndarray:
    c = fmap.shape[0]
    return np.ascontiguousarray(fmap.reshape(c, -1).T)


# ---------------------------------------------------------------- stages (HWC)

def _sde(x: np.ndarray, params: DecoderParams) -> np.ndarray:
    cfg = params.config
    a, b = ops.bn_affine(params["sde.bn.weight"], params["sde.bn.bias"],
                         params["sde.bn.running_mean"], params["sde.bn.running_var"], cfg.bn_eps)
    y = ops.depthwise3x3(x, params["sde.dw.weight"])
    y *= a
    y += b
    y += x
    return np.maximum(y, 0, out=y)


def _dysample(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
              offset_range: float = 0.25) -> np.ndarray:
    """x2 DySample ("linear + pixel shuffle", one group).

    A pointwise conv predicts 8 offset channels per input pixel: channels
    0-3 hold x offsets and 4-7 y offsets for the sub-pixels (r, c) in
    row-major order r * 2 + c. Output pixel (i, j) samples the input at
    ``((j + .5) / 2 - .5 + dx, (i + .5) / 2 - .5 + dy)`` in input pixels.
    """
    h, w, c = x.shape
    off = x.reshape(-1, c) @ weight.T
    off += bias
    off *= offset_range
    # (h, w, coord, r, c) -> (coord, h, r, w, c) -> (coord, 2h, 2w)
    off = off.reshape(h, w, 2, 2, 2).transpose(2, 0, 3, 1, 4).reshape(2, 2 * h, 2 * w)
    base_x = (np.arange(2 * w) + 0.5) / 2 - 0.5
    base_y = (np.arange(2 * h) + 0.5) / 2 - 0.5
    sx = base_x[None, :] + off[0]
    sy = base_y[:, None] + off[1]
    return ops.bilinear_sample(x, sx, sy)


def _conv_bn_relu(x: np.ndarray, params: DecoderParams, k: int) -> np.ndarray:
    a, b = ops.bn_affine(params[f"up.bn.{k}.weight"], params[f"up.bn.{k}.bias"],
                         params[f"up.bn.{k}.running_mean"], params[f"up.bn.{k}.running_var"],
                         params.config.bn_eps)
    return ops.conv2d(x, params[f"up.conv.{k}.weight"], scale=a, shift=b, relu=True)


def _upsample16(x: np.ndarray, params: DecoderParams) -> np.ndarray:
    cfg = params.config
    dys, conv = 0, 0

    def block(x):  # B
        nonlocal dys, conv
        x = _dysample(x, params[f"up.dys.{dys}.weight"], params[f"up.dys.{dys}.bias"],
                      cfg.offset_range)
        dys += 1
        x = _conv_bn_relu(x, params, conv)
        conv += 1
        return x

    def refine(x):  # R
        nonlocal conv
        x = _conv_bn_relu(x, params, conv)
        conv += 1
        return x

    for _ in range(2):
        x = refine(block(block(x)))
    assert dys == N_DYSAMPLE and conv == 6
    return x


def _head(x: np.ndarray, params: DecoderParams) -> np.ndarray:
    y = ops.conv2d(x, params["head.conv1.weight"], bias=params["head.conv1.bias"], relu=True)
    y = ops.conv2d(y, params["head.conv2.weight"], bias=params["head.conv2.bias"], relu=True)
    return y[..., 0]


# ---------------------------------------------------------------- public (CHW)

def sde(fmap: np.ndarray, params: DecoderParams) -> np.ndarray:
    """ReLU(F + BN(DWConv3x3(F))) on a (C, h, w) map."""
    return _chw(_sde(_hwc(fmap), params))


def dysample2x(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
               offset_range: float = 0.25) -> np.ndarray:
    """(C, h, w) -> (C, 2h, 2w) with offset generator (weight (8, C), bias (8,))."""
    return _chw(_dysample(_hwc(x), weight, bias, offset_range))


def upsample16(x: np.ndarray, params: DecoderParams) -> np.ndarray:
    return _chw(_upsample16(_hwc(x), params))


def head(fmap: np.ndarray, params: DecoderParams) -> np.ndarray:
    """(C, H, W) -> non-negative (1, H, W) disparity."""
    return _head(_hwc(fmap), params)[None]


def forward(tokens: TokenSet, params: DecoderParams,
            config: DecoderConfig | None = None) -> np.ndarray:
    """Disparity map of shape (16 h, 16 w) for a token grid of (h, w)."""
    cfg = params.config
    if config is not None and config != cfg:
        raise ValueError("config does not match the parameter set")
    if tokens.dim != cfg.d_enc:
        raise ValueError(f"tokens have width {tokens.dim}, config expects {cfg.d_enc}")
    if len(tokens.layers) != cfg.n_layers:
        raise ValueError(f"expected {cfg.n_layers} token layers")
    dtype = params.dtype
    projected = [
        project_layer(layer.tokens.astype(dtype, copy=False), layer.cls.astype(dtype, copy=False),
                      params[f"proj.{i}.weight"], params[f"proj.{i}.bias"])
        for i, layer in enumerate(tokens.layers)
    ]
    fused = fuse(projected, params["fusion.logits"])
    h, w = tokens.grid
    x = fused.reshape(h, w, cfg.width)
    x = _sde(x, params)
    x = _upsample16(x, params)
    return _head(x, params)
