"""Closed-form parameter and FLOP counts for the decoder.

FLOP convention: one multiply-add is 2 FLOPs. Counted ops are the
projections, the fusion weighted sum, every convolution (dense, depthwise
and pointwise), the DySample offset generators and the bilinear resampling
(4 multiply-adds per output value). Bias adds, batch norm, activations and
the softmax over 4 logits are not counted.

The optional encoder estimate is a standard ViT: patch embedding plus, per
block, the QKV/output projections (4 n D^2 MACs) and the MLP (8 n D^2
MACs), with n = patches + 1 class token. The n^2 D attention-matrix term is
left out unless asked for.
"""
from __future__ import annotations

from .config import ENCODERS, DecoderConfig, EncoderSpec

CONVENTIONS = (
    "FLOPs: 1 multiply-add = 2 FLOPs; conv 2*H*W*Cin*Cout*k^2/groups; "
    "linear 2*n*din*dout; bilinear resampling 4 MACs per output value; "
    "BN/activations/bias not counted; ViT encoder estimate excludes the "
    "n^2*D attention-matrix term unless requested. "
    "Params: learnable arrays only (BN running statistics are buffers)."
)


def count_params(config: DecoderConfig) -> int:
    w, d, mid, L = config.width, config.d_enc, config.head_mid, config.n_layers
    oc = config.offset_channels
    projections = L * (2 * d * w + w)
    fusion = L
    sde = 9 * w + 2 * w
    dysample = 4 * (w * oc + oc)
    upconv = 6 * (9 * w * w + 2 * w)
    head = (9 * w * mid + mid) + (mid + 1)
    return projections + fusion + sde + dysample + upconv + head


def _conv(h: int, w: int, cin: int, cout: int, k: int, groups: int = 1) -> int:
    return 2 * h * w * cin * cout * k * k // groups


def flops_breakdown(config: DecoderConfig, H: int, W: int) -> dict[str, int]:
    p = config.patch
    if H % p or W % p or H <= 0 or W <= 0:
        raise ValueError(f"resolution {H}x{W} is not a positive multiple of patch {p}")
    h, w = H // p, W // p
    c, d, mid, L = config.width, config.d_enc, config.head_mid, config.n_layers
    oc = config.offset_channels
    n = h * w
    out = {
        "projection": L * 2 * n * (2 * d) * c,
        "fusion": L * 2 * n * c,
        "sde": _conv(h, w, c, c, 3, groups=c) if c else 0,
    }
    up = 0
    res = 1
    # B, B, R, B, B, R
    for step in ("B", "B", "R", "B", "B", "R"):
        if step == "B":
            up += _conv(h * res, w * res, c, oc, 1)  # offset generator
            res *= 2
            up += 2 * 4 * (h * res) * (w * res) * c  # bilinear resample
        up += _conv(h * res, w * res, c, c, 3)
    out["upsampler"] = up
    out["head"] = _conv(H, W, c, mid, 3) + _conv(H, W, mid, 1, 1)
    return out


def encoder_flops(spec: EncoderSpec, H: int, W: int, attention_matrix: bool = False) -> int:
    p, D = spec.patch, spec.dim
    patches = (H // p) * (W // p)
    n = patches + 1
    embed = 2 * patches * (3 * p * p) * D
    block = 2 * 4 * n * D * D + 2 * 2 * n * D * 4 * D
    if attention_matrix:
        block += 2 * 2 * n * n * D
    return embed + spec.depth * block


def count_flops(config: DecoderConfig, H: int, W: int, include_encoder: bool = False,
                encoder: EncoderSpec | str | None = None, attention_matrix: bool = False) -> int:
    total = sum(flops_breakdown(config, H, W).values())
    if include_encoder:
        if encoder is None:
            matches = [e for e in ENCODERS.values() if e.dim == config.d_enc]
            if not matches:
                raise ValueError(f"no known encoder of width {config.d_enc}; pass encoder=")
            encoder = matches[0]
        elif isinstance(encoder, str):
            encoder = ENCODERS[encoder]
        total += encoder_flops(encoder, H, W, attention_matrix)
    return total
