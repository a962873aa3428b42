"""Decoder parameter layout, initialization and (de)serialization.

Arrays live in a flat name -> ndarray mapping. Convolution weights use the
(out, in, kh, kw) layout and linear weights (out, in). Batch-norm running
statistics are stored alongside the learnable arrays but are buffers, not
parameters, and are excluded from parameter counts.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import DecoderConfig

BUFFER_SUFFIXES = (".running_mean", ".running_var")
N_DYSAMPLE = 4
N_UPCONV = 6


def _bn(prefix: str, c: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.weight": (c,), f"{prefix}.bias": (c,),
            f"{prefix}.running_mean": (c,), f"{prefix}.running_var": (c,)}


def param_shapes(config: DecoderConfig) -> dict[str, tuple[int, ...]]:
    """Every array of the decoder, in a fixed order."""
    w, d, mid = config.width, config.d_enc, config.head_mid
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(config.n_layers):
        shapes[f"proj.{i}.weight"] = (w, 2 * d)
        shapes[f"proj.{i}.bias"] = (w,)
    shapes["fusion.logits"] = (config.n_layers,)
    shapes["sde.dw.weight"] = (w, 1, 3, 3)
    shapes.update(_bn("sde.bn", w))
    for k in range(N_DYSAMPLE):
        shapes[f"up.dys.{k}.weight"] = (config.offset_channels, w)
        shapes[f"up.dys.{k}.bias"] = (config.offset_channels,)
    for k in range(N_UPCONV):
        shapes[f"up.conv.{k}.weight"] = (w, w, 3, 3)
        shapes.update(_bn(f"up.bn.{k}", w))
    shapes["head.conv1.weight"] = (mid, w, 3, 3)
    shapes["head.conv1.bias"] = (mid,)
    shapes["head.conv2.weight"] = (1, mid, 1, 1)
    shapes["head.conv2.bias"] = (1,)
    return shapes


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)


@dataclass
class DecoderParams:
    config: DecoderConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.arrays):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise ValueError(f"parameter set mismatch; missing={missing[:5]} extra={extra[:5]}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name}: shape {self.arrays[name].shape} != {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def dtype(self) -> np.dtype:
        return self.arrays["fusion.logits"].dtype

    def learnable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if not is_buffer(k)}

    def astype(self, dtype) -> "DecoderParams":
        return DecoderParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def save(self, path) -> None:
        meta = np.frombuffer(json.dumps(asdict(self.config)).encode(), dtype=np.uint8)
        np.savez(path, __config__=meta, **self.arrays)

    @classmethod
    def load(cls, path) -> "DecoderParams":
        with np.load(Path(path)) as z:
            cfg = json.loads(bytes(z["__config__"]).decode())
            arrays = {k: z[k] for k in z.files if k != "__config__"}
        return cls(DecoderConfig(**cfg), arrays)


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name == "sde.dw.weight":
        return 9
    return int(np.prod(shape[1:]))


def init_params(config: DecoderConfig, seed: int = 0, dtype=np.float32) -> DecoderParams:
    """Seeded initialization.

    Fusion logits start at zero (uniform layer weights) and the DySample
    offset generators at zero, so the untrained upsampler is exactly
    bilinear. Conv and linear weights are uniform in +-sqrt(6 / fan_in);
    biases are zero; batch norm is the identity (gamma 1, beta 0, mean 0,
    var 1).
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        bn = name.startswith(("sde.bn.", "up.bn."))
        if name.endswith(".running_var") or (bn and name.endswith(".weight")):
            a = np.ones(shape)
        elif name == "fusion.logits" or name.startswith("up.dys.") or name.endswith(
                (".bias", ".running_mean")):
            a = np.zeros(shape)
        else:
            fan_in = _fan_in(name, shape)
            bound = math.sqrt(6.0 / fan_in) if fan_in else 0.0
            a = rng.uniform(-bound, bound, size=shape)
        arrays[name] = a.astype(dtype)
    return DecoderParams(config, arrays)
