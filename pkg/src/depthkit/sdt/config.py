from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EncoderSpec:
    """Shape of the ViT encoder whose tokens the decoder consumes."""

    name: str
    dim: int
    depth: int
    layers: tuple[int, int, int, int]
    patch: int = 16


ENCODERS = {
    "s": EncoderSpec("vit-s/16", 384, 12, (2, 5, 8, 11)),
    "b": EncoderSpec("vit-b/16", 768, 12, (2, 5, 8, 11)),
    "l": EncoderSpec("vit-l/16", 1024, 24, (4, 11, 17, 23)),
}

# Published decoder parameter counts (millions) of the multi-branch
# reassemble-then-fuse baseline on the same encoders.
DPT_PARAMS_M = {"s": 50.83, "b": 76.05, "l": 99.58}


@dataclass(frozen=True)
class DecoderConfig:
    d_enc: int
    width: int = 256
    patch: int = 16
    head_mid: int | None = None  # defaults to width // 2
    n_layers: int = 4
    scale: int = 2  # per-DySample upsampling factor
    offset_range: float = 0.25
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.head_mid is None:
            object.__setattr__(self, "head_mid", self.width // 2)
        if self.d_enc <= 0:
            raise ValueError("d_enc must be positive")
        if self.width < 0 or self.head_mid < 0:
            raise ValueError("width and head_mid must be non-negative")
        if self.patch != 16 or self.scale != 2:
            raise ValueError("only patch 16 with four x2 upsamplers is supported")
        if self.n_layers != 4:
            raise ValueError("the decoder fuses exactly 4 encoder layers")

    @classmethod
    def named(cls, name: str, **overrides) -> "DecoderConfig":
        try:
            enc = ENCODERS[name.lower()]
        except KeyError:
            raise ValueError(f"unknown config {name!r}; expected one of {sorted(ENCODERS)}") from None
        return cls(d_enc=enc.dim, **overrides)

    @property
    def offset_channels(self) -> int:
        return 2 * self.scale * self.scale
