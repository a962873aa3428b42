"""Serialized multi-layer encoder tokens.

File layout (little-endian)::

    b"SDTK"  u16 version=1  u16 n_layers=4  u8 has_cls=1
    per layer:
        u16 layer_index  u32 N_p  u32 D  u16 grid_h  u16 grid_w
        f32[D]       class token
        f32[N_p*D]   spatial tokens, row-major
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SDTK"
VERSION = 1
_HEAD = struct.Struct("<4sHHB")
_LAYER = struct.Struct("<HIIHH")


class TokenFormatError(ValueError):
    pass


@dataclass
class TokenLayer:
    index: int
    cls: np.ndarray  # (D,)
    tokens: np.ndarray  # (N_p, D)


@dataclass
class TokenSet:
    layers: list[TokenLayer]
    grid: tuple[int, int]
    patch: int = 16

    def __post_init__(self):
        h, w = self.grid
        if len(self.layers) != 4:
            raise ValueError(f"expected 4 layers, got {len(self.layers)}")
        shapes = {layer.tokens.shape for layer in self.layers}
        if len(shapes) != 1:
            raise ValueError(f"layers disagree on token shape: {sorted(shapes)}")
        n_p, d = shapes.pop()
        if n_p != h * w:
            raise ValueError(f"grid {h}x{w} does not hold {n_p} tokens")
        for layer in self.layers:
            if layer.cls.shape != (d,):
                raise ValueError(f"layer {layer.index}: class token shape {layer.cls.shape} != ({d},)")

    @property
    def dim(self) -> int:
        return self.layers[0].tokens.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.layers[0].tokens.shape[0]


def random_tokens(d_enc: int, grid: tuple[int, int], seed: int = 0,
                  layer_indices=(2, 5, 8, 11), dtype=np.float32) -> TokenSet:
    """Standard-normal tokens, for tests and benchmarks."""
    rng = np.random.default_rng(seed)
    n = grid[0] * grid[1]
    layers = [TokenLayer(i, rng.standard_normal(d_enc).astype(dtype),
                         rng.standard_normal((n, d_enc)).astype(dtype))
              for i in layer_indices]
    return TokenSet(layers, tuple(grid))


def write_tokens(ts: TokenSet, path) -> None:
    h, w = ts.grid
    with open(path, "wb") as f:
        f.write(_HEAD.pack(MAGIC, VERSION, len(ts.layers), 1))
        for layer in ts.layers:
            n, d = layer.tokens.shape
            f.write(_LAYER.pack(layer.index, n, d, h, w))
            f.write(np.ascontiguousarray(layer.cls, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(layer.tokens, dtype="<f4").tobytes())


def _take(buf: memoryview, pos: int, n: int, what: str):
    if pos + n > len(buf):
        raise TokenFormatError(f"truncated token file while reading {what}")
    return buf[pos:pos + n], pos + n


def read_tokens(path) -> TokenSet:
    buf = memoryview(Path(path).read_bytes())
    raw, pos = _take(buf, 0, _HEAD.size, "header")
    magic, version, n_layers, has_cls = _HEAD.unpack(raw)
    if magic != MAGIC:
        raise TokenFormatError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise TokenFormatError(f"unsupported version {version}")
    if n_layers != 4:
        raise TokenFormatError(f"expected 4 layers, file has {n_layers}")
    if has_cls != 1:
        raise TokenFormatError("class tokens are required (has_cls must be 1)")
    layers, grid = [], None
    for _ in range(n_layers):
        raw, pos = _take(buf, pos, _LAYER.size, "layer header")
        index, n_p, d, gh, gw = _LAYER.unpack(raw)
        if gh * gw != n_p:
            raise TokenFormatError(f"layer {index}: grid {gh}x{gw} != N_p {n_p}")
        if grid is not None and grid != (gh, gw):
            raise TokenFormatError(f"layer {index}: grid {gh}x{gw} differs from {grid}")
        grid = (gh, gw)
        raw, pos = _take(buf, pos, 4 * d, "class token")
        cls = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        raw, pos = _take(buf, pos, 4 * n_p * d, "tokens")
        tokens = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(n_p, d)
        layers.append(TokenLayer(index, cls, tokens))
    if pos != len(buf):
        raise TokenFormatError(f"{len(buf) - pos} trailing bytes after last layer")
    try:
        return TokenSet(layers, grid)
    except ValueError as exc:
        raise TokenFormatError(str(exc)) from exc
