"""Depth map and manifest I/O.

Two on-disk depth formats are supported: single-channel PFM (``Pf``) and
16-bit grayscale PNG. PNG values are raw integers that become meters after
division by ``depth_scale``; raw 0 marks an invalid pixel.

A pixel is valid iff its depth is finite, strictly positive and not beyond
the far plane. Nothing else is ever treated as valid.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from PIL import Image

FAR_PLANE = 100.0
FORMATS = ("pfm", "png16")
# Refuse headers that would allocate more than this many pixels.
MAX_PIXELS = 1 << 28


class DepthFormatError(ValueError):
    """A depth file does not parse per its declared format."""


class CapacityError(DepthFormatError):
    """Header dimensions are out of range or disagree with the payload size."""


class ManifestError(ValueError):
    pass


def validity_mask(depth: np.ndarray, far_plane: float = FAR_PLANE) -> np.ndarray:
    depth = np.asarray(depth)
    with np.errstate(invalid="ignore"):
        return np.isfinite(depth) & (depth > 0) & (depth <= far_plane)


@dataclass
class DepthSample:
    """One depth map in meters with its validity mask."""

    id: str
    depth: np.ndarray
    valid: np.ndarray
    dataset: str = ""
    depth_scale: float = 1.0

    def __post_init__(self):
        self.depth = np.asarray(self.depth)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {self.depth.shape}")
        if self.valid.shape != self.depth.shape:
            raise ValueError(
                f"valid mask shape {self.valid.shape} != depth shape {self.depth.shape}"
            )
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")

    @classmethod
    def from_depth(cls, id: str, depth, dataset: str = "", far_plane: float = FAR_PLANE,
                   depth_scale: float = 1.0) -> "DepthSample":
        depth = np.asarray(depth, dtype=np.float32)
        return cls(id, depth, validity_mask(depth, far_plane), dataset, depth_scale)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid_ratio(self) -> float:
        if self.depth.size == 0:
            return 0.0
        return int(self.valid.sum()) / self.depth.size


@dataclass
class ManifestEntry:
    id: str
    depth_path: Path
    format: str
    depth_scale: float = 1.0
    dataset: str = ""
    rgb_path: Path | None = None
    # unknown keys from the source line, kept so re-emitted manifests are lossless
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ManifestError(f"unknown format {self.format!r} (expected one of {FORMATS})")
        if not self.depth_scale > 0:
            raise ManifestError(f"depth_scale must be positive, got {self.depth_scale}")
        self.depth_path = Path(self.depth_path)
        if self.rgb_path is not None:
            self.rgb_path = Path(self.rgb_path)

    def to_json(self) -> dict[str, Any]:
        out = dict(self.extra)
        out.update(id=self.id, depth_path=str(self.depth_path), format=self.format,
                   depth_scale=self.depth_scale, dataset=self.dataset)
        if self.rgb_path is not None:
            out["rgb_path"] = str(self.rgb_path)
        return out


# ---------------------------------------------------------------- PFM

_PFM_DIMS = re.compile(rb"^\s*(\d+)\s+(\d+)\s*$")


def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM into a top-to-bottom float32 array."""
    with open(path, "rb") as f:
        magic = f.readline().rstrip()
        if magic != b"Pf":
            raise DepthFormatError(f"{path}: expected 'Pf' header, got {magic[:16]!r}")
        m = _PFM_DIMS.match(f.readline())
        if m is None:
            raise DepthFormatError(f"{path}: malformed PFM dimension line")
        width, height = int(m.group(1)), int(m.group(2))
        try:
            scale = float(f.readline())
        except ValueError:
            raise DepthFormatError(f"{path}: malformed PFM scale line") from None
        if scale == 0 or not np.isfinite(scale):
            raise DepthFormatError(f"{path}: PFM scale must be finite and non-zero")
        if width == 0 or height == 0 or width * height > MAX_PIXELS:
            raise CapacityError(f"{path}: unsupported PFM size {width}x{height}")
        payload = f.read()
    expected = 4 * width * height
    if len(payload) < expected:
        raise CapacityError(f"{path}: PFM payload has {len(payload)} bytes, header needs {expected}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype, count=width * height).reshape(height, width)
    # rows are stored bottom-to-top
    return np.flipud(data).astype(np.float32)


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("PFM writer supports single-channel 2-D arrays only")
    height, width = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (width, height))
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


# ---------------------------------------------------------------- PNG16

def read_png16(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("I;16", "I;16B", "I;16L", "I"):
                raise DepthFormatError(f"{path}: expected 16-bit grayscale PNG, got mode {im.mode}")
            if im.width * im.height > MAX_PIXELS:
                raise CapacityError(f"{path}: unsupported PNG size {im.width}x{im.height}")
            raw = np.array(im)
    except (OSError, SyntaxError) as exc:
        raise DepthFormatError(f"{path}: {exc}") from exc
    return raw.astype(np.uint16)


def write_png16(path, raw: np.ndarray) -> None:
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ValueError("PNG16 writer supports single-channel 2-D arrays only")
    Image.fromarray(np.ascontiguousarray(raw, dtype="<u2")).save(path, format="PNG")


# ---------------------------------------------------------------- samples

def read_raw(entry: ManifestEntry) -> np.ndarray:
    """Return the stored values divided by ``depth_scale``, without a validity rule."""
    if entry.format == "pfm":
        raw = read_pfm(entry.depth_path).astype(np.float64)
    else:
        raw = read_png16(entry.depth_path).astype(np.float64)
    return (raw / entry.depth_scale).astype(np.float32)


def load_depth(entry: ManifestEntry, far_plane: float = FAR_PLANE) -> DepthSample:
    depth = read_raw(entry)
    return DepthSample(entry.id, depth, validity_mask(depth, far_plane),
                       entry.dataset, entry.depth_scale)


def write_depth(sample: DepthSample, path, format: str = "pfm") -> Path:
    """Write ``sample`` to ``path``; invalid pixels are stored as 0.

    PFM round-trips bit-exactly when ``depth_scale`` is 1. PNG16 quantizes
    to ``1/depth_scale`` meters; a valid depth that would round to 0 is
    stored as 1 so that it stays valid.
    """
    path = Path(path)
    depth = np.where(sample.valid, sample.depth.astype(np.float64), 0.0)
    if format == "pfm":
        raw = depth if sample.depth_scale == 1 else depth * sample.depth_scale
        write_pfm(path, raw.astype(np.float32))
    elif format == "png16":
        raw = np.rint(depth * sample.depth_scale)
        raw[sample.valid] = np.maximum(raw[sample.valid], 1)
        if raw.max(initial=0) > 65535:
            raise ValueError(
                f"{sample.id}: depth {depth.max():.3f} m exceeds PNG16 range at "
                f"depth_scale {sample.depth_scale}"
            )
        write_png16(path, raw.astype(np.uint16))
    else:
        raise ValueError(f"unsupported format {format!r}")
    return path


# ---------------------------------------------------------------- manifests

def read_manifest(path) -> list[ManifestEntry]:
    """Read a JSON-lines manifest. Relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ManifestError("line is not a JSON object")
                entry = _entry_from_record(rec, base)
            except (json.JSONDecodeError, ManifestError, KeyError, TypeError, ValueError) as exc:
                msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise ManifestError(f"{path}:{lineno}: {msg}") from exc
            if entry.id in seen:
                raise ManifestError(
                    f"{path}:{lineno}: duplicate id {entry.id!r} (first seen on line {seen[entry.id]})"
                )
            seen[entry.id] = lineno
            entries.append(entry)
    return entries


_KNOWN_KEYS = {"id", "depth_path", "format", "depth_scale", "dataset", "rgb_path"}


def _entry_from_record(rec: dict[str, Any], base: Path) -> ManifestEntry:
    depth_path = Path(rec["depth_path"])
    if not depth_path.is_absolute():
        depth_path = base / depth_path
    rgb = rec.get("rgb_path")
    if rgb is not None and not Path(rgb).is_absolute():
        rgb = base / rgb
    return ManifestEntry(
        id=str(rec["id"]),
        depth_path=depth_path,
        format=rec["format"],
        depth_scale=float(rec.get("depth_scale", 1.0)),
        dataset=str(rec.get("dataset", "")),
        rgb_path=rgb,
        extra={k: v for k, v in rec.items() if k not in _KNOWN_KEYS},
    )


def write_manifest(entries: Iterable[ManifestEntry], path) -> Path:
    path = Path(path)
    lines = [json.dumps(e.to_json(), sort_keys=True) + "\n" for e in entries]
    atomic_write_text(path, "".join(lines))
    return path


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
