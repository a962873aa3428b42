"""Synthetic depth maps and corpora for tests, demos and smoke runs.

Four kinds of map are produced so a corpus exercises every filter branch:

``good``    tilted ground plane plus a few boxes, spanning much of the range
``narrow``  everything within a couple of meters (poor distribution score)
``noisy``   a good map with heavy per-pixel noise (poor gradient score)
``sparse``  a good map with most pixels invalid (fails the valid-ratio cut)
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .depthio import DepthSample, write_depth

KINDS = ("good", "narrow", "noisy", "sparse")


def scene(rng: np.random.Generator, shape=(48, 64), near: float = 1.0,
          far: float = 90.0) -> np.ndarray:
    h, w = shape
    rows = np.linspace(0.0, 1.0, h)[:, None]
    cols = np.linspace(0.0, 1.0, w)[None, :]
    tilt = rng.uniform(-0.2, 0.2)
    depth = far - (far - near) * (rows + tilt * cols) / (1 + abs(tilt))
    for _ in range(rng.integers(1, 4)):
        y0, x0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
        y1, x1 = y0 + rng.integers(3, h // 2 + 4), x0 + rng.integers(3, w // 2 + 4)
        depth[y0:y1, x0:x1] = np.minimum(depth[y0:y1, x0:x1], rng.uniform(near, far))
    return depth


def make_depth(kind: str, rng: np.random.Generator, shape=(48, 64)) -> np.ndarray:
    if kind == "good":
        return scene(rng, shape)
    if kind == "narrow":
        base = rng.uniform(10.0, 80.0)
        return base + 0.05 * (scene(rng, shape) - 1.0) / 89.0 * rng.uniform(5, 30)
    if kind == "noisy":
        d = scene(rng, shape)
        return np.clip(d + rng.normal(0.0, rng.uniform(1.0, 4.0), size=d.shape), 0.5, 99.0)
    if kind == "sparse":
        d = scene(rng, shape)
        d[rng.random(shape) < rng.uniform(0.85, 0.97)] = 0.0
        return d
    raise ValueError(f"unknown kind {kind!r}")


def write_corpus(out_dir, n: int, seed: int = 0, datasets=("alpha", "beta"),
                 shape=(48, 64), kinds=KINDS, fmt: str = "png16",
                 depth_scale: float = 256.0) -> Path:
    """Write ``n`` maps plus ``manifest.jsonl`` (relative paths) and return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ext = "pfm" if fmt == "pfm" else "png"
    lines = []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        dataset = datasets[i % len(datasets)]
        sid = f"{dataset}-{i:05d}"
        sample = DepthSample.from_depth(sid, make_depth(kind, rng, shape), dataset,
                                        depth_scale=depth_scale if fmt == "png16" else 1.0)
        name = f"{sid}.{ext}"
        write_depth(sample, out_dir / name, fmt)
        lines.append({"id": sid, "depth_path": name, "format": fmt, "dataset": dataset,
                      "depth_scale": sample.depth_scale, "kind": kind})
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("".join(json.dumps(rec) + "\n" for rec in lines), encoding="utf-8")
    return manifest


def write_predictions(gt_manifest, out_dir, seed: int = 0, noise: float = 0.0,
                      far_plane: float = 100.0) -> Path:
    """Disparity predictions ``a / gt + b`` (plus optional noise) for every gt map."""
    from .depthio import load_depth, read_manifest

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for entry in read_manifest(gt_manifest):
        gt = load_depth(entry, far_plane)
        a, b = rng.uniform(0.5, 3.0), rng.uniform(-0.05, 0.2)
        disp = np.where(gt.valid, a / np.where(gt.valid, gt.depth, 1.0) + b, 0.0)
        if noise:
            disp = disp + rng.normal(0.0, noise, size=disp.shape)
        pred = DepthSample(entry.id, disp.astype(np.float32), np.ones(disp.shape, bool))
        name = f"{entry.id}.pfm"
        write_depth(pred, out_dir / name, "pfm")
        lines.append({"id": entry.id, "depth_path": name, "format": "pfm",
                      "dataset": entry.dataset})
    manifest = out_dir / "preds.jsonl"
    manifest.write_text("".join(json.dumps(rec) + "\n" for rec in lines), encoding="utf-8")
    return manifest
