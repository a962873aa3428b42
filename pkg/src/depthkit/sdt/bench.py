from __future__ import annotations

import time

import numpy as np

from .config import DecoderConfig
from .decoder import forward
from .params import init_params
from .tokens import random_tokens


def bench(config: DecoderConfig, resolution: tuple[int, int], n_runs: int = 10,
          warmup: int = 1, seed: int = 0) -> tuple[float, float]:
    """Time ``n_runs`` forward passes after ``warmup`` untimed ones.

    Returns (mean, std) in milliseconds; std is the sample standard deviation
    of the same timings (0 for a single run).
    """
    H, W = resolution
    if H % config.patch or W % config.patch:
        raise ValueError(f"resolution {H}x{W} is not a multiple of {config.patch}")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    params = init_params(config, seed)
    tokens = random_tokens(config.d_enc, (H // config.patch, W // config.patch), seed)
    for _ in range(warmup):
        forward(tokens, params)
    times = np.empty(n_runs)
    for i in range(n_runs):
        t0 = time.perf_counter()
        forward(tokens, params)
        times[i] = (time.perf_counter() - t0) * 1e3
    std = float(times.std(ddof=1)) if n_runs > 1 else 0.0
    return float(times.mean()), std


def format_latency(mean_ms: float, std_ms: float) -> str:
    return f"{mean_ms:.2f} ± {std_ms:.2f} ms"
