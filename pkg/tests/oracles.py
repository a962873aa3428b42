"""Straight-line reference implementations used only by the tests.

These deliberately avoid the package's vectorized code paths: histograms,
gradients and percentiles are pixel loops over Python floats, convolutions
are explicit tap sums and bilinear sampling is evaluated one output pixel
at a time.
"""
from __future__ import annotations

import math
import statistics

import numpy as np
from scipy.optimize import minimize

# ---------------------------------------------------------------- quality


def histogram(depth, valid, k=20, lo=0.0, hi=100.0):
    counts = [0] * k
    h, w = len(depth), len(depth[0])
    for i in range(h):
        for j in range(w):
            if not valid[i][j]:
                continue
            d = min(max(float(depth[i][j]), lo), hi)
            b = math.floor(k * (d - lo) / (hi - lo))
            counts[min(b, k - 1)] += 1
    return counts


def chi2_score(counts):
    n = sum(counts)
    k = len(counts)
    mean = n / k
    chi2 = 0.0
    for c in counts:
        chi2 += (c - mean) ** 2 / mean
    return math.exp(-chi2 / n)


def conc_score(counts):
    k = len(counts)
    p_max = max(counts) / sum(counts)
    if p_max <= 2 / k:
        return 1.0
    return 1.0 - min(1.0, (p_max - 2 / k) / (0.5 - 2 / k))


def range_score(counts):
    return sum(1 for c in counts if c > 0) / len(counts)


def dist_score(counts):
    return 0.5 * chi2_score(counts) + 0.3 * conc_score(counts) + 0.2 * range_score(counts)


def gradient_values(depth, valid):
    """Defined gradient magnitudes, enumerated pixel by pixel."""
    h, w = len(depth), len(depth[0])
    out = []
    for i in range(h):
        for j in range(w):
            stencil = [(i, j)]
            if w == 1:
                gx = 0.0
            elif j == 0:
                gx = depth[i][1] - depth[i][0]
                stencil.append((i, 1))
            elif j == w - 1:
                gx = depth[i][j] - depth[i][j - 1]
                stencil.append((i, j - 1))
            else:
                gx = (depth[i][j + 1] - depth[i][j - 1]) / 2
                stencil += [(i, j + 1), (i, j - 1)]
            if h == 1:
                gy = 0.0
            elif i == 0:
                gy = depth[1][j] - depth[0][j]
                stencil.append((1, j))
            elif i == h - 1:
                gy = depth[i][j] - depth[i - 1][j]
                stencil.append((i - 1, j))
            else:
                gy = (depth[i + 1][j] - depth[i - 1][j]) / 2
                stencil += [(i + 1, j), (i - 1, j)]
            if all(valid[a][b] for a, b in stencil):
                out.append(math.sqrt(gx * gx + gy * gy))
    return out


def grad_score(depth, valid):
    g = sorted(gradient_values(depth, valid))
    rank = math.ceil(round(0.9 * len(g), 9))
    t = g[max(rank, 1) - 1]
    smooth = [x for x in g if x <= t]
    mu = statistics.fmean(smooth)
    if mu < 1e-12:
        return 1.0
    return 1.0 / (1.0 + statistics.pstdev(smooth) / mu)


def all_scores(depth, valid, k=20, lo=0.0, hi=100.0):
    d = [[float(v) for v in row] for row in np.asarray(depth, dtype=np.float64)]
    v = [[bool(x) for x in row] for row in np.asarray(valid)]
    counts = histogram(d, v, k, lo, hi)
    s_dist = dist_score(counts)
    s_grad = grad_score(d, v)
    return {"s_chi2": chi2_score(counts), "s_conc": conc_score(counts),
            "s_range": range_score(counts), "s_dist": s_dist, "s_grad": s_grad,
            "s_total": (s_dist + s_grad) / 2}


# ---------------------------------------------------------------- evaluation


def lsq_search(pred, gt):
    """Grid search over (s, t) followed by a Nelder-Mead polish."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()

    def loss(st):
        return float(np.sum((st[0] * pred + st[1] - gt) ** 2))

    best = min(((s, t) for s in np.linspace(-5, 5, 201) for t in np.linspace(-5, 5, 201)),
               key=loss)
    res = minimize(loss, best, method="Nelder-Mead",
                   options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 20000})
    return res.x, res.fun


def evaluate(pred_disp, gt_depth, mask, depth_cap=100.0, tau=1.25):
    p = [float(x) for x in np.asarray(pred_disp, np.float64)[mask]]
    g = [float(x) for x in np.asarray(gt_depth, np.float64)[mask]]
    a = np.column_stack([p, np.ones(len(p))])
    (s, t), *_ = np.linalg.lstsq(a, 1.0 / np.array(g), rcond=None)
    rel, good = 0.0, 0
    for pi, gi in zip(p, g):
        d = 1.0 / max(s * pi + t, 1.0 / depth_cap)
        rel += abs(d - gi) / gi
        good += max(d / gi, gi / d) < tau
    return rel / len(g), good / len(g)


def gm_loss(residual, mask, scales=4):
    r = [[float(x) for x in row] for row in residual]
    m = [[bool(x) for x in row] for row in mask]
    total = 0.0
    for level in range(scales):
        if level:
            h, w = (len(r) + 1) // 2, (len(r[0]) + 1) // 2
            nr = [[0.0] * w for _ in range(h)]
            nm = [[False] * w for _ in range(h)]
            for i in range(h):
                for j in range(w):
                    acc, cnt = 0.0, 0
                    for a in (2 * i, 2 * i + 1):
                        for b in (2 * j, 2 * j + 1):
                            if a < len(r) and b < len(r[0]) and m[a][b]:
                                acc += r[a][b]
                                cnt += 1
                    if cnt:
                        nr[i][j], nm[i][j] = acc / cnt, True
            r, m = nr, nm
        n = sum(sum(row) for row in m)
        if not n:
            continue
        acc = 0.0
        for i in range(len(r)):
            for j in range(len(r[0])):
                if j + 1 < len(r[0]) and m[i][j] and m[i][j + 1]:
                    acc += abs(r[i][j + 1] - r[i][j])
                if i + 1 < len(r) and m[i][j] and m[i + 1][j]:
                    acc += abs(r[i + 1][j] - r[i][j])
        total += acc / n
    return total / scales


# ---------------------------------------------------------------- decoder


def bilinear_at(x, px, py):
    """Sample a (C, h, w) map at one point with border clamping."""
    _, h, w = x.shape
    px = min(max(px, 0.0), w - 1)
    py = min(max(py, 0.0), h - 1)
    x0, y0 = int(math.floor(px)), int(math.floor(py))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = px - x0, py - y0
    return ((1 - fx) * (1 - fy) * x[:, y0, x0] + fx * (1 - fy) * x[:, y0, x1]
            + (1 - fx) * fy * x[:, y1, x0] + fx * fy * x[:, y1, x1])


def bilinear_up2(x):
    """Half-pixel-centre x2 bilinear upsampling of a (C, h, w) map."""
    c, h, w = x.shape
    out = np.empty((c, 2 * h, 2 * w), dtype=np.float64)
    for i in range(2 * h):
        for j in range(2 * w):
            out[:, i, j] = bilinear_at(x, (j + 0.5) / 2 - 0.5, (i + 0.5) / 2 - 0.5)
    return out


def gelu(v):
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def conv(x, weight, bias=None):
    """Zero-padded stride-1 conv of (Cin, h, w) with (Cout, Cin, k, k), tap by tap."""
    cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    p = k // 2
    xp = np.zeros((cin, h + 2 * p, w + 2 * p))
    xp[:, p:p + h, p:p + w] = x
    out = np.zeros((cout, h, w))
    for o in range(cout):
        for ci in range(cin):
            for dy in range(k):
                for dx in range(k):
                    out[o] += weight[o, ci, dy, dx] * xp[ci, dy:dy + h, dx:dx + w]
        if bias is not None:
            out[o] += bias[o]
    return out


def batchnorm(x, p, prefix, eps):
    g, b = p[prefix + ".weight"], p[prefix + ".bias"]
    mu, var = p[prefix + ".running_mean"], p[prefix + ".running_var"]
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        out[c] = (x[c] - mu[c]) / math.sqrt(var[c] + eps) * g[c] + b[c]
    return out


def relu(x):
    return np.where(x > 0, x, 0.0)


def dysample(x, weight, bias, offset_range=0.25):
    c, h, w = x.shape
    out = np.empty((c, 2 * h, 2 * w))
    for i in range(h):
        for j in range(w):
            off = [offset_range * (sum(weight[q, ch] * x[ch, i, j] for ch in range(c)) + bias[q])
                   for q in range(8)]
            for r in range(2):
                for cc in range(2):
                    oi, oj = 2 * i + r, 2 * j + cc
                    px = (oj + 0.5) / 2 - 0.5 + off[r * 2 + cc]
                    py = (oi + 0.5) / 2 - 0.5 + off[4 + r * 2 + cc]
                    out[:, oi, oj] = bilinear_at(x, px, py)
    return out


def decoder_forward(tokens, params):
    """Compose the decoder from the loop-level pieces above, in float64."""
    cfg = params.config
    p = {k: np.asarray(v, dtype=np.float64) for k, v in params.arrays.items()}
    gh, gw = tokens.grid
    logits = [float(v) for v in p["fusion.logits"]]
    z = [math.exp(v) for v in logits]
    alpha = [v / sum(z) for v in z]
    fused = np.zeros((gh * gw, cfg.width))
    for li, layer in enumerate(tokens.layers):
        wmat, b = p[f"proj.{li}.weight"], p[f"proj.{li}.bias"]
        cls = layer.cls.astype(np.float64)
        for n in range(gh * gw):
            cat = np.concatenate([layer.tokens[n].astype(np.float64), cls])
            for o in range(cfg.width):
                fused[n, o] += alpha[li] * gelu(float(wmat[o] @ cat + b[o]))
    x = np.zeros((cfg.width, gh, gw))
    for n in range(gh * gw):
        x[:, n // gw, n % gw] = fused[n]

    dw = p["sde.dw.weight"]
    y = np.stack([conv(x[c:c + 1], dw[c:c + 1])[0] for c in range(cfg.width)])
    x = relu(x + batchnorm(y, p, "sde.bn", cfg.bn_eps))

    dys, cv = 0, 0
    for _ in range(2):
        for _ in range(2):
            x = dysample(x, p[f"up.dys.{dys}.weight"], p[f"up.dys.{dys}.bias"], cfg.offset_range)
            x = relu(batchnorm(conv(x, p[f"up.conv.{cv}.weight"]), p, f"up.bn.{cv}", cfg.bn_eps))
            dys, cv = dys + 1, cv + 1
        x = relu(batchnorm(conv(x, p[f"up.conv.{cv}.weight"]), p, f"up.bn.{cv}", cfg.bn_eps))
        cv += 1
    x = relu(conv(x, p["head.conv1.weight"], p["head.conv1.bias"]))
    x = relu(conv(x, p["head.conv2.weight"], p["head.conv2.bias"]))
    return x[0]
