"""Slow, direct reference implementations used to check the fast paths.

Nothing here imports the main-path kernels or metrics. Each function is a
plain transcription of its definition: full sorts, brute-force nearest
neighbours, explicit neighbourhood sums and quadrant loops.
"""

from __future__ import annotations

import math

import numpy as np

_EPS = 2.220446049250313e-16


def oracle_topk(scores, k: int) -> list[int]:
    """Row-major indices of the k best scores; ties go to the lower index."""
    flat = [float(v) for v in np.asarray(scores).ravel()]
    order = sorted(range(len(flat)), key=lambda i: (-flat[i], i))
    return order[:k]


def oracle_cosine(cells, query) -> list[float]:
    out = []
    qn = math.sqrt(sum(q * q for q in query))
    for v in cells:
        n = math.sqrt(sum(x * x for x in v))
        if n == 0:
            out.append(-1.0)
        else:
            out.append(sum(a * b for a, b in zip(v, query)) / (n * qn))
    return out


def _gauss7() -> list[list[float]]:
    sigma = 5.0
    k = [[math.exp(-((i - 3) ** 2 + (j - 3) ** 2) / (2 * sigma * sigma)) for j in range(7)] for i in range(7)]
    peak = max(max(r) for r in k)
    k = [[v if v >= _EPS * peak else 0.0 for v in r] for r in k]
    total = sum(sum(r) for r in k)
    return [[v / total for v in r] for r in k]


def oracle_fbw(pred, gt) -> float:
    """Weighted F-measure, beta^2 = 1, with brute-force nearest foreground search."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt).astype(bool)
    h, w = g.shape
    fg = [(r, c) for r in range(h) for c in range(w) if g[r, c]]
    if not fg:
        raise ValueError("empty ground truth")
    fg_arr = np.array(fg)

    err = [[abs(p[r, c] - (1.0 if g[r, c] else 0.0)) for c in range(w)] for r in range(h)]
    dist = [[0.0] * w for _ in range(h)]
    err_t = [row[:] for row in err]
    for r in range(h):
        for c in range(w):
            if g[r, c]:
                continue
            d2 = (fg_arr[:, 0] - r) ** 2 + (fg_arr[:, 1] - c) ** 2
            best = int(d2.min())
            dist[r][c] = math.sqrt(best)
            # every equidistant nearest pixel contributes equally
            tied = [fg[j] for j in range(len(fg)) if int(d2[j]) == best]
            err_t[r][c] = sum(err[fr][fc] for fr, fc in tied) / len(tied)

    kern = _gauss7()
    min_e = [[0.0] * w for _ in range(h)]
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for i in range(7):
                for j in range(7):
                    rr, cc = r + i - 3, c + j - 3
                    if 0 <= rr < h and 0 <= cc < w:
                        acc += kern[i][j] * err_t[rr][cc]
            min_e[r][c] = acc if (g[r, c] and acc < err[r][c]) else err[r][c]

    tp = float(len(fg))
    fp = 0.0
    fg_err = 0.0
    for r in range(h):
        for c in range(w):
            if g[r, c]:
                fg_err += min_e[r][c]
            else:
                fp += min_e[r][c] * (2.0 - math.exp(math.log(0.5) / 5.0 * dist[r][c]))
    tp -= fg_err
    recall = 1.0 - fg_err / len(fg)
    precision = tp / (tp + fp + _EPS)
    return 2.0 * recall * precision / (recall + precision + _EPS)


def _mean(xs):
    return sum(xs) / len(xs)


def _ssim_block(px: list[float], gx: list[float]) -> float:
    n = len(px)
    x = _mean(px)
    y = _mean(gx)
    sx = sum((a - x) ** 2 for a in px) / (n - 1 + _EPS)
    sy = sum((b - y) ** 2 for b in gx) / (n - 1 + _EPS)
    sxy = sum((a - x) * (b - y) for a, b in zip(px, gx)) / (n - 1 + _EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _object(vals: list[float]) -> float:
    if not vals:
        return 0.0
    m = _mean(vals)
    sd = math.sqrt(sum((v - m) ** 2 for v in vals) / (len(vals) - 1)) if len(vals) > 1 else 0.0
    return 2.0 * m / (m * m + 1.0 + sd + _EPS)


def oracle_smeasure(pred, gt) -> float:
    """Structure measure with alpha = 0.5, transcribed loop by loop."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt).astype(bool)
    h, w = g.shape
    n_fg = sum(1 for r in range(h) for c in range(w) if g[r, c])
    total = h * w
    if n_fg == 0:
        return 1.0 - sum(p[r, c] for r in range(h) for c in range(w)) / total
    if n_fg == total:
        return sum(p[r, c] for r in range(h) for c in range(w)) / total

    u = n_fg / total
    fg_vals = [p[r, c] for r in range(h) for c in range(w) if g[r, c]]
    bg_vals = [1.0 - p[r, c] for r in range(h) for c in range(w) if not g[r, c]]
    s_obj = u * _object(fg_vals) + (1 - u) * _object(bg_vals)

    # centroid in 1-based coordinates, MATLAB-style rounding (half away from zero)
    sx = sum(c + 1 for r in range(h) for c in range(w) if g[r, c])
    sy = sum(r + 1 for r in range(h) for c in range(w) if g[r, c])
    X = int(sx / n_fg + 0.5)
    Y = int(sy / n_fg + 0.5)

    quads = [
        (range(0, Y), range(0, X)),
        (range(0, Y), range(X, w)),
        (range(Y, h), range(0, X)),
        (range(Y, h), range(X, w)),
    ]
    s_reg = 0.0
    for rows, cols in quads:
        px = [p[r, c] for r in rows for c in cols]
        if not px:
            continue
        gx = [1.0 if g[r, c] else 0.0 for r in rows for c in cols]
        s_reg += len(px) / total * _ssim_block(px, gx)

    return max(0.0, 0.5 * s_obj + 0.5 * s_reg)
