"""Independent reference implementations used as test oracles.

These are deliberately slow and literal: loops and direct sums, no FFTs and
no code shared with the package.
"""

import itertools
import math
from fractions import Fraction

import numpy as np


def direct_intensity(mask, kernels, weights, scale):
    """I(y, x) = scale * sum_k w_k |sum_{u,v} M(y-u, x-v) h_k(u, v)|^2, zero outside the mask."""
    m = np.asarray(mask, dtype=float)
    H, W = m.shape
    K, S, _ = kernels.shape
    R = S // 2
    pad = np.zeros((H + 2 * R, W + 2 * R))
    pad[R:R + H, R:R + W] = m
    out = np.zeros((H, W))
    for k in range(K):
        field = np.zeros((H, W), dtype=complex)
        for du in range(-R, R + 1):
            for dv in range(-R, R + 1):
                h = kernels[k, du + R, dv + R]
                if h == 0:
                    continue
                # M(y - du, x - dv)
                field += h * pad[R - du:R - du + H, R - dv:R - dv + W]
        out += weights[k] * np.abs(field) ** 2
    return scale * out


def naive_dct2(block):
    """Orthonormal type-II 2-D DCT by the O(n^4) definition."""
    b = np.asarray(block, dtype=float)
    n, m = b.shape
    out = np.zeros((n, m))
    for u in range(n):
        for v in range(m):
            au = math.sqrt(1.0 / n) if u == 0 else math.sqrt(2.0 / n)
            av = math.sqrt(1.0 / m) if v == 0 else math.sqrt(2.0 / m)
            s = 0.0
            for x in range(n):
                for y in range(m):
                    s += b[x, y] * math.cos(math.pi * (2 * x + 1) * u / (2 * n)) \
                        * math.cos(math.pi * (2 * y + 1) * v / (2 * m))
            out[u, v] = au * av * s
    return out


def compositions(d, n):
    """All n-tuples of positive integers summing to d."""
    for cuts in itertools.combinations(range(1, d), n - 1):
        edges = (0,) + cuts + (d,)
        yield tuple(edges[i + 1] - edges[i] for i in range(n))


def best_squish_objective(delta, d):
    """min over compositions s of max delta_i / s_i, exactly."""
    return min(max(Fraction(x) / s for x, s in zip(delta, comp)) for comp in compositions(d, len(delta)))


def best_subset(M, k):
    """(value, first subset in lexicographic order reaching it) for max w^T M w."""
    M = np.asarray(M)
    best, arg = -math.inf, None
    for sub in itertools.combinations(range(M.shape[0]), k):
        v = sum(M[i, j] for i in sub for j in sub)
        if v > best:
            best, arg = v, sub
    return best, arg


def plugin_mi_bits(x_codes, y):
    """Plug-in mutual information between two discrete sequences, in bits, via counting dictionaries."""
    n = len(y)
    cx, cy, cxy = {}, {}, {}
    for a, b in zip(x_codes, y):
        cx[a] = cx.get(a, 0) + 1
        cy[b] = cy.get(b, 0) + 1
        cxy[(a, b)] = cxy.get((a, b), 0) + 1
    mi = 0.0
    for (a, b), c in cxy.items():
        mi += c / n * math.log2(c * n / (cx[a] * cy[b]))
    return mi


def bilinear(img, x, y):
    """Bilinear sample with (x, y) in pixel-index units, x = column, y = row."""
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    fx, fy = x - x0, y - y0
    x1, y1 = min(x0 + 1, img.shape[1] - 1), min(y0 + 1, img.shape[0] - 1)
    return ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x1]
            + (1 - fx) * fy * img[y1, x0] + fx * fy * img[y1, x1])


def pixel_area_raster(rects, width, height, pitch=1):
    """Area-fraction raster of a union of rectangles by brute-force sub-sampling of unit nm cells."""
    fine = np.zeros((height * pitch, width * pitch), dtype=bool)
    for x0, y0, x1, y1 in rects:
        fine[y0:y1, x0:x1] = True
    return fine.reshape(height, pitch, width, pitch).mean(axis=(1, 3))
