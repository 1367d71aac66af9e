"""Design features for the engine selector.

Three encodings live here: blockwise DCT of a raster clip, concentric
circle sampling (with mutual-information based circle subset selection),
and squish patterns (topology matrix plus scanline widths).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.fft import dctn
from scipy.ndimage import map_coordinates
from shapely import contains_xy
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.ops import unary_union

from .layout import GridConfig, Layout, MaskGrid, Polygon, rasterize


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    tag: str
    fingerprint: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise FeatureError("feature vector has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return int(self.values.size)


def _as_array(clip) -> np.ndarray:
    return np.asarray(clip.values if isinstance(clip, MaskGrid) else clip, dtype=float)


# ---------------------------------------------------------------- DCT

def zigzag_order(n: int) -> list[tuple[int, int]]:
    """JPEG zigzag scan of an n×n block, lowest frequencies first."""
    def key(ij):
        s = ij[0] + ij[1]
        return (s, ij[0] if s % 2 else ij[1])
    return sorted(((i, j) for i in range(n) for j in range(n)), key=key)


def dct_features(clip, keep: int = 32, blocks: int = 12) -> FeatureVector:
    """Type-II orthonormal DCT per block on a ``blocks``×``blocks`` grid.

    The clip is zero-padded symmetrically up to a multiple of ``blocks``.
    Each block contributes its first ``keep`` coefficients in zigzag order.
    """
    a = _as_array(clip)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise FeatureError(f"clip must be square, got shape {a.shape}")
    if blocks < 1:
        raise FeatureError("blocks must be positive")
    n = a.shape[0]
    pad = (-n) % blocks
    if pad:
        lo = pad // 2
        a = np.pad(a, ((lo, pad - lo), (lo, pad - lo)))
    b = a.shape[0] // blocks
    if keep < 1 or keep > b * b:
        raise FeatureError(f"keep={keep} outside 1..{b * b} for {b}x{b} blocks")
    zz = zigzag_order(b)[:keep]
    rows = np.array([i for i, _ in zz])
    cols = np.array([j for _, j in zz])
    # (blocks, blocks, b, b) view, transform the last two axes in one call
    tiles = a.reshape(blocks, b, blocks, b).transpose(0, 2, 1, 3)
    coef = dctn(tiles, type=2, norm="ortho", axes=(2, 3))
    vals = coef[:, :, rows, cols].reshape(-1)
    return FeatureVector(vals, "dct", f"dct:n={n}:blocks={blocks}:keep={keep}")


def design_features(layout: Layout, pitch: int = 8, keep: int = 32, blocks: int = 12) -> FeatureVector:
    """DCT features of a design's binary target raster."""
    grid = GridConfig.for_layout(layout, pitch)
    if grid.width != grid.height:
        raise FeatureError(f"design {layout.name} is not square ({grid.width}x{grid.height} px)")
    fv = dct_features(rasterize(layout, grid, binary=True), keep, blocks)
    return FeatureVector(fv.values, fv.tag, f"{fv.fingerprint}:pitch={pitch}")


# ---------------------------------------------------------------- circles

@dataclass(frozen=True)
class CircleSampleMatrix:
    rows: np.ndarray
    radii: tuple

    def __post_init__(self):
        r = tuple(float(x) for x in self.radii)
        if any(b <= a for a, b in zip(r, r[1:])):
            raise FeatureError("radii must be strictly increasing")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "rows", np.asarray(self.rows, dtype=float))

    def means(self) -> np.ndarray:
        return self.rows.mean(axis=1)


def ccas_sample(clip, radii: Sequence[float], m: int, pitch: float | None = None) -> CircleSampleMatrix:
    """Bilinear samples at ``m`` equal angles (starting at 0, counter-clockwise) on each circle.

    Radii are in nm; ``pitch`` defaults to the MaskGrid pitch (1 for plain arrays).
    Circles are centred on the clip centre.
    """
    a = _as_array(clip)
    if pitch is None:
        pitch = clip.pitch if isinstance(clip, MaskGrid) else 1.0
    h, w = a.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    half = min(cx, cy)
    r_px = np.asarray(radii, dtype=float) / float(pitch)
    if r_px.size == 0 or m < 1:
        raise FeatureError("need at least one radius and one angular sample")
    if r_px.max() > half + 1e-12:
        raise FeatureError(f"radius {max(radii)} nm exceeds clip half-extent {half * pitch} nm")
    ang = 2 * np.pi * np.arange(m) / m
    xs = cx + np.outer(r_px, np.cos(ang))
    ys = cy + np.outer(r_px, np.sin(ang))
    # snap round-off so exact grid points stay exact
    xs = np.where(np.abs(xs - np.round(xs)) < 1e-9, np.round(xs), xs)
    ys = np.where(np.abs(ys - np.round(ys)) < 1e-9, np.round(ys), ys)
    vals = map_coordinates(a, [ys.ravel(), xs.ravel()], order=1, mode="nearest")
    return CircleSampleMatrix(vals.reshape(r_px.size, m), tuple(radii))


@dataclass(frozen=True)
class CircleStats:
    M: np.ndarray
    bins: int = 8


def _quantize(x: np.ndarray, bins: int) -> np.ndarray:
    edges = np.quantile(x, np.linspace(0, 1, bins + 1)[1:-1])
    return np.searchsorted(edges, x, side="right")


def _entropy_bits(counts: np.ndarray) -> float:
    c = counts[counts > 0].astype(float)
    p = c / c.sum()
    return float(-(p * np.log2(p)).sum())


def _mi_bits(cells: np.ndarray, y: np.ndarray) -> float:
    """Plug-in I(cells; y) in bits for integer-coded arrays."""
    _, yi = np.unique(y, return_inverse=True)
    _, ci = np.unique(cells, return_inverse=True)
    joint = np.zeros((ci.max() + 1, yi.max() + 1))
    np.add.at(joint, (ci, yi), 1)
    return max(0.0, _entropy_bits(joint.sum(1)) + _entropy_bits(joint.sum(0)) - _entropy_bits(joint.ravel()))


def mutual_information_matrix(means: np.ndarray, labels, bins: int = 8) -> np.ndarray:
    """M[i, j] = I((Q_i, Q_j); Y) with each circle mean quantized into ``bins`` quantile bins."""
    x = np.asarray(means, dtype=float)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise FeatureError("means must be (samples, circles) matching the labels")
    if np.unique(y).size < 2:
        raise FeatureError("circle statistics need both classes")
    q = np.stack([_quantize(x[:, i], bins) for i in range(x.shape[1])], axis=1)
    n = x.shape[1]
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            M[i, j] = M[j, i] = _mi_bits(q[:, i] * bins + q[:, j], y)
    return M


def circle_stats(samples: Iterable[tuple[CircleSampleMatrix, object]], bins: int = 8) -> CircleStats:
    samples = list(samples)
    if len(samples) < 2:
        raise FeatureError("circle statistics need at least two samples")
    means = np.stack([s.means() for s, _ in samples])
    return CircleStats(mutual_information_matrix(means, [lab for _, lab in samples], bins), bins)


@dataclass(frozen=True)
class CircleSelection:
    w: np.ndarray
    value: float
    solver: str  # "exhaustive" or "greedy+swap"

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.w))


def _quad(M, idx) -> float:
    return float(M[np.ix_(idx, idx)].sum())


def _exhaustive(M: np.ndarray, k: int, chunk: int = 4096):
    n = M.shape[0]
    best, best_idx = -math.inf, None
    combos = itertools.combinations(range(n), k)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        vals = M[block[:, :, None], block[:, None, :]].sum(axis=(1, 2))
        i = int(np.argmax(vals))
        if vals[i] > best:  # strict: earliest (lexicographic) subset wins ties
            best, best_idx = float(vals[i]), tuple(block[i])
    return best_idx, best


def _greedy_swap_from(M: np.ndarray, k: int, start: int | None):
    n = M.shape[0]
    chosen: list[int] = [] if start is None else [start]
    while len(chosen) < k:
        rest = [j for j in range(n) if j not in chosen]
        gains = [M[j, j] + 2 * M[j, chosen].sum() for j in rest]
        chosen.append(rest[int(np.argmax(gains))])
    chosen.sort()
    val = _quad(M, chosen)
    tol = 1e-12 * max(1.0, abs(val))
    while True:
        best = (val, None)
        for a in chosen:
            for b in range(n):
                if b in chosen:
                    continue
                cand = sorted([b if c == a else c for c in chosen])
                v = _quad(M, cand)
                if v > best[0] + tol:
                    best = (v, cand)
        if best[1] is None:
            return tuple(chosen), val
        val, chosen = best


def _greedy_swap(M: np.ndarray, k: int):
    """Greedy forward selection plus single swaps, restarted from every circle.

    One pass gets stuck in a swap-local optimum fairly often; the restarts
    cost a factor n and recover almost all of those cases.
    """
    best = None
    for start in [None, *range(M.shape[0])]:
        idx, val = _greedy_swap_from(M, k, start)
        if best is None or val > best[1] + 1e-12 * max(1.0, abs(best[1])):
            best = (idx, val)
    return best


def select_circles(stats, n_c_star: int, method: str = "auto", exhaustive_limit: int = 20) -> CircleSelection:
    """Choose ``n_c_star`` circles maximizing wᵀMw over binary w with Σw = n_c_star."""
    M = np.asarray(stats.M if isinstance(stats, CircleStats) else stats, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n):
        raise FeatureError("M must be square")
    if not 1 <= n_c_star <= n:
        raise FeatureError(f"n_c* = {n_c_star} infeasible for {n} circles")
    if method == "auto":
        method = "exhaustive" if n <= exhaustive_limit else "greedy"
    if method == "exhaustive":
        idx, val = _exhaustive(M, n_c_star)
        solver = "exhaustive"
    elif method == "greedy":
        idx, val = _greedy_swap(M, n_c_star)
        solver = "greedy+swap"
    else:
        raise FeatureError(f"unknown selection method {method!r}")
    w = np.zeros(n, dtype=int)
    w[list(idx)] = 1
    return CircleSelection(w, val, solver)


# ---------------------------------------------------------------- squish

@dataclass(frozen=True)
class SquishPattern:
    topology: np.ndarray   # rows follow y (bottom up), columns follow x
    dx: tuple
    dy: tuple
    origin: tuple = (0, 0)
    sx: tuple | None = None   # duplication counts after adaptive scaling
    sy: tuple | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.topology.shape


def squish_encode(clip: Layout) -> SquishPattern:
    x0, y0, x1, y1 = clip.bbox
    xs = sorted({x0, x1} | {p[0] for poly in clip.polygons for p in poly.vertices})
    ys = sorted({y0, y1} | {p[1] for poly in clip.polygons for p in poly.vertices})
    xm = (np.array(xs[:-1]) + np.array(xs[1:])) / 2.0
    ym = (np.array(ys[:-1]) + np.array(ys[1:])) / 2.0
    topo = np.zeros((ym.size, xm.size), dtype=np.uint8)
    if clip.polygons:
        shape = unary_union([ShapelyPolygon(p.vertices) for p in clip.polygons])
        gx, gy = np.meshgrid(xm, ym)
        topo = contains_xy(shape, gx, gy).astype(np.uint8)
    return SquishPattern(topo, tuple(np.diff(xs).tolist()), tuple(np.diff(ys).tolist()), (x0, y0))


def _collapse(topo: np.ndarray, widths, counts, axis: int):
    """Undo duplication along one axis; returns (topology, original widths)."""
    if counts is None:
        return topo, [Fraction(w) for w in widths]
    out_w, keep, pos = [], [], 0
    for c in counts:
        seg = np.take(topo, range(pos, pos + c), axis=axis)
        first = np.take(seg, [0], axis=axis)
        if not np.all(seg == first):
            raise FeatureError("duplicated squish columns differ")
        keep.append(pos)
        out_w.append(sum((Fraction(w) for w in widths[pos:pos + c]), Fraction(0)))
        pos += c
    return np.take(topo, keep, axis=axis), out_w


def squish_decode(pattern: SquishPattern, name: str = "squish") -> Layout:
    """Rebuild a layout (as disjoint rectangles) from a squish pattern."""
    topo, wy = _collapse(pattern.topology, pattern.dy, pattern.sy, 0)
    topo, wx = _collapse(topo, pattern.dx, pattern.sx, 1)
    ox, oy = pattern.origin
    xs = [ox + sum(wx[:i], Fraction(0)) for i in range(len(wx) + 1)]
    ys = [oy + sum(wy[:i], Fraction(0)) for i in range(len(wy) + 1)]
    if any(v.denominator != 1 for v in xs + ys):
        raise FeatureError("squish scanlines are not on the integer grid")
    xs = [int(v) for v in xs]
    ys = [int(v) for v in ys]
    rects = []
    for i in range(topo.shape[0]):
        j = 0
        while j < topo.shape[1]:
            if topo[i, j]:
                k = j
                while k < topo.shape[1] and topo[i, k]:
                    k += 1
                rects.append(Polygon.rect(xs[j], ys[i], xs[k], ys[i + 1]))
                j = k
            else:
                j += 1
    return Layout(tuple(rects), (xs[0], ys[0], xs[-1], ys[-1]), name)


def squish_scale(delta: Sequence, d: int) -> tuple[int, ...]:
    """Integer duplication counts s (Σs = d) minimizing max δ_i/s_i.

    Water-filling: start from all ones and give each of the remaining
    d−n units to the entry with the largest current δ_i/s_i (lowest index on ties).
    """
    dl = [Fraction(x) for x in delta]
    n = len(dl)
    if n == 0:
        raise FeatureError("empty delta")
    if any(x <= 0 for x in dl):
        raise FeatureError("delta entries must be positive")
    if d < n:
        raise FeatureError(f"target dimension {d} smaller than {n} intervals")
    s = [1] * n
    for _ in range(d - n):
        ratios = [dl[i] / s[i] for i in range(n)]
        top = max(ratios)
        s[ratios.index(top)] += 1
    return tuple(s)


def squish_adapt(pattern: SquishPattern, d: int) -> SquishPattern:
    """Resample a squish pattern to a d×d topology with scaled widths δ' = δ/s."""
    sx = squish_scale(pattern.dx, d)
    sy = squish_scale(pattern.dy, d)
    topo = np.repeat(np.repeat(pattern.topology, sy, axis=0), sx, axis=1)
    dx = tuple(Fraction(w) / c for w, c in zip(pattern.dx, sx) for _ in range(c))
    dy = tuple(Fraction(w) / c for w, c in zip(pattern.dy, sy) for _ in range(c))
    return SquishPattern(topo, dx, dy, pattern.origin, sx, sy)


def squish_features(clip: Layout, d: int = 16) -> FeatureVector:
    """Adaptive squish pattern flattened: topology bits, then δ'x and δ'y in nm."""
    ap = squish_adapt(squish_encode(clip), d)
    vals = np.concatenate([ap.topology.ravel().astype(float),
                           [float(v) for v in ap.dx], [float(v) for v in ap.dy]])
    return FeatureVector(vals, "squish", f"squish:d={d}")


# ---------------------------------------------------------------- export

def write_feature_csv(path, rows: Iterable[tuple[str, object, FeatureVector]]) -> None:
    """CSV with columns design, label, f0..f{d-1}; label may be empty."""
    rows = list(rows)
    d = rows[0][2].d if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["design", "label"] + [f"f{i}" for i in range(d)])
        for name, label, fv in rows:
            if fv.d != d:
                raise FeatureError(f"{name}: dimension {fv.d} differs from {d}")
            w.writerow([name, "" if label is None else str(label)] + [repr(float(v)) for v in fv.values])


def read_feature_csv(path) -> list[tuple[str, str | None, np.ndarray]]:
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            out.append((row[0], row[1] or None, np.array([float(v) for v in row[2:]])))
    return out
