"""Rectilinear layout parsing, clipping and rasterization.

Layout text grammar (one statement per line, ``#`` starts a comment)::

    DESIGN <name>
    BBOX x0 y0 x1 y1
    RECT x0 y0 x1 y1
    POLY x0 y0 x1 y1 ... xn yn

Coordinates are integer nanometres. ``POLY`` rings are closed implicitly.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import shapely
from shapely.geometry import box as shapely_box
from shapely.geometry import Polygon as ShapelyPolygon

Point = tuple[int, int]
BBox = tuple[int, int, int, int]


class LayoutError(ValueError):
    """Invalid layout geometry or configuration."""


class LayoutSyntaxError(LayoutError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _signed_area2(pts: Sequence[Point]) -> int:
    s = 0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return s


def _segments_touch(a0: Point, a1: Point, b0: Point, b1: Point) -> bool:
    """Closed axis-parallel segments share at least one point."""
    ax0, ax1 = sorted((a0[0], a1[0]))
    ay0, ay1 = sorted((a0[1], a1[1]))
    bx0, bx1 = sorted((b0[0], b1[0]))
    by0, by1 = sorted((b0[1], b1[1]))
    return ax0 <= bx1 and bx0 <= ax1 and ay0 <= by1 and by0 <= ay1


def find_self_intersection(pts: Sequence[Point]) -> tuple[int, int] | None:
    """Return indices of the first pair of non-adjacent edges that touch."""
    n = len(pts)
    for i in range(n):
        a0, a1 = pts[i], pts[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_touch(a0, a1, pts[j], pts[(j + 1) % n]):
                return i, j
    return None


def normalize_ring(points: Iterable[Sequence[int]]) -> tuple[Point, ...]:
    """Canonical form of a rectilinear ring.

    Drops the closing duplicate and repeated vertices, merges collinear
    runs, orients counter-clockwise and rotates so the lexicographically
    smallest vertex comes first. Raises LayoutError on any invariant
    violation.
    """
    pts = [(int(p[0]), int(p[1])) for p in points]
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts.pop()
    dedup: list[Point] = []
    for p in pts:
        if not dedup or dedup[-1] != p:
            dedup.append(p)
    if len(dedup) > 1 and dedup[0] == dedup[-1]:
        dedup.pop()
    pts = dedup
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        if a[0] != b[0] and a[1] != b[1]:
            raise LayoutError(f"non-rectilinear edge {a} -> {b}")
    if n < 4:
        raise LayoutError(f"polygon needs at least 4 distinct vertices, got {n}")

    # merge collinear runs; a reversal (spike) is degenerate
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        n = len(pts)
        for i in range(n):
            p, q, r = pts[i - 1], pts[i], pts[(i + 1) % n]
            if (p[0] == q[0] == r[0]) or (p[1] == q[1] == r[1]):
                d1 = (q[0] - p[0], q[1] - p[1])
                d2 = (r[0] - q[0], r[1] - q[1])
                if d1[0] * d2[0] + d1[1] * d2[1] < 0:
                    raise LayoutError(f"degenerate spike at vertex {q}")
                del pts[i]
                changed = True
                break
    if len(pts) < 4:
        raise LayoutError("polygon collapses to fewer than 4 vertices")

    area2 = _signed_area2(pts)
    if area2 == 0:
        raise LayoutError("polygon has zero area")
    if area2 < 0:
        pts.reverse()
    hit = find_self_intersection(pts)
    if hit is not None:
        raise LayoutError(f"self-intersecting polygon (edges {hit[0]} and {hit[1]})")
    k = min(range(len(pts)), key=lambda i: pts[i])
    return tuple(pts[k:] + pts[:k])


@dataclass(frozen=True)
class Polygon:
    """Closed rectilinear ring, stored CCW without the repeated end vertex."""

    vertices: tuple[Point, ...]

    @classmethod
    def from_points(cls, points: Iterable[Sequence[int]]) -> "Polygon":
        return cls(normalize_ring(points))

    @classmethod
    def rect(cls, x0: int, y0: int, x1: int, y1: int) -> "Polygon":
        x0, x1 = sorted((x0, x1))
        y0, y1 = sorted((y0, y1))
        return cls.from_points([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @property
    def area(self) -> int:
        return _signed_area2(self.vertices) // 2

    @property
    def bbox(self) -> BBox:
        xs = [p[0] for p in self.vertices]
        ys = [p[1] for p in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    @property
    def is_rect(self) -> bool:
        return len(self.vertices) == 4

    def edges(self):
        n = len(self.vertices)
        for i in range(n):
            yield self.vertices[i], self.vertices[(i + 1) % n]

    def contains(self, x: float, y: float) -> bool:
        """Even-odd test for a point not on the boundary."""
        inside = False
        for (x0, y0), (x1, y1) in self.edges():
            if x0 == x1 and (y0 > y) != (y1 > y) and x < x0:
                inside = not inside
        return inside


def _union_bbox(polygons: Sequence[Polygon]) -> BBox:
    if not polygons:
        return (0, 0, 0, 0)
    boxes = [p.bbox for p in polygons]
    return (min(b[0] for b in boxes), min(b[1] for b in boxes),
            max(b[2] for b in boxes), max(b[3] for b in boxes))


@dataclass(frozen=True)
class Layout:
    polygons: tuple[Polygon, ...] = ()
    bbox: BBox | None = None
    name: str = "design"

    def __post_init__(self):
        object.__setattr__(self, "polygons", tuple(self.polygons))
        tight = _union_bbox(self.polygons)
        if self.bbox is None:
            object.__setattr__(self, "bbox", tight)
        else:
            bx = tuple(int(v) for v in self.bbox)
            if bx[0] > bx[2] or bx[1] > bx[3]:
                raise LayoutError(f"inverted bbox {bx}")
            if self.polygons and not (bx[0] <= tight[0] and bx[1] <= tight[1]
                                      and tight[2] <= bx[2] and tight[3] <= bx[3]):
                raise LayoutError(f"bbox {bx} does not contain all vertices {tight}")
            object.__setattr__(self, "bbox", bx)

    @property
    def tight_bbox(self) -> BBox:
        return _union_bbox(self.polygons)

    def area(self) -> float:
        """Area of the polygon union in nm^2."""
        if not self.polygons:
            return 0.0
        return float(shapely.union_all([ShapelyPolygon(p.vertices) for p in self.polygons]).area)


# --------------------------------------------------------------------- text

_TOKEN = re.compile(r"\S+")


def parse_layout(text: str, name: str | None = None) -> Layout:
    """Parse layout text into a validated Layout."""
    polygons: list[Polygon] = []
    bbox = None
    design = name
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens = [(m.group(), m.start() + 1) for m in _TOKEN.finditer(line)]
        if not tokens:
            continue
        kw, kw_col = tokens[0]
        kw = kw.upper()
        args = tokens[1:]
        if kw == "DESIGN":
            if len(args) != 1:
                raise LayoutSyntaxError("DESIGN takes exactly one name", lineno, kw_col)
            if name is None:
                design = args[0][0]
            continue
        if kw not in ("RECT", "POLY", "BBOX"):
            raise LayoutSyntaxError(f"unknown statement {tokens[0][0]!r}", lineno, kw_col)
        coords = []
        for tok, col in args:
            try:
                coords.append(int(tok))
            except ValueError:
                raise LayoutSyntaxError(f"expected integer coordinate, got {tok!r}", lineno, col) from None
        if kw in ("RECT", "BBOX"):
            if len(coords) != 4:
                raise LayoutSyntaxError(f"{kw} takes 4 coordinates, got {len(coords)}", lineno, kw_col)
            x0, y0, x1, y1 = coords
            if kw == "BBOX":
                bbox = (min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
                continue
            if x0 == x1 or y0 == y1:
                raise LayoutSyntaxError("zero-area RECT", lineno, kw_col)
            polygons.append(Polygon.rect(x0, y0, x1, y1))
        else:
            if len(coords) % 2:
                raise LayoutSyntaxError("POLY needs an even number of coordinates", lineno, kw_col)
            pts = list(zip(coords[0::2], coords[1::2]))
            try:
                polygons.append(Polygon.from_points(pts))
            except LayoutError as exc:
                raise LayoutSyntaxError(str(exc), lineno, kw_col) from None
    try:
        return Layout(tuple(polygons), bbox, design or "design")
    except LayoutError as exc:
        raise LayoutSyntaxError(str(exc), 0, 0) from None


def format_layout(layout: Layout) -> str:
    """Serialize to layout text; parse_layout(format_layout(L)) == L."""
    lines = [f"DESIGN {layout.name}"]
    if layout.bbox != layout.tight_bbox:
        lines.append("BBOX %d %d %d %d" % layout.bbox)
    for poly in layout.polygons:
        if poly.is_rect:
            lines.append("RECT %d %d %d %d" % poly.bbox)
        else:
            lines.append("POLY " + " ".join(f"{x} {y}" for x, y in poly.vertices))
    return "\n".join(lines) + "\n"


def convert_glp(text: str) -> str:
    """Convert an ICCAD-2013 contest glyph (.glp) file to layout text.

    Only ``RECT N <layer> x y w h`` and ``PGON N <layer> x y ...`` records
    and the ``CELL`` name are used; everything else is ignored.
    """
    out = []
    name = None
    for raw in text.splitlines():
        tok = raw.split()
        if not tok:
            continue
        head = tok[0].upper()
        if head == "CELL" and len(tok) > 1 and name is None:
            name = tok[1]
        elif head == "RECT" and len(tok) >= 7:
            x, y, w, h = (int(v) for v in tok[3:7])
            out.append(f"RECT {x} {y} {x + w} {y + h}")
        elif head == "PGON" and len(tok) >= 3:
            out.append("POLY " + " ".join(tok[3:]))
    return "\n".join([f"DESIGN {name or 'design'}"] + out) + "\n"


# --------------------------------------------------------------- raster grid

@dataclass(frozen=True)
class GridConfig:
    pitch: int = 1
    width: int = 2048
    height: int = 2048
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if int(self.pitch) != self.pitch or self.pitch <= 0:
            raise LayoutError(f"pitch must be a positive integer, got {self.pitch}")
        if self.width <= 0 or self.height <= 0:
            raise LayoutError("grid dimensions must be positive")

    @property
    def extent(self) -> BBox:
        ox, oy = self.origin
        return ox, oy, ox + self.width * self.pitch, oy + self.height * self.pitch

    @classmethod
    def for_layout(cls, layout: Layout, pitch: int = 1, halo: int = 0) -> "GridConfig":
        """Smallest grid covering the layout bbox plus ``halo`` nm on every side."""
        x0, y0, x1, y1 = layout.bbox
        x0 -= halo
        y0 -= halo
        w = max(1, math.ceil((x1 + halo - x0) / pitch))
        h = max(1, math.ceil((y1 + halo - y0) / pitch))
        return cls(pitch=pitch, width=w, height=h, origin=(x0, y0))


@dataclass(frozen=True, eq=False)
class MaskGrid:
    """H x W raster in [0, 1]; row index grows with y."""

    values: np.ndarray
    pitch: float = 1
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"MaskGrid needs a 2-D array, got shape {v.shape}")
        if v.size and (v.min() < 0 or v.max() > 1 or not np.isfinite(v).all()):
            raise ValueError("MaskGrid values must lie in [0, 1]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def binarized(self, level: float = 0.5) -> "MaskGrid":
        return MaskGrid((self.values >= level).astype(float), self.pitch, self.origin)


def _axis_coverage(a: int, b: int, origin: int, pitch: int, n: int):
    """Integer overlap lengths of [a, b] with pixel cells along one axis."""
    i0 = (a - origin) // pitch
    i1 = -((origin - b) // pitch)  # ceil
    i0 = max(i0, 0)
    i1 = min(i1, n)
    if i1 <= i0:
        return i0, np.zeros(0, dtype=np.int64)
    lo = origin + np.arange(i0, i1, dtype=np.int64) * pitch
    cov = np.minimum(lo + pitch, b) - np.maximum(lo, a)
    return i0, np.clip(cov, 0, pitch)


def union_rectangles(polygons: Sequence[Polygon]) -> list[BBox]:
    """Decompose the union of polygons into disjoint rectangles (slab sweep)."""
    if not polygons:
        return []
    ys = sorted({p[1] for poly in polygons for p in poly.vertices})
    vedges = []
    for poly in polygons:
        vedges.append([(x0, min(y0, y1), max(y0, y1)) for (x0, y0), (x1, y1) in poly.edges() if x0 == x1])
    rects: list[BBox] = []
    for ya, yb in zip(ys[:-1], ys[1:]):
        ym = (ya + yb) / 2
        spans = []
        for edges in vedges:
            xs = sorted(x for x, lo, hi in edges if lo < ym < hi)
            spans.extend(zip(xs[0::2], xs[1::2]))
        if not spans:
            continue
        spans.sort()
        cur0, cur1 = spans[0]
        for s0, s1 in spans[1:]:
            if s0 <= cur1:
                cur1 = max(cur1, s1)
            else:
                rects.append((cur0, ya, cur1, yb))
                cur0, cur1 = s0, s1
        rects.append((cur0, ya, cur1, yb))
    return rects


def rasterize(layout: Layout, cfg: GridConfig, binary: bool = False) -> MaskGrid:
    """Area-fraction raster of the polygon union.

    Overlaps are unioned, never summed. With ``binary=True`` the area
    fraction is thresholded at one half.
    """
    gx0, gy0, gx1, gy1 = cfg.extent
    bx0, by0, bx1, by1 = layout.bbox
    if layout.polygons and (bx0 < gx0 or by0 < gy0 or bx1 > gx1 or by1 > gy1):
        raise LayoutError(f"layout bbox {layout.bbox} exceeds grid extent {cfg.extent}")
    p = int(cfg.pitch)
    acc = np.zeros((cfg.height, cfg.width), dtype=np.int64)
    for x0, y0, x1, y1 in union_rectangles(layout.polygons):
        c0, cx = _axis_coverage(x0, x1, cfg.origin[0], p, cfg.width)
        r0, cy = _axis_coverage(y0, y1, cfg.origin[1], p, cfg.height)
        if cx.size and cy.size:
            acc[r0:r0 + cy.size, c0:c0 + cx.size] += np.outer(cy, cx)
    values = np.minimum(acc, p * p) / float(p * p)
    if binary:
        values = (values >= 0.5).astype(float)
    return MaskGrid(values, p, cfg.origin)


# ------------------------------------------------------------------ clipping

def _shapely_parts(geom) -> list:
    if geom.is_empty:
        return []
    if geom.geom_type == "Polygon":
        return [geom]
    if hasattr(geom, "geoms"):
        out = []
        for g in geom.geoms:
            out.extend(_shapely_parts(g))
        return out
    return []


def clip_window(layout: Layout, center: tuple[int, int], size: int) -> Layout:
    """Intersect every polygon with a square window of side ``size`` nm."""
    if size <= 0:
        raise LayoutError("window size must be positive")
    x0 = int(center[0]) - int(size) // 2
    y0 = int(center[1]) - int(size) // 2
    win = (x0, y0, x0 + int(size), y0 + int(size))
    wbox = shapely_box(*win)
    out: list[Polygon] = []
    for poly in layout.polygons:
        inter = ShapelyPolygon(poly.vertices).intersection(wbox)
        for part in _shapely_parts(inter):
            if part.area <= 0:
                continue
            coords = [(int(round(x)), int(round(y))) for x, y in part.exterior.coords]
            out.append(Polygon.from_points(coords))
    return Layout(tuple(out), win, f"{layout.name}@{center[0]},{center[1]}")
