"""Fragment-based model OPC: fragment edges, measure EPE, move fragments."""

from __future__ import annotations

import csv
import math
import time
from pathlib import Path
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .ilt import OpcResult
from .layout import GridConfig, Layout, LayoutError, Polygon, find_self_intersection, rasterize
from .litho import LithoContext, PrintedImage, aerial_image, mse, resist_threshold


@dataclass(frozen=True)
class MbOpcConfig:
    fragment_length: int = 40
    max_iters: int = 12
    step: float = 2.0
    epe_tol: float = 2.0
    max_offset: float = 20.0

    def __post_init__(self):
        if self.fragment_length <= 0 or self.step <= 0:
            raise ValueError("fragment_length and step must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.max_offset < 0 or self.epe_tol < 0:
            raise ValueError("max_offset and epe_tol must be nonnegative")


@dataclass(frozen=True)
class Fragment:
    polygon: int
    edge: int
    span: tuple[int, int]  # along the edge's travel direction, in nm
    orientation: str  # "horizontal" | "vertical"
    normal: tuple[int, int]  # outward unit normal
    coord: int  # fixed coordinate of the drawn edge line
    offset: float = 0.0
    corner: bool = False

    @property
    def length(self) -> int:
        return abs(self.span[1] - self.span[0])

    @property
    def control_point(self) -> tuple[float, float]:
        mid = 0.5 * (self.span[0] + self.span[1])
        if self.orientation == "horizontal":
            return (mid, float(self.coord))
        return (float(self.coord), mid)


@dataclass(frozen=True)
class EpeReport:
    epe: np.ndarray  # nm, positive = printed contour outside the drawn edge
    saturated: np.ndarray  # bool per fragment
    max_abs_epe: float
    violation_count: int


class FragmentError(LayoutError):
    def __init__(self, message: str, fragment: Fragment | None = None):
        super().__init__(message)
        self.fragment = fragment


def split_edge(length: int, fragment_length: int) -> list[int]:
    """Segment lengths for one edge.

    Full ``fragment_length`` pieces; a remainder of at most half a
    fragment is merged into the last piece.
    """
    if length < 2 or length <= fragment_length:
        return [length]
    n, rem = divmod(length, fragment_length)
    pieces = [fragment_length] * n
    if rem:
        if 2 * rem <= fragment_length:
            pieces[-1] += rem
        else:
            pieces.append(rem)
    return pieces


def fragment_edges(layout: Layout, cfg: MbOpcConfig) -> list[Fragment]:
    """Split every polygon edge into fragments, in polygon/edge order."""
    frags: list[Fragment] = []
    for pi, poly in enumerate(layout.polygons):
        for ei, ((x0, y0), (x1, y1)) in enumerate(poly.edges()):
            horizontal = y0 == y1
            a, b = (x0, x1) if horizontal else (y0, y1)
            sign = 1 if b > a else -1
            # CCW ring: interior on the left, so outward normal is (dy, -dx)
            dx, dy = (sign, 0) if horizontal else (0, sign)
            normal = (dy, -dx)
            pieces = split_edge(abs(b - a), cfg.fragment_length)
            pos = a
            for k, n in enumerate(pieces):
                frags.append(Fragment(
                    polygon=pi, edge=ei, span=(pos, pos + sign * n),
                    orientation="horizontal" if horizontal else "vertical",
                    normal=normal, coord=y0 if horizontal else x0,
                    corner=(k == 0 or k == len(pieces) - 1)))
                pos += sign * n
    return frags


def _edge_line(frag: Fragment) -> float:
    return frag.coord + frag.offset * (frag.normal[1] if frag.orientation == "horizontal" else frag.normal[0])


def _moved_ring(poly: Polygon, frags: Sequence[Fragment]):
    """Vertices of one polygon with its fragments displaced; tracks provenance."""
    by_edge: dict[int, list[Fragment]] = {}
    for f in frags:
        by_edge.setdefault(f.edge, []).append(f)
    n = len(poly.vertices)
    pts: list[tuple[float, float]] = []
    owners: list[Fragment] = []
    for ei in range(n):
        cur = by_edge[ei]
        prev = by_edge[(ei - 1) % n][-1]
        first = cur[0]
        # corner: intersection of the previous edge's last line and this edge's first line
        if first.orientation == "horizontal":
            corner = (_edge_line(prev), _edge_line(first))
        else:
            corner = (_edge_line(first), _edge_line(prev))
        pts.append(corner)
        owners.append(first)
        for fa, fb in zip(cur[:-1], cur[1:]):
            if fa.offset == fb.offset:
                continue
            s = fa.span[1]
            la, lb = _edge_line(fa), _edge_line(fb)
            if fa.orientation == "horizontal":
                pts += [(s, la), (s, lb)]
            else:
                pts += [(la, s), (lb, s)]
            owners += [fa, fb]
    return pts, owners


def apply_offsets(layout: Layout, fragments: Sequence[Fragment]) -> Layout:
    """Displace each fragment along its outward normal, inserting jogs."""
    by_poly: dict[int, list[Fragment]] = {}
    for f in fragments:
        by_poly.setdefault(f.polygon, []).append(f)
    out = []
    for pi, poly in enumerate(layout.polygons):
        frags = by_poly.get(pi)
        if not frags or all(f.offset == 0 for f in frags):
            out.append(poly)
            continue
        pts, owners = _moved_ring(poly, frags)
        if any(x != int(x) or y != int(y) for x, y in pts):
            raise FragmentError("fragment offsets must be whole nanometres")
        ipts = [(int(x), int(y)) for x, y in pts]
        # collapse duplicates but keep provenance of the surviving vertex
        ring, ring_owner = [], []
        for p, o in zip(ipts, owners):
            if not ring or ring[-1] != p:
                ring.append(p)
                ring_owner.append(o)
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring.pop()
            ring_owner.pop()
        hit = find_self_intersection(ring) if len(ring) >= 4 else None
        if hit is not None:
            raise FragmentError(f"polygon {pi}: displacement self-intersects near fragment "
                                f"{_describe(ring_owner[hit[1]])}", ring_owner[hit[1]])
        try:
            out.append(Polygon.from_points(ring))
        except LayoutError as exc:
            culprit = max(frags, key=lambda f: abs(f.offset))
            raise FragmentError(f"polygon {pi}: {exc} (fragment {_describe(culprit)})", culprit) from None
    x0, y0, x1, y1 = layout.bbox
    tight = Layout(tuple(out), None, layout.name).bbox
    bbox = (min(x0, tight[0]), min(y0, tight[1]), max(x1, tight[2]), max(y1, tight[3])) if out else layout.bbox
    return Layout(tuple(out), bbox, layout.name)


def _describe(f: Fragment) -> str:
    return f"poly {f.polygon} edge {f.edge} span {f.span} offset {f.offset:g}"


# ---------------------------------------------------------------------- EPE

def measure_epe(printed, fragments: Sequence[Fragment], grid: GridConfig,
                max_offset: float = 20.0, epe_tol: float = 2.0, relaxed=None) -> EpeReport:
    """Signed distance from each drawn edge to the printed contour.

    Marches along the outward normal from the control point through the
    hard print. With a relaxed print the crossing is refined linearly
    between the two pixel centres that straddle the 0.5 level.
    """
    hard = printed.values if hasattr(printed, "values") else np.asarray(printed)
    soft = None
    if relaxed is not None:
        soft = relaxed.values if hasattr(relaxed, "values") else np.asarray(relaxed)
    p = float(grid.pitch)
    ox, oy = grid.origin
    limit = 4.0 * max_offset
    h, w = hard.shape
    epes = np.zeros(len(fragments))
    sat = np.zeros(len(fragments), dtype=bool)
    for i, f in enumerate(fragments):
        cx, cy = f.control_point
        if f.orientation == "vertical":
            row = int(np.clip(np.floor((cy - oy) / p), 0, h - 1))
            line = hard[row, :]
            sline = soft[row, :] if soft is not None else None
            edge_pos, origin, sgn, n = cx, ox, f.normal[0], w
        else:
            col = int(np.clip(np.floor((cx - ox) / p), 0, w - 1))
            line = hard[:, col]
            sline = soft[:, col] if soft is not None else None
            edge_pos, origin, sgn, n = cy, oy, f.normal[1], h
        epes[i], sat[i] = _march(line, sline, edge_pos, origin, p, sgn, n, limit)
    abs_e = np.abs(epes)
    return EpeReport(epes, sat, float(abs_e.max()) if len(abs_e) else 0.0,
                     int(np.sum(abs_e > epe_tol)))


def _march(line, sline, edge_pos, origin, p, sgn, n, limit):
    # pixel j spans [origin + j p, origin + (j+1) p]; centre at origin + (j + .5) p
    u = (edge_pos - origin) / p  # edge position in pixel units
    if sgn > 0:
        j_in = int(np.ceil(u)) - 1
    else:
        j_in = int(np.floor(u))
    steps = int(np.ceil(limit / p)) + 1

    def val(j):
        return line[j] > 0.5 if 0 <= j < n else False

    def centre(j):
        return origin + (j + 0.5) * p

    def crossing(j_on, j_off):
        # contour between the printed pixel j_on and the dark pixel j_off
        if sline is not None and 0 <= j_on < n and 0 <= j_off < n:
            a, b = float(sline[j_on]), float(sline[j_off])
            frac = (a - 0.5) / (a - b) if a != b else 0.5
            frac = min(max(frac, 0.0), 1.0)
            return centre(j_on) + frac * (centre(j_off) - centre(j_on))
        return 0.5 * (centre(j_on) + centre(j_off))

    if val(j_in):
        for k in range(1, steps + 1):
            j = j_in + sgn * k
            if not val(j):
                pos = crossing(j - sgn, j)
                return _clip_epe((pos - edge_pos) * sgn, limit)
        return limit, True
    for k in range(1, steps + 1):
        j = j_in - sgn * k
        if val(j):
            pos = crossing(j, j + sgn)
            return _clip_epe((pos - edge_pos) * sgn, limit)
    return -limit, True


def _clip_epe(e, limit):
    if abs(e) > limit:
        return float(np.sign(e) * limit), True
    return float(e), False


# ------------------------------------------------------------------- driver

def write_fragments(path, fragments: Sequence[Fragment], report: EpeReport | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["polygon", "edge", "span_start", "span_end", "offset", "epe"])
        for i, f in enumerate(fragments):
            e = "" if report is None else repr(float(report.epe[i]))
            w.writerow([f.polygon, f.edge, f.span[0], f.span[1], repr(float(f.offset)), e])


def _next_offset(offset: float, epe: float, cfg: MbOpcConfig) -> float:
    # whole-nm moves, never larger than the step, clamped to max_offset
    delta = -np.sign(epe) * min(cfg.step, abs(epe))
    new = float(np.round(offset + delta))
    if abs(new - offset) > cfg.step:
        new = offset + float(np.trunc(delta))
    return float(np.clip(new, -np.floor(cfg.max_offset), np.floor(cfg.max_offset)))


def run_mbopc(layout: Layout, cfg: MbOpcConfig, ctx: LithoContext, grid: GridConfig | None = None,
              target=None, dump_dir=None) -> OpcResult:
    """Iterate rasterize -> simulate -> EPE -> move until EPE is within tolerance.

    Fragment moves interact, so the max EPE need not fall monotonically;
    the iterate with the smallest max EPE (earliest on ties) is returned.
    """
    t0 = time.perf_counter()
    pitch = int(round(ctx.pitch))
    if grid is None:
        # room for every edge to move out by max_offset
        grid = GridConfig.for_layout(layout, pitch, halo=int(math.ceil(cfg.max_offset)))
    if target is None:
        target = rasterize(layout, grid, binary=True)
    frags = fragment_edges(layout, cfg)
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
    trace = []
    history = []
    current = layout
    iters = 0
    best = None
    for it in range(cfg.max_iters + 1):
        mask = rasterize(current, grid)
        intensity = aerial_image(mask, ctx.kernels)
        hard = resist_threshold(intensity, ctx.resist, "hard")
        soft = resist_threshold(intensity, ctx.resist, "relaxed")
        report = measure_epe(hard, frags, grid, cfg.max_offset, cfg.epe_tol, relaxed=soft)
        history.append(report.max_abs_epe)
        trace.append((it, report.max_abs_epe, report.violation_count, time.perf_counter() - t0))
        key = (report.max_abs_epe, report.violation_count)
        if best is None or key < best[0]:
            best = (key, it, mask, hard, report, frags, current)
        if dump_dir is not None:
            write_fragments(f"{dump_dir}/fragments_{it:03d}.csv", frags, report)
        if report.max_abs_epe <= cfg.epe_tol or it == cfg.max_iters:
            break
        moved = [replace(f, offset=_next_offset(f.offset, e, cfg)) for f, e in zip(frags, report.epe)]
        try:
            nxt = apply_offsets(layout, moved)
        except FragmentError as exc:
            err = FragmentError(f"iteration {it + 1}: {exc}", exc.fragment)
            err.trace = trace
            raise err from None
        frags = moved
        current = nxt
        iters = it + 1
    _, best_it, mask, hard, report, frags, current = best
    printed = PrintedImage(hard.values, "hard")
    return OpcResult(
        mask=mask, printed=printed, mse=mse(printed, target), runtime=time.perf_counter() - t0,
        engine="MB-OPC", iterations=iters, objective=report.max_abs_epe, trace=trace,
        info={"initial_max_epe": history[0], "final_max_epe": report.max_abs_epe, "best_iteration": best_it,
              "fragments": frags, "layout": current, "epe": report})
