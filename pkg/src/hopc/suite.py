"""Synthetic benchmark designs.

Every design sits in a 1280 nm square field (written as an explicit BBOX)
with shapes kept 192 nm away from the field edge. All coordinates are
multiples of 8 nm so that the default 8 nm simulation grid resolves them
exactly.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .layout import Layout, Polygon, format_layout, parse_layout

FIELD = 1280
MARGIN = 192
SNAP = 8
FAMILIES = ("contacts", "line_array", "l_junction", "t_junction", "iso_rect", "dense_contacts")

BUNDLED_SEED = 2013
TRAINING_SEED = 101
BUNDLED_FAMILIES = ("contacts", "line_array", "dense_contacts", "l_junction", "contacts",
                    "dense_contacts", "t_junction", "iso_rect", "dense_contacts", "line_array")


def _snap(v: float) -> int:
    return int(SNAP * round(v / SNAP))


# isolated contact sizes large enough to print from the drawn shape
CONTACT_SIZES = (128, 144, 152, 168, 176)


def _contacts(rng, n_range=(2, 4), sizes=CONTACT_SIZES, min_gap=360):
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    size = int(rng.choice(sizes))
    lo, hi = MARGIN, FIELD - MARGIN - size
    placed: list[tuple[int, int]] = []
    for _ in range(200):
        if len(placed) == n:
            break
        x, y = _snap(rng.uniform(lo, hi)), _snap(rng.uniform(lo, hi))
        if all(max(abs(x - a), abs(y - b)) >= min_gap for a, b in placed):
            placed.append((x, y))
    return [Polygon.rect(x, y, x + size, y + size) for x, y in placed]


def _dense_contacts(rng):
    # small contacts that do not print as drawn; ILT tends to stall here
    size = 88
    pitch = _snap(rng.uniform(192, 224))
    n = int(rng.integers(3, 5))
    x0 = _snap((FIELD - (n - 1) * pitch - size) / 2)
    return [Polygon.rect(x0 + i * pitch, x0 + j * pitch, x0 + i * pitch + size, x0 + j * pitch + size)
            for i in range(n) for j in range(n)]


def _line_array(rng):
    width = _snap(rng.uniform(88, 120))
    pitch = _snap(rng.uniform(200, 248))
    n = int(rng.integers(3, 6))
    length = _snap(rng.uniform(640, FIELD - 2 * MARGIN))
    x0 = _snap((FIELD - (n - 1) * pitch - width) / 2)
    y0 = _snap((FIELD - length) / 2)
    horizontal = bool(rng.integers(0, 2))
    polys = []
    for i in range(n):
        a = x0 + i * pitch
        if horizontal:
            polys.append(Polygon.rect(y0, a, y0 + length, a + width))
        else:
            polys.append(Polygon.rect(a, y0, a + width, y0 + length))
    return polys


def _l_junction(rng):
    w = _snap(rng.uniform(88, 128))
    arm_x = _snap(rng.uniform(400, 700))
    arm_y = _snap(rng.uniform(400, 700))
    x0 = _snap((FIELD - arm_x) / 2)
    y0 = _snap((FIELD - arm_y) / 2)
    pts = [(x0, y0), (x0 + arm_x, y0), (x0 + arm_x, y0 + w), (x0 + w, y0 + w),
           (x0 + w, y0 + arm_y), (x0, y0 + arm_y)]
    polys = [Polygon.from_points(pts)]
    if rng.integers(0, 2):
        # a second, nested L at one pitch distance
        d = _snap(w + rng.uniform(120, 200))
        if x0 + d + w < x0 + arm_x and y0 + d + w < y0 + arm_y:
            pts2 = [(x0 + d, y0 + d), (x0 + arm_x, y0 + d), (x0 + arm_x, y0 + d + w),
                    (x0 + d + w, y0 + d + w), (x0 + d + w, y0 + arm_y), (x0 + d, y0 + arm_y)]
            polys.append(Polygon.from_points(pts2))
    return polys


def _t_junction(rng):
    w = _snap(rng.uniform(88, 128))
    bar = _snap(rng.uniform(560, FIELD - 2 * MARGIN))
    stem = _snap(rng.uniform(320, 560))
    x0 = _snap((FIELD - bar) / 2)
    yb = _snap((FIELD + stem) / 2)
    xs = _snap(FIELD / 2 - w / 2)
    pts = [(xs, yb - stem), (xs + w, yb - stem), (xs + w, yb), (x0 + bar, yb), (x0 + bar, yb + w),
           (x0, yb + w), (x0, yb), (xs, yb)]
    return [Polygon.from_points(pts)]


def _iso_rect(rng):
    w = _snap(rng.uniform(160, 400))
    h = _snap(rng.uniform(240, 640))
    x0 = _snap((FIELD - w) / 2)
    y0 = _snap((FIELD - h) / 2)
    return [Polygon.rect(x0, y0, x0 + w, y0 + h)]


_MAKERS = {
    "contacts": _contacts,
    "dense_contacts": _dense_contacts,
    "line_array": _line_array,
    "l_junction": _l_junction,
    "t_junction": _t_junction,
    "iso_rect": _iso_rect,
}


def generate_design(family: str, rng: np.random.Generator, name: str) -> Layout:
    try:
        maker = _MAKERS[family]
    except KeyError:
        raise ValueError(f"unknown design family {family!r}") from None
    return Layout(tuple(maker(rng)), (0, 0, FIELD, FIELD), name)


def generate_suite(seed: int, families=BUNDLED_FAMILIES, prefix: str = "design") -> list[Layout]:
    """One design per entry of ``families``, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    return [generate_design(fam, rng, f"{prefix}{i + 1:02d}_{fam}") for i, fam in enumerate(families)]


def training_suite(seed: int, per_family: int = 4) -> list[Layout]:
    fams = [f for f in FAMILIES for _ in range(per_family)]
    return generate_suite(seed, fams, prefix="train")


def bundled_dir() -> Path:
    return Path(str(resources.files("hopc") / "data" / "suite"))


def load_bundled() -> list[Layout]:
    """The ten bundled benchmark designs, in design-id order."""
    files = sorted(bundled_dir().glob("*.txt"))
    return [parse_layout(f.read_text()) for f in files]


def write_suite(designs, directory) -> list[Path]:
    out = []
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for layout in designs:
        path = d / f"{layout.name}.txt"
        path.write_text(format_layout(layout))
        out.append(path)
    return out
