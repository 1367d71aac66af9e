"""Heterogeneous dispatch and the per-design benchmark report."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import RunConfig
from .features import FeatureVector, design_features
from .ilt import OpcResult, run_ilt
from .layout import GridConfig, Layout, MaskGrid, rasterize
from .litho import LithoContext
from .mbopc import run_mbopc
from .selector import EngineChoice, LabeledDesign, label_from_mse

log = logging.getLogger(__name__)

MODES = ("predicted", "oracle", "both-engines")


class EngineFailure(RuntimeError):
    def __init__(self, design_id: str, engine: EngineChoice, cause: BaseException):
        super().__init__(f"{engine} failed on design {design_id}: {cause}")
        self.design_id = design_id
        self.engine = engine
        self.cause = cause


@dataclass
class EngineSetup:
    """Everything an engine run needs besides the design itself."""

    cfg: RunConfig = field(default_factory=RunConfig)
    ctx: LithoContext | None = None

    def __post_init__(self):
        if self.ctx is None:
            self.ctx = self.cfg.litho_context()

    def grid(self, layout: Layout) -> GridConfig:
        return GridConfig.for_layout(layout, self.cfg.grid.pitch, self.cfg.grid.halo)

    def target(self, layout: Layout) -> MaskGrid:
        return rasterize(layout, self.grid(layout), binary=True)

    def features(self, layout: Layout) -> FeatureVector:
        f = self.cfg.features
        return design_features(layout, self.cfg.grid.pitch, f.keep, f.blocks)


def run_engine(layout: Layout, engine: EngineChoice, setup: EngineSetup) -> OpcResult:
    try:
        if engine == EngineChoice.ILT:
            return run_ilt(setup.target(layout), setup.cfg.ilt, setup.ctx)
        grid = setup.grid(layout)
        return run_mbopc(layout, setup.cfg.mbopc, setup.ctx, grid)
    except Exception as exc:
        raise EngineFailure(layout.name, engine, exc) from exc


# ---------------------------------------------------------------- models

@dataclass(frozen=True)
class ConstantModel:
    choice: EngineChoice
    needs_features = False

    def choose(self, design_id: str, fv) -> EngineChoice:
        return self.choice


@dataclass(frozen=True)
class OracleModel:
    """Reads precomputed labels; the upper bound any selector can reach."""

    labels: Mapping[str, EngineChoice]
    needs_features = False

    def choose(self, design_id: str, fv) -> EngineChoice:
        try:
            return self.labels[design_id]
        except KeyError:
            raise KeyError(f"oracle has no label for design {design_id}") from None


def _needs_features(model) -> bool:
    return getattr(model, "needs_features", True)


@dataclass
class Dispatch:
    result: OpcResult
    choice: EngineChoice
    predict_time: float


def dispatch(design: Layout, model, setup: EngineSetup) -> Dispatch:
    """Predict an engine for the design and run only that engine."""
    t0 = time.perf_counter()
    fv = setup.features(design) if _needs_features(model) else None
    choice = model.choose(design.name, fv)
    predict_time = time.perf_counter() - t0
    result = run_engine(design, choice, setup)
    return Dispatch(result, choice, predict_time)


# ---------------------------------------------------------------- report

@dataclass
class BenchRow:
    design: str
    mse_mb: float = math.nan
    time_mb: float = math.nan
    mse_ilt: float = math.nan
    time_ilt: float = math.nan
    mse_hopc: float = math.nan
    time_hopc: float = math.nan
    chosen: EngineChoice | None = None
    oracle: EngineChoice | None = None
    predict_time: float = 0.0
    error: str | None = None

    @property
    def correct(self) -> bool | None:
        if self.chosen is None or self.oracle is None:
            return None
        return self.chosen == self.oracle


NUMERIC = ("mse_mb", "time_mb", "mse_ilt", "time_ilt", "mse_hopc", "time_hopc")


@dataclass
class BenchReport:
    rows: list
    mode: str
    fixed_time: bool = False

    def ok_rows(self) -> list:
        return [r for r in self.rows if r.error is None]

    def averages(self) -> dict:
        out = {}
        for col in NUMERIC:
            vals = [getattr(r, col) for r in self.ok_rows()]
            vals = [v for v in vals if not math.isnan(v)]
            out[col] = float(np.mean(vals)) if vals else math.nan
        return out

    def ratios(self) -> dict:
        avg = self.averages()
        out = {}
        for kind in ("mse", "time"):
            ref = avg[f"{kind}_hopc"]
            for eng in ("mb", "ilt"):
                v = avg[f"{kind}_{eng}"]
                out[f"{kind}_{eng}"] = v / ref if ref and not math.isnan(v) else math.nan
            out[f"{kind}_hopc"] = 1.0
        return out

    def matches(self) -> int:
        return sum(1 for r in self.ok_rows() if r.correct)

    def to_csv(self) -> str:
        def num(v, fmt):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, fmt)

        tfmt = "d" if self.fixed_time else ".3f"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["design", "mse_mb", "time_mb", "mse_ilt", "time_ilt", "mse_hopc", "time_hopc",
                    "chosen", "oracle", "correct"])
        for r in self.rows:
            if r.error is not None:
                w.writerow([r.design] + [""] * 6 + ["", "", f"error: {r.error}"])
                continue
            times = [r.time_mb, r.time_ilt, r.time_hopc]
            if self.fixed_time:
                times = [None if math.isnan(t) else int(t) for t in times]
            correct = {None: "", True: "yes", False: "no"}[r.correct]
            w.writerow([r.design, num(r.mse_mb, ".1f"), num(times[0], tfmt), num(r.mse_ilt, ".1f"),
                        num(times[1], tfmt), num(r.mse_hopc, ".1f"), num(times[2], tfmt),
                        r.chosen or "", r.oracle or "", correct])
        avg, rat = self.averages(), self.ratios()
        judged = [r for r in self.ok_rows() if r.correct is not None]
        score = f"{self.matches()}/{len(judged)}" if judged else ""
        w.writerow(["Avg."] + [num(avg[c], ".2f") for c in NUMERIC] + ["", "", score])
        w.writerow(["Ratio"] + [num(rat[c], ".4f") for c in NUMERIC] + ["", "", ""])
        return buf.getvalue()


def _time_of(result: OpcResult, fixed_time: bool) -> float:
    return float(result.iterations) if fixed_time else float(result.runtime)


def _bench_one(design: Layout, model, setup: EngineSetup, mode: str, fixed_time: bool) -> BenchRow:
    row = BenchRow(design.name)
    try:
        if mode == "predicted":
            d = dispatch(design, model, setup)
            row.chosen = d.choice
            row.predict_time = d.predict_time
            row.mse_hopc = float(d.result.mse)
            row.time_hopc = _time_of(d.result, fixed_time)
            return row
        mb = run_engine(design, EngineChoice.MB_OPC, setup)
        ilt = run_engine(design, EngineChoice.ILT, setup)
    except EngineFailure as exc:
        log.warning("%s", exc)
        row.error = str(exc)
        return row
    row.mse_mb, row.time_mb = float(mb.mse), _time_of(mb, fixed_time)
    row.mse_ilt, row.time_ilt = float(ilt.mse), _time_of(ilt, fixed_time)
    row.oracle = label_from_mse(row.mse_mb, row.mse_ilt)
    if mode == "oracle" or model is None:
        row.chosen = row.oracle
    else:
        t0 = time.perf_counter()
        fv = setup.features(design) if _needs_features(model) else None
        row.chosen = model.choose(design.name, fv)
        row.predict_time = time.perf_counter() - t0
    src = mb if row.chosen == EngineChoice.MB_OPC else ilt
    row.mse_hopc, row.time_hopc = float(src.mse), _time_of(src, fixed_time)
    return row


def bench_report(designs: Sequence[Layout], model, setup: EngineSetup, mode: str = "both-engines",
                 jobs: int = 1, fixed_time: bool = False) -> BenchReport:
    """Run the chosen engines on every design and assemble the report in input order."""
    if mode not in MODES:
        raise ValueError(f"unknown bench mode {mode!r}")
    if not designs:
        raise ValueError("bench needs at least one design")
    if mode == "predicted" and model is None:
        raise ValueError("predicted mode needs a model")
    work: Callable[[Layout], BenchRow] = lambda d: _bench_one(d, model, setup, mode, fixed_time)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(work, designs))
    else:
        rows = [work(d) for d in designs]
    return BenchReport(rows, mode, fixed_time)


def mse_gap_data(report: BenchReport) -> list[tuple[str, float, float]]:
    """(design, mse_mb, mse_ilt) per design, straight from the report columns."""
    out = []
    for r in report.ok_rows():
        if math.isnan(r.mse_mb) or math.isnan(r.mse_ilt):
            raise ValueError(f"design {r.design}: report lacks one engine's MSE (run both-engines or oracle mode)")
        out.append((r.design, r.mse_mb, r.mse_ilt))
    return out


def gap_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["design", "mse_mb", "mse_ilt"])
    for name, mb, ilt in rows:
        w.writerow([name, format(mb, ".1f"), format(ilt, ".1f")])
    return buf.getvalue()


def read_report_csv(text: str) -> BenchReport:
    """Parse a report back (averages and ratio rows are recomputed, not read)."""
    rows = []
    fixed = True
    for rec in csv.DictReader(io.StringIO(text)):
        if rec["design"] in ("Avg.", "Ratio"):
            continue
        if rec["correct"].startswith("error:"):
            rows.append(BenchRow(rec["design"], error=rec["correct"][7:]))
            continue
        vals = {}
        for c in NUMERIC:
            vals[c] = float(rec[c]) if rec[c] else math.nan
            if c.startswith("time") and rec[c] and "." in rec[c]:
                fixed = False
        rows.append(BenchRow(rec["design"], **vals,
                             chosen=EngineChoice.parse(rec["chosen"]) if rec["chosen"] else None,
                             oracle=EngineChoice.parse(rec["oracle"]) if rec["oracle"] else None))
    return BenchReport(rows, "parsed", fixed)


# ---------------------------------------------------------------- training data

def label_suite(designs: Sequence[Layout], setup: EngineSetup, jobs: int = 1) -> list[LabeledDesign]:
    """Run both engines on every design and label it with the better one."""
    def one(layout):
        mb = run_engine(layout, EngineChoice.MB_OPC, setup)
        ilt = run_engine(layout, EngineChoice.ILT, setup)
        return LabeledDesign(layout.name, setup.features(layout), label_from_mse(mb.mse, ilt.mse),
                             float(mb.mse), float(ilt.mse))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, designs))
    return [one(d) for d in designs]


def write_labels_csv(path, data: Sequence[LabeledDesign]) -> None:
    d = data[0].features.d if data else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["design", "label", "mse_mb", "mse_ilt", "fingerprint"] + [f"f{i}" for i in range(d)])
        for ld in data:
            w.writerow([ld.design_id, ld.label.value, repr(ld.mse_mb), repr(ld.mse_ilt), ld.features.fingerprint]
                       + [repr(float(v)) for v in ld.features.values])


def read_labels_csv(path) -> list[LabeledDesign]:
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if not header or header[:5] != ["design", "label", "mse_mb", "mse_ilt", "fingerprint"]:
            raise ValueError(f"{path}: not a labels file")
        for row in r:
            fv = FeatureVector(np.array([float(v) for v in row[5:]]), row[4].split(":", 1)[0], row[4])
            out.append(LabeledDesign(row[0], fv, EngineChoice.parse(row[1]), float(row[2]), float(row[3])))
    return out

