"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The bundled suite is run once at the production configuration (8 nm pixels)
and shared between the criteria that need engine results.
"""

import itertools
import shutil
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from hopc.bench import EngineSetup, bench_report, label_suite
from hopc.config import RunConfig
from hopc.features import select_circles, squish_scale
from hopc.ilt import ilt_gradient, ilt_objective, run_dual_ilt, run_ilt
from hopc.layout import GridConfig, parse_layout, rasterize
from hopc.litho import aerial_image, mse
from hopc.mbopc import run_mbopc
from hopc.selector import EngineChoice, auc_pairwise_loss, bbl_bias, train_selector
from hopc.suite import TRAINING_SEED, load_bundled, training_suite
from oracles import compositions, direct_intensity

JOBS = 4


@pytest.fixture(scope="module")
def setup():
    return EngineSetup(RunConfig())


@pytest.fixture(scope="module")
def bundled():
    return load_bundled()


@pytest.fixture(scope="module")
def runs(setup, bundled):
    """Serial ILT and MB-OPC runs (their runtimes are compared), then dual ILT in parallel."""
    out = []
    for layout in bundled:
        target = setup.target(layout)
        ilt = run_ilt(target, setup.cfg.ilt, setup.ctx)
        mb = run_mbopc(layout, setup.cfg.mbopc, setup.ctx, setup.grid(layout))
        base = mse(setup.ctx.simulate(target.values, "hard"), target)
        out.append(dict(name=layout.name, target=target, ilt=ilt, mb=mb, base=base))

    def dual(row):
        return run_dual_ilt(row["target"], setup.cfg.ilt, setup.ctx, warm_start=row["ilt"])[0]
    with ThreadPoolExecutor(max_workers=JOBS) as pool:
        for row, res in zip(out, pool.map(dual, out)):
            row["dual"] = res
    return out


@pytest.fixture(scope="module")
def oracle_report(setup, bundled):
    return bench_report(bundled, None, setup, "oracle", jobs=JOBS, fixed_time=True)


# ---------------------------------------------------------------- 1, 2

def test_01_gradient_correctness(coarse_ctx, verdict):
    t0 = time.perf_counter()
    worst = 0.0
    h = 1e-5
    for seed in range(3):
        rng = np.random.default_rng(seed)
        target = (rng.random((16, 16)) > 0.5).astype(float)
        p = rng.normal(scale=0.5, size=(16, 16))
        g = ilt_gradient(p, target, coarse_ctx)
        for r, c in rng.integers(0, 16, size=(20, 2)):
            e = np.zeros_like(p)
            e[r, c] = h
            fd = (ilt_objective(p + e, target, coarse_ctx) - ilt_objective(p - e, target, coarse_ctx)) / (2 * h)
            worst = max(worst, abs(fd - g[r, c]) / max(abs(fd), abs(g[r, c]), 1e-8))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 5.0
    assert verdict(1, "ILT gradient vs central differences", ok,
                   f"max rel err {worst:.2e} over 60 coords, {elapsed:.2f} s")


def test_02_convolution_oracle(ctx8, verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    t0 = time.perf_counter()
    for m in (rng.random((64, 64)), (rng.random((64, 64)) > 0.5).astype(float)):
        got = aerial_image(m, ctx8.kernels).values
        ks = ctx8.kernels
        ref = direct_intensity(m, ks.kernels, ks.weights, ks.scale)
        worst = max(worst, np.abs(got - ref).max() / np.abs(ref).max())
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and elapsed < 10.0
    assert verdict(2, "FFT imaging vs direct convolution", ok,
                   f"rel err {worst:.2e} on 64x64 with {ks.kernels.shape[1]}px kernels, {elapsed:.2f} s")


# ---------------------------------------------------------------- 3, 4, 5

def test_03_ilt_progress(runs, setup, verdict):
    monotone = sum(all(b[1] <= a[1] for a, b in zip(r["ilt"].trace, r["ilt"].trace[1:])) for r in runs)
    better = sum(r["ilt"].mse < r["base"] for r in runs)
    # a 4096 nm field at 8 nm pixels: 512x512
    big = parse_layout("DESIGN big\nBBOX 0 0 4096 4096\n" + "".join(
        f"RECT {x} {y} {x + 144} {y + 144}\n" for x in range(512, 3584, 512) for y in range(512, 3584, 512))
        + "RECT 600 3700 3500 3780\n")
    target = rasterize(big, GridConfig.for_layout(big, 8), binary=True)
    t0 = time.perf_counter()
    res = run_ilt(target, setup.cfg.ilt, setup.ctx)
    elapsed = time.perf_counter() - t0
    ok = monotone == len(runs) and better >= 9 and target.shape == (512, 512) and elapsed < 60.0
    assert verdict(3, "ILT progress", ok,
                   f"monotone traces {monotone}/{len(runs)}, beats target-as-mask {better}/{len(runs)}, "
                   f"512x512 x {res.iterations} iters in {elapsed:.1f} s")


def test_04_dual_dominance(runs, verdict):
    ok_count = sum(r["dual"].objective <= r["ilt"].objective + 1e-9 for r in runs)
    gain = np.median([r["ilt"].objective - r["dual"].objective for r in runs])
    assert verdict(4, "dual-mask dominance", ok_count >= 9,
                   f"dual <= single + 1e-9 on {ok_count}/{len(runs)}, median objective drop {gain:.3g}")


def test_05_mbopc_progress(runs, verdict):
    improved = sum(r["mb"].info["final_max_epe"] < r["mb"].info["initial_max_epe"] for r in runs)
    t_mb = float(np.median([r["mb"].runtime for r in runs]))
    t_ilt = float(np.median([r["ilt"].runtime for r in runs]))
    ok = improved >= 8 and t_mb < t_ilt
    assert verdict(5, "MB-OPC progress", ok,
                   f"max EPE reduced on {improved}/{len(runs)}, median runtime MB {t_mb:.2f} s vs ILT {t_ilt:.2f} s")


# ---------------------------------------------------------------- 6, 7

def test_06_oracle_identity(oracle_report, verdict):
    rows = oracle_report.ok_rows()
    exact = sum(r.mse_hopc == min(r.mse_mb, r.mse_ilt) for r in rows)
    rat = oracle_report.ratios()
    ok = (exact == len(rows) == 10 and rat["mse_hopc"] == 1.0 and rat["mse_mb"] >= 1.0
          and rat["mse_ilt"] >= 1.0)
    assert verdict(6, "oracle dispatch identity", ok,
                   f"H-OPC = min on {exact}/{len(rows)}, ratios MB {rat['mse_mb']:.2f} / "
                   f"ILT {rat['mse_ilt']:.2f} / H-OPC {rat['mse_hopc']:.2f}")


def test_07_predicted_dispatch(setup, bundled, runs, oracle_report, verdict):
    data = label_suite(training_suite(TRAINING_SEED, 4), setup, jobs=JOBS)
    model = train_selector(data, setup.cfg.train)
    hits, predict_time, engine_time = 0, 0.0, 0.0
    seconds = {(r["name"], EngineChoice.MB_OPC): r["mb"].runtime for r in runs}
    seconds.update({(r["name"], EngineChoice.ILT): r["ilt"].runtime for r in runs})
    for layout, row in zip(bundled, oracle_report.rows):
        t0 = time.perf_counter()
        choice = model.choose(layout.name, setup.features(layout))
        predict_time += time.perf_counter() - t0
        engine_time += seconds[(layout.name, choice)]
        hits += choice == row.oracle
    overhead = predict_time / engine_time
    ok = hits >= 8 and overhead < 0.01
    assert verdict(7, "predicted dispatch", ok,
                   f"matches oracle on {hits}/{len(bundled)}, prediction {predict_time * 1e3:.1f} ms = "
                   f"{overhead:.3%} of {engine_time:.1f} s dispatched engine time")


# ---------------------------------------------------------------- 8, 9, 10

def test_08_circle_selection(verdict):
    rng = np.random.default_rng(2013)
    agree = 0
    for _ in range(100):
        a = rng.normal(size=(10, 10))
        M = (a + a.T) / 2
        k = int(rng.integers(1, 10))
        g = select_circles(M, k, method="greedy")
        e = select_circles(M, k, method="exhaustive")
        agree += abs(g.value - e.value) <= 1e-9 * max(1.0, abs(e.value))
    assert verdict(8, "circle selection greedy+swap vs exhaustive", agree >= 95, f"{agree}/100 agree")


def test_09_squish_scaling(verdict):
    # distinct ratios p/q with p <= 9, q <= 12 differ by far more than one ulp,
    # so float comparison of correctly rounded quotients is exact here
    t0 = time.perf_counter()
    cases = mismatches = 0
    for n in range(1, 5):
        deltas = list(itertools.product(range(1, 10), repeat=n))
        D = np.array(deltas, dtype=float)
        for d in range(n, 13):
            S = np.array(list(compositions(d, n)), dtype=float)
            best = (D[:, None, :] / S[None, :, :]).max(axis=2).min(axis=1)
            for delta, b in zip(deltas, best):
                s = squish_scale(delta, d)
                cases += 1
                mismatches += sum(s) != d or max(x / y for x, y in zip(delta, s)) != b
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30.0
    assert verdict(9, "squish scaling optimality", ok,
                   f"{mismatches} mismatches in {cases} cases (n <= 4, d <= 12), {elapsed:.1f} s")


def test_10_closed_forms(verdict):
    rng = np.random.default_rng(10)
    shift = 0.0
    for _ in range(50):
        pos, neg = rng.normal(size=4), rng.normal(size=5)
        c = rng.uniform(-50, 50)
        for kind in ("logistic", "squared-hinge"):
            shift = max(shift, abs(auc_pairwise_loss(pos + c, neg + c, kind) - auc_pairwise_loss(pos, neg, kind)))
    checks = {
        "bbl(0)=0.5": all(bbl_bias(0.0, b) == 0.5 for b in (0.1, 1.0, 8.0, 1e6)),
        "bbl(l>0.3)=0": all(bbl_bias(l, b) == 0.0 for l in (0.3000001, 0.5, 7.0) for b in (0.1, 8.0)),
        "shift<1e-12": shift < 1e-12,
        "hinge(0)=1": auc_pairwise_loss([0.7], [0.7], "squared-hinge") == 1.0,
    }
    failed = [k for k, v in checks.items() if not v]
    assert verdict(10, "closed-form utilities", not failed,
                   f"max shift drift {shift:.1e}; " + ("all exact" if not failed else "failed: " + ", ".join(failed)))


# ---------------------------------------------------------------- 11

def test_11_determinism(tmp_path, verdict):
    exe = shutil.which("hopc")
    cmd = ([exe] if exe else [sys.executable, "-m", "hopc.cli"]) + ["bench", "--fixed-time", "--seed", "7"]
    outs = [subprocess.run(cmd, capture_output=True, cwd=tmp_path) for _ in range(2)]
    codes = [o.returncode for o in outs]
    same = outs[0].stdout == outs[1].stdout
    ok = codes == [0, 0] and same and outs[0].stdout.count(b"\n") == 13
    assert verdict(11, "deterministic bench output", ok,
                   f"exit codes {codes}, {len(outs[0].stdout)} bytes, identical={same}")
