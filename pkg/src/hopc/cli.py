"""Command line entry point: ``hopc <command> ...``.

Exit codes: 0 success, 1 input error, 2 engine failure, 3 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import suite
from .bench import (EngineFailure, EngineSetup, MODES, OracleModel, bench_report, dispatch, gap_csv,
                    label_suite, mse_gap_data, read_labels_csv, read_report_csv, write_labels_csv)
from .config import load_config
from .features import FeatureError, squish_features, write_feature_csv
from .ilt import IltDivergence, run_dual_ilt, run_ilt
from .layout import Layout, LayoutError, convert_glp, format_layout, parse_layout
from .litho import ConfigError, aerial_image, mse, write_pgm
from .mbopc import run_mbopc
from .selector import SelectorError, SelectorModel, TrainingDiverged, train_selector, training_accuracy

log = logging.getLogger("hopc")

EXIT_OK, EXIT_INPUT, EXIT_ENGINE, EXIT_CONFIG = 0, 1, 2, 3


class InputError(Exception):
    pass


def read_design(path) -> Layout:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {p}: {exc}") from None
    if p.suffix.lower() == ".glp":
        text = convert_glp(text)
    try:
        return parse_layout(text, name=p.stem)
    except LayoutError as exc:
        raise InputError(f"{p}: {exc}") from None


def collect_designs(paths) -> list[Layout]:
    """Design files and directories (``*.txt``/``*.glp``); the bundled suite if none given."""
    if not paths:
        return suite.load_bundled()
    out = []
    for path in paths:
        p = Path(path)
        if p.is_dir():
            files = sorted(f for f in p.iterdir() if f.suffix.lower() in (".txt", ".glp"))
            if not files:
                raise InputError(f"{p}: no design files")
            out.extend(read_design(f) for f in files)
        else:
            out.append(read_design(p))
    return out


def _setup(args) -> EngineSetup:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    return EngineSetup(cfg)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _summary(name, res) -> str:
    return f"{name} engine={res.engine} mse={res.mse:.1f} iterations={res.iterations} runtime={res.runtime:.3f}s"


def _write_result(prefix, res) -> None:
    if prefix:
        write_pgm(f"{prefix}_mask.pgm", res.mask.values, "mask")
        write_pgm(f"{prefix}_printed.pgm", res.printed.values, "printed")


def _engine(layout, engine, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (ConfigError, OSError):
        raise
    except Exception as exc:
        raise EngineFailure(layout.name, engine, exc) from exc


# ---------------------------------------------------------------- commands

def cmd_parse(args) -> int:
    layout = read_design(args.design)
    _emit(format_layout(layout), args.out)
    if args.out:
        print(f"{layout.name}: {len(layout.polygons)} polygons, bbox {layout.bbox}, area {layout.area():.0f} nm^2")
    return EXIT_OK


def cmd_simulate(args) -> int:
    setup = _setup(args)
    layout = read_design(args.design)
    target = setup.target(layout)
    img = aerial_image(target, setup.ctx.kernels)
    printed = setup.ctx.simulate(target, args.mode)
    if args.out_prefix:
        write_pgm(f"{args.out_prefix}_target.pgm", target.values, "mask")
        write_pgm(f"{args.out_prefix}_intensity.pgm", img.values, "intensity")
        write_pgm(f"{args.out_prefix}_printed.pgm", printed.values, "printed")
    print(f"{layout.name} grid={target.shape[1]}x{target.shape[0]} max_intensity={img.values.max():.4f} "
          f"mse={mse(printed, target):.1f}")
    return EXIT_OK


def cmd_opc_ilt(args) -> int:
    setup = _setup(args)
    layout = read_design(args.design)
    res = _engine(layout, "ILT", run_ilt, setup.target(layout), setup.cfg.ilt, setup.ctx, trace_path=args.trace)
    _write_result(args.out_prefix, res)
    print(_summary(layout.name, res))
    return EXIT_OK


def cmd_opc_mb(args) -> int:
    setup = _setup(args)
    layout = read_design(args.design)
    res = _engine(layout, "MB_OPC", run_mbopc, layout, setup.cfg.mbopc, setup.ctx, setup.grid(layout),
                  dump_dir=args.dump_dir)
    _write_result(args.out_prefix, res)
    print(_summary(layout.name, res) + f" max_epe={res.info['final_max_epe']:.2f}")
    return EXIT_OK


def cmd_opc_dual(args) -> int:
    setup = _setup(args)
    layout = read_design(args.design)
    res, mask_a, mask_b = _engine(layout, "ILT-DUAL", run_dual_ilt, setup.target(layout), setup.cfg.ilt,
                                  setup.ctx, init=args.init, trace_path=args.trace)
    _write_result(args.out_prefix, res)
    if args.out_prefix:
        write_pgm(f"{args.out_prefix}_mask_a.pgm", mask_a.values, "mask")
        write_pgm(f"{args.out_prefix}_mask_b.pgm", mask_b.values, "mask")
    print(_summary(layout.name, res) + f" objective={res.objective:.6g}")
    return EXIT_OK


def cmd_features(args) -> int:
    setup = _setup(args)
    designs = collect_designs(args.designs)
    if args.kind == "dct":
        rows = [(d.name, None, setup.features(d)) for d in designs]
    else:
        rows = [(d.name, None, squish_features(d, args.squish_dim)) for d in designs]
    if not args.out:
        raise InputError("features needs --out")
    write_feature_csv(args.out, rows)
    print(f"{len(rows)} designs, {rows[0][2].d} features ({rows[0][2].fingerprint}) -> {args.out}")
    return EXIT_OK


def cmd_label(args) -> int:
    setup = _setup(args)
    if args.generate:
        seed = args.seed if args.seed is not None else suite.TRAINING_SEED
        designs = suite.training_suite(seed, args.generate)
    else:
        designs = collect_designs(args.designs)
    data = label_suite(designs, setup, args.jobs)
    write_labels_csv(args.out, data)
    n_ilt = sum(1 for d in data if d.label.value == "ILT")
    print(f"{len(data)} designs labeled ({n_ilt} ILT, {len(data) - n_ilt} MB_OPC) -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    setup = _setup(args)
    try:
        data = read_labels_csv(args.labels)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from None
    model = train_selector(data, setup.cfg.train)
    model.save(args.out)
    print(f"trained on {len(data)} designs, training accuracy {training_accuracy(model, data):.3f} -> {args.out}")
    return EXIT_OK


def _load_model(path) -> SelectorModel:
    try:
        return SelectorModel.load(path)
    except OSError as exc:
        raise InputError(f"cannot read model {path}: {exc}") from None


def cmd_dispatch(args) -> int:
    setup = _setup(args)
    layout = read_design(args.design)
    d = dispatch(layout, _load_model(args.model), setup)
    _write_result(args.out_prefix, d.result)
    print(_summary(layout.name, d.result) + f" chosen={d.choice} predict_time={d.predict_time * 1e3:.2f}ms")
    return EXIT_OK


def cmd_bench(args) -> int:
    setup = _setup(args)
    designs = collect_designs(args.designs)
    model = None
    if args.model:
        model = _load_model(args.model)
    elif args.labels:
        model = OracleModel({ld.design_id: ld.label for ld in read_labels_csv(args.labels)})
    mode = args.mode or ("predicted" if model is not None else "both-engines")
    report = bench_report(designs, model, setup, mode, jobs=args.jobs, fixed_time=args.fixed_time)
    _emit(report.to_csv(), args.out)
    if args.gap:
        Path(args.gap).write_text(gap_csv(mse_gap_data(report)))
    return EXIT_OK


def cmd_gap(args) -> int:
    try:
        report = read_report_csv(Path(args.report).read_text())
    except OSError as exc:
        raise InputError(f"cannot read report {args.report}: {exc}") from None
    _emit(gap_csv(mse_gap_data(report)), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # sub-commands repeat the global flags; SUPPRESS keeps them from resetting values given earlier
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", help="INI config file", **kw)
    g.add_argument("--jobs", type=int, help="designs processed concurrently", **(kw or {"default": 1}))
    g.add_argument("--seed", type=int, help="seed for training and generated designs", **kw)
    g.add_argument("--fixed-time", action="store_true", help="report iteration counts instead of seconds", **kw)
    g.add_argument("-v", "--verbose", action="store_true", **kw)
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="hopc", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=func)
        return sp

    sp = add("parse", cmd_parse, "parse and normalize a design (.txt or .glp)")
    sp.add_argument("design")
    sp.add_argument("--out", help="write normalized layout text here")

    sp = add("simulate", cmd_simulate, "simulate the drawn design as its own mask")
    sp.add_argument("design")
    sp.add_argument("--mode", choices=("hard", "relaxed"), default="hard")
    sp.add_argument("--out-prefix", help="write <prefix>_target/_intensity/_printed.pgm")

    for name, func, help_ in (("opc-ilt", cmd_opc_ilt, "pixel ILT"), ("opc-dual", cmd_opc_dual, "two-exposure ILT")):
        sp = add(name, func, help_)
        sp.add_argument("design")
        sp.add_argument("--out-prefix")
        sp.add_argument("--trace", help="objective trace CSV")
        if name == "opc-dual":
            sp.add_argument("--init", choices=("warm", "decompose"), default="warm")

    sp = add("opc-mb", cmd_opc_mb, "model-based OPC")
    sp.add_argument("design")
    sp.add_argument("--out-prefix")
    sp.add_argument("--dump-dir", help="per-iteration fragment CSVs")

    sp = add("features", cmd_features, "export design features as CSV")
    sp.add_argument("designs", nargs="*")
    sp.add_argument("--kind", choices=("dct", "squish"), default="dct")
    sp.add_argument("--squish-dim", type=int, default=16)
    sp.add_argument("--out")

    sp = add("label", cmd_label, "run both engines and label designs with the better one")
    sp.add_argument("designs", nargs="*")
    sp.add_argument("--generate", type=int, metavar="N", help="label N generated designs per family instead")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train the engine selector")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)

    sp = add("dispatch", cmd_dispatch, "pick an engine with the selector and run it")
    sp.add_argument("design")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out-prefix")

    sp = add("bench", cmd_bench, "per-design MSE/runtime report")
    sp.add_argument("designs", nargs="*")
    sp.add_argument("--mode", choices=MODES)
    sp.add_argument("--model", help="selector model file (predicted mode by default)")
    sp.add_argument("--labels", help="labels CSV used as an oracle model")
    sp.add_argument("--out")
    sp.add_argument("--gap", help="also write the MSE gap table here")

    sp = add("gap", cmd_gap, "MSE gap table from a bench report")
    sp.add_argument("report")
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EngineFailure, IltDivergence, TrainingDiverged) as exc:
        print(f"engine failure: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except SelectorError as exc:
        print(f"selector error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, LayoutError, FeatureError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
