"""Command-line entry point: ``nspod generate|train|refine|report|plot``."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import OUT_ENV, ConfigError, load_config, preset_names
from .data import GENERATORS, Grid, SnapshotFormatError, generate, save_snapshot, save_snapshot_csv
from .experiments import REFINED_NAME, load_data, refine_result, run_training
from .metrics import load_result, report_csv, report_rows, report_table, save_result
from .optim import TrainingDiverged
from .plots import write_plots

log = logging.getLogger("nspod")

EXIT_OK = 0
EXIT_USAGE = 2  # argparse's own code for bad command lines
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_DIVERGED = 5
EXIT_IO = 6


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _grid_from_args(args, name: str) -> Grid:
    base = GENERATORS[name][1].to_dict()
    for key in ("M", "N", "x_min", "x_max", "t_min", "t_max"):
        value = getattr(args, key)
        if value is not None:
            base[key] = value
    try:
        return Grid(**base)
    except ValueError as exc:
        raise CliError(f"invalid grid: {exc}", EXIT_USAGE) from None


def cmd_generate(args) -> int:
    if args.name not in GENERATORS:
        raise CliError(f"unknown generator {args.name!r}; available: {', '.join(sorted(GENERATORS))}",
                       EXIT_USAGE)
    snap = generate(args.name, _grid_from_args(args, args.name))
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        (save_snapshot_csv if out.suffix == ".csv" else save_snapshot)(out, snap)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from None
    g = snap.grid
    print(f"{args.name}: M={g.M} N={g.N} x=[{g.x_min:g}, {g.x_max:g}] t=[{g.t_min:g}, {g.t_max:g}] "
          f"||Q||_F={np.linalg.norm(snap.values):.6e} -> {out}")
    return EXIT_OK


def _experiment(args):
    try:
        cfg = load_config(args.config, data_source=getattr(args, "data", None))
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    tcfg = cfg.training
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if args.threads is not None:
        tcfg = replace(tcfg, threads=args.threads)
    if getattr(args, "max_epochs", None) is not None:
        tcfg = replace(tcfg, max_epochs=args.max_epochs)
    try:
        tcfg.validate()
    except ValueError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    cfg.training = tcfg
    return cfg, cfg.output_dir(args.out)


def cmd_train(args) -> int:
    cfg, out = _experiment(args)
    try:
        Q = load_data(cfg)
    except (SnapshotFormatError, OSError) as exc:
        raise CliError(f"data error: {exc}", EXIT_DATA) from None
    try:
        run = run_training(Q, cfg.training, out, checkpoints=args.checkpoints)
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc}", EXIT_IO) from None
    res = run.result
    print(f"{cfg.name}: stop={run.trace.stop_reason} epochs={len(run.trace.history)} "
          f"E_rec={res.e_rec:.4e} ranks={tuple(res.ranks)} (rank threshold {res.rank_tol:g}) -> {out}")
    if cfg.output.plots and not args.no_plots:
        write_plots(res, out / "plots")
    if cfg.refine.enabled and run.trace.stop_reason != "divergence":
        _refine_and_save(cfg, res, cfg.refine.ranks, out, plots=cfg.output.plots and not args.no_plots)
    if run.trace.stop_reason == "divergence":
        print("training diverged; the last finite parameters were kept", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_refine(args) -> int:
    cfg, out = _experiment(args)
    try:
        res = load_result(args.result)
    except (ValueError, OSError) as exc:
        raise CliError(f"data error: cannot read result {args.result}: {exc}", EXIT_DATA) from None
    ranks = tuple(args.ranks) if args.ranks else cfg.refine.ranks
    if ranks is not None and len(ranks) != res.K:
        raise CliError(f"config error: {len(ranks)} ranks given for K={res.K}", EXIT_CONFIG)
    _refine_and_save(cfg, res, ranks, out, plots=cfg.output.plots and not args.no_plots)
    return EXIT_OK


def _refine_and_save(cfg, res, ranks, out: Path, plots: bool):
    lam = cfg.refine.lam if cfg.refine.lam is not None else cfg.training.lam
    refined, report = refine_result(res, lam, cfg.refine.max_iter, cfg.refine.rel_stop, ranks,
                                    cfg.refine.backtracking)
    path = out / REFINED_NAME
    try:
        out.mkdir(parents=True, exist_ok=True)
        save_result(path, refined)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from None
    flag = "" if refined.info["improved"] else "  (no improvement)"
    print(f"refine: E_rec {res.e_rec:.4e} -> {refined.e_rec:.4e}{flag}  iterations={report.iterations_run} "
          f"converged={report.converged} ranks={tuple(refined.ranks)} (rank threshold {refined.rank_tol:g}) -> {path}")
    if plots:
        write_plots(refined, out / "plots_refined")
    return refined


def cmd_report(args) -> int:
    results = []
    for p in args.results:
        try:
            results.append(load_result(p))
        except (ValueError, OSError) as exc:
            raise CliError(f"data error: cannot read result {p}: {exc}", EXIT_DATA) from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = report_rows(results, ids=[str(p) for p in args.results])
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    sys.stdout.write(report_table(rows))
    if args.csv:
        Path(args.csv).write_text(report_csv(rows))
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        res = load_result(args.result)
    except (ValueError, OSError) as exc:
        raise CliError(f"data error: cannot read result {args.result}: {exc}", EXIT_DATA) from None
    try:
        written = write_plots(res, args.out)
    except OSError as exc:
        raise CliError(f"cannot write plots to {args.out}: {exc}", EXIT_IO) from None
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="nspod", description="Neural shifted POD: transport-separating "
                                "low-rank decompositions of snapshot matrices.", formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a builtin snapshot matrix", formatter_class=fmt)
    g.add_argument("name", help=f"generator: {', '.join(sorted(GENERATORS))}")
    g.add_argument("--out", required=True, help="output file (.csv for CSV, anything else for binary)")
    for key, kind in (("M", int), ("N", int), ("x_min", float), ("x_max", float), ("t_min", float),
                      ("t_max", float)):
        g.add_argument(f"--{key.replace('_', '-')}", dest=key, type=kind, default=None,
                       help=f"override the generator's default {key}")
    g.set_defaults(func=cmd_generate)

    def experiment_flags(sp):
        sp.add_argument("--config", required=True,
                        help=f"INI file or bundled preset ({', '.join(preset_names())})")
        sp.add_argument("--seed", type=int, default=None, help="override training.seed")
        sp.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV}, else output.dir)")
        sp.add_argument("--threads", type=int, default=None, help="override training.threads")
        sp.add_argument("--no-plots", action="store_true", help="skip image output")
        sp.add_argument("--data", default=None, help="override data.source (generator name or snapshot file)")

    t = sub.add_parser("train", help="train shape and shift networks", formatter_class=fmt)
    experiment_flags(t)
    t.add_argument("--max-epochs", type=int, default=None, help="override training.max_epochs")
    t.add_argument("--checkpoints", action="store_true",
                   help="write a checkpoint every training.checkpoint_every epochs")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("refine", help="fixed-shift refinement of a result", formatter_class=fmt)
    r.add_argument("result", help="result file written by train")
    experiment_flags(r)
    r.add_argument("--ranks", type=int, nargs="+", default=None, help="prescribed rank per frame")
    r.set_defaults(func=cmd_refine)

    rp = sub.add_parser("report", help="tabulate result files", formatter_class=fmt)
    rp.add_argument("results", nargs="+")
    rp.add_argument("--csv", default=None, help="also write the table as CSV")
    rp.set_defaults(func=cmd_report)

    pl = sub.add_parser("plot", help="heatmaps and shift curves of a result", formatter_class=fmt)
    pl.add_argument("result")
    pl.add_argument("--out", required=True, help="output directory")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"nspod {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except TrainingDiverged as exc:
        print(f"nspod {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
