"""Experiment plumbing shared by the command line and the scripts:
training runs that write result files, refinement of a result, seed sweeps
and the pretrain-then-train flow."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import SnapshotMatrix, generate, load_snapshot
from .loss import evaluate_loss
from .metrics import DecompositionResult, report_rows, report_table, save_result
from .model import ShiftModel, save_checkpoint, shift_forward
from .optim import TrainingConfig, train
from .refine import refine_fields, shift_operator, transport_shifts

log = logging.getLogger(__name__)

RESULT_NAME = "result.nspod"
REFINED_NAME = "refined.nspod"
CHECKPOINT_NAME = "model.ckpt"
TRACE_NAME = "trace.csv"


def load_data(cfg: ExperimentConfig) -> SnapshotMatrix:
    if cfg.data.is_file:
        return load_snapshot(cfg.data.source)
    return generate(cfg.data.source, cfg.grid())


def decompose(Q: SnapshotMatrix, shape, shift, **meta) -> DecompositionResult:
    """Evaluate trained models on the grid of ``Q`` and package the result."""
    _, transformed, fields = evaluate_loss(Q, shape, shift, lam=0.0)
    shifts = transport_shifts(shift_forward(shift, Q.grid.t).T)
    return DecompositionResult(Q, fields, transformed, shifts, provenance="nspod", **meta)


@dataclass
class TrainingRun:
    result: DecompositionResult
    trace: object
    shape: object
    shift: object


def run_training(Q: SnapshotMatrix, tcfg: TrainingConfig, out_dir=None, shift=None,
                 checkpoints: bool = False, callback=None) -> TrainingRun:
    """Train, then write checkpoint, trace and result into ``out_dir`` (if given).

    The result file holds no timings, so equal inputs give equal bytes.
    """
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    shape, shift, trace = train(Q, tcfg, shift=shift, checkpoint_dir=out_dir if checkpoints else None,
                                callback=callback)
    info = dict(epochs=len(trace.history), stop_reason=trace.stop_reason, best_epoch=trace.best_epoch,
                best_loss=trace.best_loss)
    result = decompose(Q, shape, shift, seed=tcfg.seed, n_iter=len(trace.history), config=tcfg.to_dict(),
                       info=info)
    if out_dir is not None:
        save_checkpoint(out_dir / CHECKPOINT_NAME, shape, shift, tcfg.seed, extra=dict(config=tcfg.to_dict()))
        trace.write_csv(out_dir / TRACE_NAME)
        save_result(out_dir / RESULT_NAME, result)
    return TrainingRun(result, trace, shape, shift)


def refine_result(result: DecompositionResult, lam: float, max_iter: int = 2000, rel_stop: float = 1e-8,
                  ranks=None, backtracking: bool = False):
    """Fixed-shift cleanup of a decomposition, warm-started from its fields.

    Returns (refined result, RefineReport). ``ranks`` are recorded as the
    prescribed ranks of the refined result.
    """
    fields, report = refine_fields(result.snapshot, result.shifts, result.fields, lam, max_iter=max_iter,
                                   rel_stop=rel_stop, ranks=ranks, rank_tol=result.rank_tol,
                                   backtracking=backtracking)
    transformed = np.stack([shift_operator(f, s, result.snapshot.grid) for f, s in zip(fields, result.shifts)])
    info = dict(result.info, refine=report.to_dict(), input_e_rec=result.e_rec)
    refined = replace(result, fields=fields, transformed=transformed, provenance="refined",
                      n_iter=report.iterations_run, prescribed_ranks=list(ranks) if ranks is not None else None,
                      info=info)
    if refined.e_rec > result.e_rec:
        log.warning("refinement did not improve E_rec (%.3e -> %.3e)", result.e_rec, refined.e_rec)
        refined.info["improved"] = False
    else:
        refined.info["improved"] = True
    return refined, report


# ------------------------------------------------------------------ sweeps

@dataclass
class SweepEntry:
    seed: int
    result: DecompositionResult
    success: bool


def is_success(result: DecompositionResult, max_e_rec: float, max_ranks=None) -> bool:
    if not result.e_rec <= max_e_rec:
        return False
    return max_ranks is None or all(r <= cap for r, cap in zip(result.ranks, max_ranks))


def seed_sweep(Q: SnapshotMatrix, tcfg: TrainingConfig, seeds, max_e_rec: float = 0.1, max_ranks=None,
               out_dir=None, stop_on_success: bool = False, accept=None) -> list[SweepEntry]:
    """Train once per seed. ``accept(result)`` adds a check on top of the
    E_rec and rank thresholds; ``stop_on_success`` ends the sweep at the
    first seed that passes."""
    entries = []
    for seed in seeds:
        cfg = replace(tcfg, seed=int(seed))
        sub = Path(out_dir) / f"seed_{seed}" if out_dir is not None else None
        run = run_training(Q, cfg, sub)
        ok = is_success(run.result, max_e_rec, max_ranks) and (accept is None or accept(run.result))
        log.info("seed %d: E_rec %.3e ranks %s -> %s", seed, run.result.e_rec, run.result.ranks,
                 "success" if ok else "miss")
        entries.append(SweepEntry(int(seed), run.result, ok))
        if ok and stop_on_success:
            break
    return entries


def sweep_summary(entries) -> str:
    rows = report_rows([e.result for e in entries], ids=[f"seed_{e.seed}" for e in entries])
    errs = np.array([e.result.e_rec for e in entries])
    tail = (f"seeds run: {len(entries)}  successes: {sum(e.success for e in entries)}  "
            f"E_rec min {errs.min():.3e} median {np.median(errs):.3e}\n")
    return report_table(rows) + tail


# --------------------------------------------------------------- pretrain

def epochs_to_reach(trace, Q: SnapshotMatrix, target: float) -> int | None:
    """First epoch whose reconstruction term gives E_rec <= target, or None."""
    qq = float(np.sum(Q.values**2))
    for e, h in enumerate(trace.history):
        if np.sqrt(h.reconstruction / qq) <= target:
            return e
    return None


def epochs_to_target(Q: SnapshotMatrix, tcfg: TrainingConfig, target: float, shift=None) -> int | None:
    """Train until E_rec first drops to ``target``; returns that epoch, or
    None if ``tcfg.max_epochs`` runs out first. The stopping rule is
    disabled so an early plateau cannot end the run before the budget."""
    tcfg = replace(tcfg, patience=max(tcfg.max_epochs, 1) + 1)
    qq = float(np.sum(Q.values**2))
    hit = []

    def stop(epoch, br, shape, shift_model):
        if np.sqrt(br.reconstruction / qq) <= target:
            hit.append(epoch)
            return True
        return False

    train(Q, tcfg, shift=shift, callback=stop)
    return hit[0] if hit else None


def pretrain_shift(Q: SnapshotMatrix, tcfg: TrainingConfig) -> ShiftModel:
    """Train on a synthetic field and keep the shift model for warm starts."""
    _, shift, _ = train(Q, tcfg)
    return shift
