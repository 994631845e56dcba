"""Adam, the relative-decrease stopping rule and the joint training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import SnapshotMatrix
from .linalg import DEFAULT_RANK_TOL
from .loss import LossBreakdown, NonFiniteOutputError, loss_and_gradient
from .model import (DEFAULT_SHAPE_HIDDEN, DEFAULT_SHIFT_HIDDEN, ShapeModel, ShiftModel,
                    normalization_from_grid, parameter_names, save_checkpoint)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, params, **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, state: AdamState, names=None):
    """One bias-corrected Adam update. Returns (new_params, new_state); the
    inputs are left untouched."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("parameter, gradient and moment lists differ in length")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            raise FloatingPointError(f"non-finite gradient in parameter block {label}")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params.append(p - state.alpha * (m / c1) / (np.sqrt(v / c2) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, first_moment=new_m, second_moment=new_v, step_count=t)


def should_stop(loss_prev: float, loss_curr: float, delta: float, streak: int, patience: int = 1,
                literal: bool = False) -> tuple[bool, int]:
    """Relative-decrease test ``loss_prev - loss_curr <= delta * loss_prev``.

    By default an increase does not count and the test has to hold for
    ``patience`` consecutive epochs. ``literal=True`` applies the bare
    inequality once, so increases stop the run as well.
    """
    if not (np.isfinite(loss_prev) and np.isfinite(loss_curr)):
        raise TrainingDiverged(f"non-finite loss ({loss_prev}, {loss_curr})")
    if delta <= 0:
        raise ValueError("delta must be positive")
    met = loss_prev - loss_curr <= delta * loss_prev
    if literal:
        return met, int(met)
    met = met and loss_curr <= loss_prev
    streak = streak + 1 if met else 0
    return streak >= patience, streak


@dataclass
class TrainingConfig:
    lam: float = 0.05
    alpha: float = 1e-3
    max_epochs: int = 20_000
    delta: float = 1e-4
    seed: int = 54
    patience: int = 50
    K: int = 2
    shape_hidden: tuple = DEFAULT_SHAPE_HIDDEN
    # per frame: polynomial degree (int) or "mlp"
    shift_heads: tuple = (3, 1)
    shift_hidden: tuple = DEFAULT_SHIFT_HIDDEN
    # "scaled": shift parameters act on t/t_scale and output in half-domain units
    shift_units: str = "scaled"
    # time input of MLP shift heads: "raw" or "normalized"
    mlp_time: str = "raw"
    # shape-net x input is mapped to [-x_extent, x_extent]
    x_extent: float = 1.0
    literal_stop: bool = False
    # False keeps the shift model at its initial (or warm-start) values
    train_shift: bool = True
    rank_tol: float = DEFAULT_RANK_TOL
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    checkpoint_every: int = 1000
    threads: int = 1

    def __post_init__(self):
        self.shape_hidden = tuple(int(w) for w in self.shape_hidden)
        self.shift_hidden = tuple(int(w) for w in self.shift_hidden)
        self.shift_heads = tuple(h if h == "mlp" else int(h) for h in self.shift_heads)
        self.validate()

    def validate(self):
        problems = []
        if self.lam < 0:
            problems.append("lam must be >= 0")
        if self.alpha <= 0:
            problems.append("alpha must be > 0")
        if self.max_epochs < 0:
            problems.append("max_epochs must be >= 0")
        if self.delta <= 0:
            problems.append("delta must be > 0")
        if self.seed < 0:
            problems.append("seed must be >= 0")
        if self.patience < 1:
            problems.append("patience must be >= 1")
        if self.K < 1:
            problems.append("K must be >= 1")
        if len(self.shift_heads) != self.K:
            problems.append(f"shift_heads lists {len(self.shift_heads)} heads for K={self.K}")
        if self.shift_units not in ("scaled", "raw"):
            problems.append("shift_units must be 'scaled' or 'raw'")
        if self.x_extent <= 0:
            problems.append("x_extent must be > 0")
        if self.mlp_time not in ("raw", "normalized"):
            problems.append("mlp_time must be 'raw' or 'normalized'")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.epsilon > 0):
            problems.append("Adam hyper-parameters out of range")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape_hidden"] = list(self.shape_hidden)
        d["shift_hidden"] = list(self.shift_hidden)
        d["shift_heads"] = list(self.shift_heads)
        return d


def init_models(grid, config: TrainingConfig) -> tuple[ShapeModel, ShiftModel]:
    """Seeded initialisation, U(-1/sqrt2, 1/sqrt2) for every parameter.

    One ``numpy.random.default_rng(seed)`` (PCG64) stream is consumed in a
    fixed order: shape blocks 1..K, then shift heads 1..K.
    """
    rng = np.random.default_rng(config.seed)
    shape = ShapeModel.init(config.K, rng, hidden=config.shape_hidden, grid=grid)
    shape.x_scale /= config.x_extent
    if config.shift_units == "scaled":
        t_scale = max(abs(grid.t_min), abs(grid.t_max))
        x_scale = 0.5 * (grid.x_max - grid.x_min)
    else:
        t_scale, x_scale = 1.0, 1.0
    norm = normalization_from_grid(grid)
    heads = []
    for kind in config.shift_heads:
        if kind == "mlp" and config.mlp_time == "normalized":
            heads += ShiftModel.init([kind], rng, config.shift_hidden, norm["t_center"], norm["t_scale"], x_scale).heads
        else:
            heads += ShiftModel.init([kind], rng, config.shift_hidden, 0.0, t_scale if kind != "mlp" else 1.0,
                                     x_scale).heads
    return shape, ShiftModel(heads)


@dataclass
class TrainingTrace:
    history: list = field(default_factory=list)  # LossBreakdown per epoch
    wall_ms: list = field(default_factory=list)  # elapsed time at each epoch
    stop_reason: str | None = None  # criterion_met | max_epochs | divergence
    best_epoch: int | None = None
    wall_time: float = 0.0
    last_models: tuple | None = None

    @property
    def best_loss(self) -> float:
        return min(h.total for h in self.history) if self.history else float("nan")

    def set_stop(self, reason: str):
        if self.stop_reason is not None:
            raise RuntimeError("stop reason already set")
        self.stop_reason = reason

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "total", "reconstruction", "regularization", "wall_time_ms"])
            for e, (h, ms) in enumerate(zip(self.history, self.wall_ms)):
                w.writerow([e, repr(h.total), repr(h.reconstruction), repr(h.regularization), f"{ms:.3f}"])


def read_trace_csv(path) -> TrainingTrace:
    trace = TrainingTrace()
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        trace.history.append(LossBreakdown(float(r["total"]), float(r["reconstruction"]),
                                           float(r["regularization"]), float("nan")))
        trace.wall_ms.append(float(r["wall_time_ms"]))
    return trace


def train(Q: SnapshotMatrix, config: TrainingConfig, shape: ShapeModel | None = None,
          shift: ShiftModel | None = None, checkpoint_dir=None, callback=None):
    """Joint full-batch training of shape and shift models.

    ``shape``/``shift`` warm-start the corresponding model; missing ones are
    initialised from ``config.seed``. Returns the parameters with the lowest
    loss seen, plus the trace (whose ``last_models`` holds the final
    iterate). ``callback(epoch, breakdown, shape, shift)`` may return True
    to stop early.
    """
    config.validate()
    init_shape, init_shift = init_models(Q.grid, config)
    shape = shape if shape is not None else init_shape
    shift = shift if shift is not None else init_shift
    if shape.K != config.K or shift.K != config.K:
        raise ValueError(f"warm-start models must have K={config.K} frames")

    trace = TrainingTrace()
    n_shape = len(shape.parameters())
    names = parameter_names(shape, shift)
    params = shape.parameters() + shift.parameters()
    if not config.train_shift:
        names, params = names[:n_shape], params[:n_shape]
    state = AdamState.zeros(params, alpha=config.alpha, beta1=config.beta1, beta2=config.beta2,
                            epsilon=config.epsilon)
    best = (shape, shift)
    last_finite = best
    best_loss = np.inf
    prev = None
    streak = 0
    start = time.perf_counter()
    for epoch in range(config.max_epochs):
        try:
            # overflow is detected and reported through NonFiniteOutputError
            with np.errstate(over="ignore", invalid="ignore"):
                breakdown, grads = loss_and_gradient(Q, shape, shift, config.lam, config.rank_tol,
                                                     threads=config.threads, exact=False)
        except (NonFiniteOutputError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("epoch %d: %s", epoch, exc)
            trace.set_stop("divergence")
            best = last_finite
            break
        if not np.isfinite(breakdown.total):
            trace.set_stop("divergence")
            best = last_finite
            break
        last_finite = (shape, shift)
        trace.history.append(breakdown)
        trace.wall_ms.append(1e3 * (time.perf_counter() - start))
        if breakdown.total < best_loss:
            best_loss = breakdown.total
            best = (shape, shift)
            trace.best_epoch = epoch
        if callback is not None and callback(epoch, breakdown, shape, shift):
            trace.set_stop("criterion_met")
            break
        if prev is not None:
            stop, streak = should_stop(prev, breakdown.total, config.delta, streak, config.patience,
                                       config.literal_stop)
            if stop:
                trace.set_stop("criterion_met")
                break
        prev = breakdown.total
        try:
            params, state = adam_step(params, grads.flat()[:len(params)], state, names)
        except FloatingPointError as exc:
            log.warning("epoch %d: %s", epoch, exc)
            trace.set_stop("divergence")
            best = last_finite
            break
        shape = shape.with_parameters(params[:n_shape])
        if config.train_shift:
            shift = shift.with_parameters(params[n_shape:])
        if checkpoint_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"checkpoint_{epoch + 1:08d}.ckpt", shape, shift, config.seed)
    else:
        trace.set_stop("max_epochs")
    trace.wall_time = time.perf_counter() - start
    trace.last_models = (shape, shift)
    return best[0], best[1], trace
