"""Experiment configuration files.

Configs are INI files read with :mod:`configparser`. Every key is typed; an
unknown section or key is an error, reported with its ``section.key`` path.
See the README for the grammar and the bundled presets in ``presets/``.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .data import GENERATORS, Grid
from .optim import TrainingConfig

OUT_ENV = "NSPOD_OUT"
PRESET_SUFFIX = ".ini"


class ConfigError(ValueError):
    """Raised for unreadable, malformed or inconsistent configuration."""


@dataclass
class DataSection:
    # builtin generator name, or a snapshot file path (binary or .csv)
    source: str = "crossing-waves"
    M: int | None = None
    N: int | None = None
    x_min: float | None = None
    x_max: float | None = None
    t_min: float | None = None
    t_max: float | None = None

    @property
    def is_file(self) -> bool:
        return self.source not in GENERATORS

    def grid_overrides(self) -> dict:
        keys = ("x_min", "x_max", "M", "t_min", "t_max", "N")
        return {k: getattr(self, k) for k in keys if getattr(self, k) is not None}


@dataclass
class RefineSection:
    enabled: bool = False
    lam: float | None = None  # None: reuse the training lambda
    max_iter: int = 2000
    rel_stop: float = 1e-8
    ranks: tuple | None = None
    backtracking: bool = False


@dataclass
class OutputSection:
    dir: str = "runs/default"
    plots: bool = True


@dataclass
class SweepSection:
    seeds: tuple = ()
    # a seed counts as a success when E_rec and every measured rank stay within these
    max_e_rec: float = 0.1
    max_ranks: tuple | None = None


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    data: DataSection = field(default_factory=DataSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    refine: RefineSection = field(default_factory=RefineSection)
    output: OutputSection = field(default_factory=OutputSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def grid(self) -> Grid | None:
        """Grid for builtin generators (defaults plus overrides); None for files."""
        if self.data.is_file:
            return None
        base = GENERATORS[self.data.source][1].to_dict()
        base.update(self.data.grid_overrides())
        return Grid(**base)

    def output_dir(self, override=None) -> Path:
        """``override`` (the --out flag) wins, then $NSPOD_OUT, then the config."""
        if override:
            return Path(override)
        env = os.environ.get(OUT_ENV)
        return Path(env) if env else Path(self.output.dir)

    def to_dict(self) -> dict:
        return dict(name=self.name, data=vars(self.data).copy(), training=self.training.to_dict(),
                    refine=_plain(vars(self.refine)), sweep=_plain(vars(self.sweep)))


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# ------------------------------------------------------------------ parsing

def _tuple_of(kind):
    def parse(text: str):
        items = [s.strip() for s in text.split(",") if s.strip()]
        return tuple(kind(s) for s in items)
    return parse


def _head(text: str):
    return text if text == "mlp" else int(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(kind):
    def parse(text: str):
        return None if text.strip().lower() in ("", "none") else kind(text)
    return parse


_INT_TUPLE = _tuple_of(int)

SCHEMA = {
    "experiment": {"name": str},
    "data": {"source": str, "M": int, "N": int, "x_min": float, "x_max": float, "t_min": float,
             "t_max": float},
    "training": {"lam": float, "alpha": float, "max_epochs": int, "delta": float, "seed": int,
                 "patience": int, "K": int, "shape_hidden": _INT_TUPLE, "shift_heads": _tuple_of(_head),
                 "shift_hidden": _INT_TUPLE, "shift_units": str, "mlp_time": str, "x_extent": float,
                 "literal_stop": _bool, "train_shift": _bool, "rank_tol": float, "beta1": float, "beta2": float,
                 "epsilon": float, "checkpoint_every": int, "threads": int},
    "refine": {"enabled": _bool, "lam": _optional(float), "max_iter": int, "rel_stop": float,
               "ranks": _optional(_INT_TUPLE), "backtracking": _bool},
    "output": {"dir": str, "plots": _bool},
    "sweep": {"seeds": _INT_TUPLE, "max_e_rec": float, "max_ranks": _optional(_INT_TUPLE)},
}


def _typed_section(parser, section: str) -> dict:
    values = {}
    if not parser.has_section(section):
        return values
    schema = SCHEMA[section]
    for key, raw in parser.items(section):
        if key not in schema:
            known = ", ".join(schema)
            raise ConfigError(f"{section}.{key}: unknown key (known: {known})")
        try:
            values[key] = schema[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: cannot parse {raw!r}: {exc}") from None
    return values


def parse_config(text: str, source: str = "<string>", data_source: str | None = None) -> ExperimentConfig:
    """Parse and validate INI text. ``data_source`` replaces ``data.source``
    (and drops grid keys when it names a file) before validation."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case-sensitive (M, N, K)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = set(parser.sections()) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}; known: {sorted(SCHEMA)}")
    sec = {name: _typed_section(parser, name) for name in SCHEMA}

    cfg = ExperimentConfig(name=sec["experiment"].get("name", Path(source).stem))
    if data_source is not None:
        sec["data"] = {"source": data_source} if data_source not in GENERATORS else dict(sec["data"], source=data_source)
    cfg.data = DataSection(**sec["data"])
    training = sec["training"]
    if "shift_heads" in training and "K" not in training:
        training["K"] = len(training["shift_heads"])
    try:
        cfg.training = TrainingConfig(**training)
    except ValueError as exc:
        raise ConfigError(f"training: {exc}") from None
    cfg.refine = RefineSection(**sec["refine"])
    cfg.output = OutputSection(**sec["output"])
    cfg.sweep = SweepSection(**sec["sweep"])
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    problems = []
    if cfg.data.is_file:
        if cfg.data.grid_overrides():
            problems.append("data: grid keys apply to builtin generators only")
        if not Path(cfg.data.source).is_file():
            problems.append(f"data.source: {cfg.data.source!r} is neither a generator "
                            f"({', '.join(GENERATORS)}) nor an existing file")
    else:
        try:
            cfg.grid()
        except ValueError as exc:
            problems.append(f"data: {exc}")
    if cfg.refine.lam is not None and cfg.refine.lam < 0:
        problems.append("refine.lam must be >= 0")
    if cfg.refine.max_iter < 1:
        problems.append("refine.max_iter must be >= 1")
    if cfg.refine.ranks is not None and len(cfg.refine.ranks) != cfg.training.K:
        problems.append(f"refine.ranks needs {cfg.training.K} entries")
    if cfg.sweep.max_ranks is not None and len(cfg.sweep.max_ranks) != cfg.training.K:
        problems.append(f"sweep.max_ranks needs {cfg.training.K} entries")
    if any(s < 0 for s in cfg.sweep.seeds):
        problems.append("sweep.seeds must be non-negative")
    if problems:
        raise ConfigError("; ".join(problems))


def preset_names() -> list[str]:
    root = resources.files("nspod") / "presets"
    return sorted(p.name[:-len(PRESET_SUFFIX)] for p in root.iterdir() if p.name.endswith(PRESET_SUFFIX))


def preset_text(name: str) -> str:
    path = resources.files("nspod") / "presets" / f"{name}{PRESET_SUFFIX}"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text()


def load_config(spec, data_source: str | None = None) -> ExperimentConfig:
    """Load a config from a file path, or from a bundled preset by name."""
    path = Path(spec)
    if path.is_file():
        return parse_config(path.read_text(), source=str(path), data_source=data_source)
    if path.suffix or os.sep in str(spec):
        raise ConfigError(f"config file not found: {spec}")
    return parse_config(preset_text(str(spec)), source=f"{spec}{PRESET_SUFFIX}", data_source=data_source)


def training_fields() -> list[str]:
    return [f.name for f in fields(TrainingConfig)]
