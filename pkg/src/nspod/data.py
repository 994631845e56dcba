"""Space-time grids, snapshot matrices, synthetic test fields and snapshot
file I/O.

Binary snapshot layout (version 1)::

    NSPOD-SNAPSHOT 1
    M <int>
    N <int>
    x_min <float>
    x_max <float>
    t_min <float>
    t_max <float>
    endpoints inclusive
    DATA
    <M*N little-endian float64, column-major: one time snapshot after another>

Floats in the header are written with ``repr`` so they round-trip exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = "NSPOD-SNAPSHOT"
VERSION = 1
CSV_MAGIC = "# nspod-csv 1"

# crossing waves test field
CROSSING_MU = 200.0
CROSSING_SIGMA = 4.0

# two-bump pretraining field
PRETRAIN_WIDTH = 4.0
PRETRAIN_MU = (110.0, 200.0)


class SnapshotFormatError(ValueError):
    """Base class for snapshot parse errors."""


class MalformedHeaderError(SnapshotFormatError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DimensionMismatchError(SnapshotFormatError):
    def __init__(self, expected: int, found: int, offset: int | None = None):
        where = f" (data starts at byte {offset})" if offset is not None else ""
        super().__init__(f"expected {expected} values, found {found}{where}")
        self.expected = expected
        self.found = found


class NonFiniteValueError(SnapshotFormatError):
    def __init__(self, index: tuple[int, int], offset: int | None = None, line: int | None = None):
        loc = f"byte {offset}" if offset is not None else f"line {line}"
        super().__init__(f"non-finite value at (m, n) = {index}, {loc}")
        self.index = index


@dataclass(frozen=True)
class Grid:
    """Uniform grid, endpoints included, on [x_min, x_max] x [t_min, t_max]."""

    x_min: float
    x_max: float
    M: int
    t_min: float
    t_max: float
    N: int

    def __post_init__(self):
        if self.M < 2 or self.N < 2:
            raise ValueError("grid needs at least two points per axis")
        if not (self.x_max > self.x_min and self.t_max > self.t_min):
            raise ValueError("grid extents must be increasing")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.M)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.N)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.M - 1)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.N - 1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, t) arrays of shape (M, N) with ``x[m, n] = x_m``."""
        return np.meshgrid(self.x, self.t, indexing="ij")

    def to_dict(self) -> dict:
        return dict(x_min=self.x_min, x_max=self.x_max, M=self.M,
                    t_min=self.t_min, t_max=self.t_max, N=self.N)


CROSSING_WAVES_GRID = Grid(0.0, 400.0, 400, -10.0, 10.0, 200)
PRETRAIN_GRID = Grid(0.0, 400.0, 400, 0.0, 200.0, 200)
WILDFIRE_GRID = Grid(0.0, 250.0, 250, 0.0, 1400.0, 300)


@dataclass(frozen=True)
class SnapshotMatrix:
    grid: Grid
    values: np.ndarray  # (M, N); column n is the snapshot at t_n

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.M, self.grid.N):
            raise ValueError(f"values shape {v.shape} does not match grid ({self.grid.M}, {self.grid.N})")
        if not np.all(np.isfinite(v)):
            raise ValueError("snapshot matrix contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


# ---------------------------------------------------------------- generators

def crossing_shift_1(t):
    return 0.15 * t**3 + 0.8 * t + 1.5


def crossing_shift_2(t):
    return -18.0 * t + 2.0


def gen_crossing_waves(grid: Grid = CROSSING_WAVES_GRID) -> SnapshotMatrix:
    """Two Gaussian waves crossing each other, amplitudes sin/cos(pi t/10)."""
    x, t = grid.mesh()
    s2 = CROSSING_SIGMA**2
    q = (np.sin(np.pi * t / 10.0) * np.exp(-((x - CROSSING_MU - crossing_shift_1(t)) ** 2) / s2)
         + np.cos(np.pi * t / 10.0) * np.exp(-((x - CROSSING_MU - crossing_shift_2(t)) ** 2) / s2))
    return SnapshotMatrix(grid, q)


def two_bump_field(grid: Grid, slopes=(-7.0, 6.0), offsets=(1.0, -1.0),
                   centers=PRETRAIN_MU, width: float = PRETRAIN_WIDTH) -> SnapshotMatrix:
    """Sum of two Gaussian bumps travelling on straight lines
    ``x = center + slope * t + offset``."""
    x, t = grid.mesh()
    q = np.zeros_like(x)
    for mu, a, b in zip(centers, slopes, offsets):
        q += np.exp(-((x - mu - (a * t + b)) ** 2) / width**2)
    return SnapshotMatrix(grid, q)


def gen_pretrain_field(grid: Grid = PRETRAIN_GRID) -> SnapshotMatrix:
    """Two bumps of width 4 starting at x=111 and x=199, moving with
    slopes -7 and +6."""
    return two_bump_field(grid)


def gen_toy_wildfire(grid: Grid = WILDFIRE_GRID) -> SnapshotMatrix:
    """NON-CANONICAL three-frame stand-in for a 1D fire front.

    Two bumps leave the domain centre in opposite directions while a
    stationary ignition pulse decays. It only mimics the transport
    structure (K=3); it is not the solution of any fire model.
    """
    x, t = grid.mesh()
    centre = 0.5 * (grid.x_min + grid.x_max)
    length = grid.x_max - grid.x_min
    duration = grid.t_max - grid.t_min
    tau = (t - grid.t_min) / duration
    speed = 0.4 * length
    width = 0.03 * length
    growth = 1.0 - np.exp(-5.0 * tau)
    fronts = growth * (np.exp(-((x - centre + speed * tau) ** 2) / width**2)
                       + np.exp(-((x - centre - speed * tau) ** 2) / width**2))
    ignition = np.exp(-((x - centre) ** 2) / (2 * width) ** 2) * np.exp(-4.0 * tau)
    return SnapshotMatrix(grid, fronts + ignition)


GENERATORS = {
    "crossing-waves": (gen_crossing_waves, CROSSING_WAVES_GRID),
    "pretrain": (gen_pretrain_field, PRETRAIN_GRID),
    "toy-wildfire": (gen_toy_wildfire, WILDFIRE_GRID),
}


def generate(name: str, grid: Grid | None = None) -> SnapshotMatrix:
    try:
        fn, default = GENERATORS[name]
    except KeyError:
        raise KeyError(f"unknown generator {name!r}; available: {', '.join(sorted(GENERATORS))}") from None
    return fn(grid or default)


# ----------------------------------------------------------------- file I/O

_HEADER_KEYS = ("M", "N", "x_min", "x_max", "t_min", "t_max")


def _header_lines(grid: Grid) -> list[str]:
    return [
        f"{MAGIC} {VERSION}",
        f"M {grid.M}",
        f"N {grid.N}",
        f"x_min {grid.x_min!r}",
        f"x_max {grid.x_max!r}",
        f"t_min {grid.t_min!r}",
        f"t_max {grid.t_max!r}",
        "endpoints inclusive",
        "DATA",
    ]


def encode_snapshot(snap: SnapshotMatrix) -> bytes:
    head = "\n".join(_header_lines(snap.grid)) + "\n"
    body = np.asarray(snap.values, dtype="<f8").tobytes(order="F")
    return head.encode("ascii") + body


def save_snapshot(path, snap: SnapshotMatrix) -> None:
    Path(path).write_bytes(encode_snapshot(snap))


def _parse_number(text: str, key: str, line: int, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise MalformedHeaderError(f"cannot parse {key} value {text!r}", line) from None


def decode_snapshot(raw: bytes) -> SnapshotMatrix:
    pos = 0
    lines = []
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise MalformedHeaderError("header not terminated by DATA line", len(lines) + 1)
        try:
            text = raw[pos:nl].decode("ascii")
        except UnicodeDecodeError:
            raise MalformedHeaderError("non-ASCII header", len(lines) + 1) from None
        lines.append(text)
        pos = nl + 1
        if text == "DATA":
            break
        if len(lines) > 64:
            raise MalformedHeaderError("header too long", len(lines))

    if not lines[0].startswith(MAGIC):
        raise MalformedHeaderError(f"missing magic string {MAGIC!r}", 1)
    parts = lines[0].split()
    if len(parts) != 2 or parts[1] != str(VERSION):
        raise MalformedHeaderError(f"unsupported version line {lines[0]!r}", 1)

    fields = {}
    for lineno, text in enumerate(lines[1:-1], start=2):
        parts = text.split()
        if len(parts) == 2 and parts[0] in _HEADER_KEYS:
            kind = int if parts[0] in ("M", "N") else float
            fields[parts[0]] = _parse_number(parts[1], parts[0], lineno, kind)
        elif text == "endpoints inclusive":
            continue
        else:
            raise MalformedHeaderError(f"unexpected header line {text!r}", lineno)
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise MalformedHeaderError(f"missing header keys {missing}", len(lines))
    try:
        grid = Grid(fields["x_min"], fields["x_max"], fields["M"],
                    fields["t_min"], fields["t_max"], fields["N"])
    except ValueError as exc:
        raise MalformedHeaderError(str(exc), len(lines)) from None

    expected = grid.M * grid.N
    payload = raw[pos:]
    if len(payload) != 8 * expected:
        raise DimensionMismatchError(expected, len(payload) // 8, pos)
    values = np.frombuffer(payload, dtype="<f8").reshape((grid.M, grid.N), order="F").astype(np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        m, n = (int(i) for i in np.argwhere(bad)[0])
        raise NonFiniteValueError((m, n), offset=pos + 8 * (n * grid.M + m))
    return SnapshotMatrix(grid, values)


def load_snapshot(path) -> SnapshotMatrix:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_snapshot_csv(path)
    return decode_snapshot(path.read_bytes())


def save_snapshot_csv(path, snap: SnapshotMatrix) -> None:
    """CSV export: a metadata comment row, then row m holds q(x_m, t_n) for all n."""
    g = snap.grid
    meta = ", ".join(f"{k}={getattr(g, k)!r}" for k in _HEADER_KEYS)
    with open(path, "w", newline="") as fh:
        fh.write(f"{CSV_MAGIC}, {meta}\n")
        writer = csv.writer(fh)
        for row in snap.values:
            writer.writerow([repr(float(v)) for v in row])


def load_snapshot_csv(path) -> SnapshotMatrix:
    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(CSV_MAGIC):
            raise MalformedHeaderError(f"missing {CSV_MAGIC!r} header row", 1)
        fields = {}
        for item in header[len(CSV_MAGIC):].split(","):
            item = item.strip()
            if not item:
                continue
            key, _, val = item.partition("=")
            if key not in _HEADER_KEYS:
                raise MalformedHeaderError(f"unknown metadata key {key!r}", 1)
            fields[key] = _parse_number(val, key, 1, int if key in ("M", "N") else float)
        missing = [k for k in _HEADER_KEYS if k not in fields]
        if missing:
            raise MalformedHeaderError(f"missing metadata keys {missing}", 1)
        try:
            grid = Grid(fields["x_min"], fields["x_max"], fields["M"],
                        fields["t_min"], fields["t_max"], fields["N"])
        except ValueError as exc:
            raise MalformedHeaderError(str(exc), 1) from None

        values = np.empty((grid.M, grid.N))
        rows = 0
        for lineno, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if rows >= grid.M:
                raise DimensionMismatchError(grid.M * grid.N, (rows + 1) * grid.N)
            if len(row) != grid.N:
                raise DimensionMismatchError(grid.N, len(row))
            for n, cell in enumerate(row):
                v = _parse_number(cell, f"entry ({rows}, {n})", lineno)
                if not np.isfinite(v):
                    raise NonFiniteValueError((rows, n), line=lineno)
                values[rows, n] = v
            rows += 1
    if rows != grid.M:
        raise DimensionMismatchError(grid.M * grid.N, rows * grid.N)
    return SnapshotMatrix(grid, values)
