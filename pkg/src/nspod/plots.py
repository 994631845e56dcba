"""Heatmap images (binary PPM) and shift-curve tables for a decomposition.

Values map affinely onto a 256-entry viridis table, per image:
``index = round(255 * (v - vmin) / (vmax - vmin))``; a constant image uses
entry 0. Rows run over x with x_max at the top, columns over t.
"""
from __future__ import annotations

import csv
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .metrics import DecompositionResult


@lru_cache(maxsize=1)
def viridis() -> np.ndarray:
    text = (resources.files("nspod") / "viridis.txt").read_text()
    table = np.loadtxt(text.splitlines(), comments="#", dtype=np.uint8)
    if table.shape != (256, 3):
        raise ValueError(f"colour table has shape {table.shape}, expected (256, 3)")
    return table


def colour_indices(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if vmax <= vmin:
        return np.zeros(values.shape, dtype=np.intp)
    idx = np.rint(255.0 * (values - vmin) / (vmax - vmin))
    return np.clip(idx, 0, 255).astype(np.intp)


def encode_ppm(values: np.ndarray):
    """Returns (PPM bytes, vmin, vmax) for an (M, N) field."""
    values = np.asarray(values, dtype=np.float64)
    vmin, vmax = float(values.min()), float(values.max())
    rgb = viridis()[colour_indices(values[::-1], vmin, vmax)]
    M, N = values.shape
    return f"P6\n{N} {M}\n255\n".encode("ascii") + rgb.astype(np.uint8).tobytes(), vmin, vmax


def decode_ppm(raw: bytes) -> np.ndarray:
    """(height, width, 3) uint8 pixels of a binary PPM written by :func:`encode_ppm`."""
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError("not a binary PPM with maxval 255")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError("PPM pixel data has the wrong size")
    return data.reshape(h, w, 3)


def panels(res: DecompositionResult) -> dict:
    out = {"Q": res.snapshot.values, "Q_tilde": res.reconstruction}
    for k in range(res.K):
        out[f"T{k + 1}Q{k + 1}"] = res.transformed[k]
    for k in range(res.K):
        out[f"Q{k + 1}"] = res.fields[k]
    return out


def write_plots(res: DecompositionResult, out_dir) -> list[Path]:
    """One PPM per panel, ``ranges.txt`` with each panel's min/max, and
    ``shifts.csv`` with t_n and the transport shift of every frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    lines = ["# panel vmin vmax (colour index 0 = vmin, 255 = vmax)"]
    for name, values in panels(res).items():
        raw, vmin, vmax = encode_ppm(values)
        path = out_dir / f"{name}.ppm"
        path.write_bytes(raw)
        written.append(path)
        lines.append(f"{name} {vmin!r} {vmax!r}")
    ranges = out_dir / "ranges.txt"
    ranges.write_text("\n".join(lines) + "\n")
    written.append(ranges)
    written.append(write_shift_csv(res, out_dir / "shifts.csv"))
    return written


def write_shift_csv(res: DecompositionResult, path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"delta_{k + 1}" for k in range(res.K)])
        for n, t in enumerate(res.snapshot.grid.t):
            w.writerow([repr(float(t))] + [repr(float(s)) for s in res.shifts[:, n]])
    return Path(path)


def read_ranges(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        name, lo, hi = line.split()
        out[name] = (float(lo), float(hi))
    return out
