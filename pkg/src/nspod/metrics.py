"""Decomposition quality measures and the result/report file formats."""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Grid, SnapshotMatrix
from .linalg import numerical_rank, svd

DEFAULT_RANK_TOL = 0.01

RESULT_MAGIC = "NSPOD-RESULT"
RESULT_VERSION = 1


def relative_error(Q, reconstruction) -> float:
    """``||Q - reconstruction||_F / ||Q||_F``."""
    q = Q.values if isinstance(Q, SnapshotMatrix) else np.asarray(Q, dtype=np.float64)
    nq = np.linalg.norm(q)
    if nq == 0:
        raise ZeroDivisionError("relative error undefined for a zero snapshot matrix")
    return float(np.linalg.norm(q - np.asarray(reconstruction)) / nq)


def frame_ranks(fields, rel_tol: float = DEFAULT_RANK_TOL) -> list[int]:
    return [numerical_rank(f, rel_tol) for f in fields]


@dataclass
class DyadicModes:
    singular_values: np.ndarray  # leading R values
    spatial_modes: np.ndarray  # (M, R)
    temporal_modes: np.ndarray  # (R, N)
    tail_energy: float  # sqrt of the sum of discarded sigma^2


def dyadic_truncate(fld, R: int):
    """Best rank-R approximation (truncated SVD). Returns (modes, truncated)."""
    fld = np.asarray(fld, dtype=np.float64)
    if not 1 <= R <= min(fld.shape):
        raise ValueError(f"R must lie in [1, {min(fld.shape)}]")
    res = svd(fld)
    s = res.singular_values
    modes = DyadicModes(s[:R].copy(), res.u[:, :R].copy(), res.vt[:R].copy(),
                        float(np.sqrt(np.sum(s[R:] ** 2))))
    return modes, (modes.spatial_modes * modes.singular_values) @ modes.temporal_modes


@dataclass
class DecompositionResult:
    """Everything needed to inspect, refine or plot a decomposition.

    ``shifts`` follow the transport convention ``T^k q(x, t) = q(x - Delta^k(t), t)``.
    """

    snapshot: SnapshotMatrix
    fields: np.ndarray  # (K, M, N) co-moving fields Q^k
    transformed: np.ndarray  # (K, M, N) T^k Q^k
    shifts: np.ndarray  # (K, N)
    provenance: str = "nspod"  # nspod | refined
    seed: int | None = None
    rank_tol: float = DEFAULT_RANK_TOL
    n_iter: int | None = None
    prescribed_ranks: list | None = None
    config: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.fields.shape[0]

    @property
    def reconstruction(self) -> np.ndarray:
        return self.transformed.sum(axis=0)

    @property
    def e_rec(self) -> float:
        return relative_error(self.snapshot, self.reconstruction)

    @property
    def ranks(self) -> list[int]:
        return frame_ranks(self.fields, self.rank_tol)

    def summary(self) -> dict:
        return dict(provenance=self.provenance, e_rec=self.e_rec, ranks=self.ranks, rank_tol=self.rank_tol,
                    n_iter=self.n_iter, seed=self.seed, prescribed_ranks=self.prescribed_ranks)


def encode_result(res: DecompositionResult) -> bytes:
    """Self-describing container: magic line, one JSON metadata line, then
    little-endian float64 blocks in the order listed under ``arrays``."""
    arrays = dict(snapshot=res.snapshot.values, fields=res.fields, transformed=res.transformed,
                  shifts=res.shifts)
    meta = dict(
        grid=res.snapshot.grid.to_dict(), K=res.K, provenance=res.provenance, seed=res.seed,
        rank_tol=res.rank_tol, n_iter=res.n_iter, prescribed_ranks=res.prescribed_ranks,
        e_rec=res.e_rec, ranks=res.ranks, config=res.config, info=res.info,
        arrays=[[name, list(a.shape)] for name, a in arrays.items()],
    )
    head = f"{RESULT_MAGIC} {RESULT_VERSION}\n{json.dumps(meta, sort_keys=True)}\n".encode("ascii")
    return head + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())


def decode_result(raw: bytes) -> DecompositionResult:
    first = raw.find(b"\n")
    second = raw.find(b"\n", first + 1)
    if first < 0 or second < 0:
        raise ValueError("truncated result header")
    if raw[:first].decode("ascii", errors="replace") != f"{RESULT_MAGIC} {RESULT_VERSION}":
        raise ValueError(f"not a version-{RESULT_VERSION} result file")
    meta = json.loads(raw[first + 1:second])
    pos = second + 1
    arrays = {}
    for name, shp in meta["arrays"]:
        n = int(np.prod(shp))
        chunk = raw[pos:pos + 8 * n]
        if len(chunk) != 8 * n:
            raise ValueError(f"result file truncated inside array {name!r}")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").reshape(shp).astype(np.float64)
        pos += 8 * n
    if pos != len(raw):
        raise ValueError("trailing bytes after result arrays")
    grid = Grid(**meta["grid"])
    return DecompositionResult(
        snapshot=SnapshotMatrix(grid, arrays["snapshot"]), fields=arrays["fields"],
        transformed=arrays["transformed"], shifts=arrays["shifts"], provenance=meta["provenance"],
        seed=meta["seed"], rank_tol=meta["rank_tol"], n_iter=meta["n_iter"],
        prescribed_ranks=meta["prescribed_ranks"], config=meta["config"], info=meta["info"],
    )


def save_result(path, res: DecompositionResult) -> None:
    Path(path).write_bytes(encode_result(res))


def load_result(path) -> DecompositionResult:
    return decode_result(Path(path).read_bytes())


# ------------------------------------------------------------------ reports

def report_rows(results, ids=None) -> list[dict]:
    """One row per result, in input order."""
    results = list(results)
    ids = list(ids) if ids is not None else [f"run{i}" for i in range(len(results))]
    grids = {tuple(r.snapshot.grid.to_dict().values()) for r in results}
    if len(grids) > 1:
        warnings.warn("results were computed on different grids", stacklevel=2)
    rows = []
    for rid, r in zip(ids, results):
        cfg = r.config or {}
        row = dict(experiment_id=rid, provenance=r.provenance, e_rec=r.e_rec, rank_tol=r.rank_tol,
                   n_iter=r.n_iter, seed=r.seed, **{"lambda": cfg.get("lam")}, alpha=cfg.get("alpha"),
                   epochs=r.info.get("epochs"))
        for k, rk in enumerate(r.ranks, start=1):
            row[f"rank_{k}"] = rk
        if r.prescribed_ranks is not None:
            row["prescribed_ranks"] = "(" + ", ".join(str(p) for p in r.prescribed_ranks) + ")"
        rows.append(row)
    return rows


def _columns(rows) -> list[str]:
    max_k = max((sum(1 for c in row if c.startswith("rank_") and c != "rank_tol") for row in rows), default=0)
    cols = ["experiment_id", "provenance", "e_rec"] + [f"rank_{k}" for k in range(1, max_k + 1)]
    return cols + ["n_iter", "seed", "lambda", "alpha", "epochs"]


def report_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=_columns(rows), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in row.items()})
    return buf.getvalue()


def report_table(rows) -> str:
    """Aligned plain-text table: E_rec, ranks, N_iter per result."""
    if not rows:
        return "(no results)\n"
    tols = sorted({row["rank_tol"] for row in rows})
    header = ["id", "provenance", "E_rec", "ranks", "prescribed", "N_iter", "seed"]
    body = []
    for row in rows:
        ranks = [str(row[c]) for c in sorted((c for c in row if c.startswith("rank_") and c != "rank_tol"),
                                              key=lambda c: int(c[5:]))]
        body.append([str(row["experiment_id"]), row["provenance"], f"{row['e_rec']:.2e}",
                     "(" + ", ".join(ranks) + ")", row.get("prescribed_ranks", "-"),
                     "-" if row["n_iter"] is None else str(row["n_iter"]),
                     "-" if row["seed"] is None else str(row["seed"])])
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    lines.append("measured ranks: singular values above " + ", ".join(f"{t:g}" for t in tols) + " x sigma_max")
    return "\n".join(lines) + "\n"
