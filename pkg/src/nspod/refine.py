"""Fixed-shift refinement of the co-moving fields.

With the transports frozen, the objective

    ||Q - sum_k T^k Q^k||_F^2 + lam * sum_k ||Q^k||_*

is convex in the fields and is minimised by proximal gradient descent
(ISTA) with per-frame singular value thresholding. ``T^k`` is the discrete
shift by ``Delta^k(t_n)`` with linear interpolation and zero padding:
``(T^k F)[m, n] = F(x_m - Delta^k(t_n), t_n)``.

Shifts here use the transport convention above. Shifts produced by the
shift network act as ``x + Delta`` and must be negated first (see
:func:`transport_shifts`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Grid, SnapshotMatrix
from .linalg import nuclear_norm, numerical_rank, svt

FORWARD = "forward"
ADJOINT = "adjoint"


@dataclass
class RefineReport:
    iterations_run: int
    final_relative_error: float
    ranks: list
    converged: bool
    objective: list = field(default_factory=list)  # objective before each iteration and after the last
    rank_tol: float = 0.01
    rejected_objective: float | None = None  # objective of a discarded step that went up

    def to_dict(self) -> dict:
        return dict(iterations_run=self.iterations_run, final_relative_error=self.final_relative_error,
                    ranks=list(self.ranks), converged=self.converged, rank_tol=self.rank_tol,
                    initial_objective=self.objective[0] if self.objective else None,
                    final_objective=self.objective[-1] if self.objective else None)


def _spacing(grid) -> float:
    if isinstance(grid, Grid):
        return grid.dx
    return float(grid)


def _stencil(shifts: np.ndarray, M: int, dx: float):
    # source position of output row m in column n, in index units
    pos = np.arange(M)[:, None] - np.asarray(shifts, dtype=np.float64)[None, :] / dx
    lo = np.floor(pos)
    theta = pos - lo
    lo = lo.astype(np.int64)
    return lo, lo + 1, 1.0 - theta, theta


def shift_operator(fld, shifts, grid, direction: str = FORWARD) -> np.ndarray:
    """Apply ``T`` (``direction="forward"``) or its transpose (``"adjoint"``).

    ``fld`` is (M, N), ``shifts`` holds one displacement per column in x
    units, ``grid`` is a :class:`Grid` or the uniform spacing dx. Samples
    falling outside the domain read as zero.
    """
    fld = np.asarray(fld, dtype=np.float64)
    M, N = fld.shape
    shifts = np.asarray(shifts, dtype=np.float64)
    if shifts.shape != (N,):
        raise ValueError(f"need one shift per column ({N}), got shape {shifts.shape}")
    if not np.all(np.isfinite(shifts)):
        raise ValueError("shifts must be finite")
    lo, hi, w_lo, w_hi = _stencil(shifts, M, _spacing(grid))
    cols = np.broadcast_to(np.arange(N), (M, N))
    ok_lo = (lo >= 0) & (lo < M)
    ok_hi = (hi >= 0) & (hi < M)
    if direction == FORWARD:
        out = np.zeros((M, N))
        out[ok_lo] += w_lo[ok_lo] * fld[lo[ok_lo], cols[ok_lo]]
        out[ok_hi] += w_hi[ok_hi] * fld[hi[ok_hi], cols[ok_hi]]
        return out
    if direction == ADJOINT:
        flat = np.zeros(M * N)
        np.add.at(flat, lo[ok_lo] * N + cols[ok_lo], w_lo[ok_lo] * fld[ok_lo])
        np.add.at(flat, hi[ok_hi] * N + cols[ok_hi], w_hi[ok_hi] * fld[ok_hi])
        return flat.reshape(M, N)
    raise ValueError(f"direction must be {FORWARD!r} or {ADJOINT!r}")


def transport_shifts(network_shifts) -> np.ndarray:
    """Convert shift-network output (acting as x + Delta) to transport shifts."""
    return -np.asarray(network_shifts, dtype=np.float64)


def fixed_shift_objective(Q, fields, shifts, grid, lam: float) -> float:
    Q = Q.values if isinstance(Q, SnapshotMatrix) else np.asarray(Q)
    recon = sum(shift_operator(f, s, grid) for f, s in zip(fields, shifts))
    r = Q - recon
    return float(np.sum(r * r)) + lam * sum(nuclear_norm(f) for f in fields)


def refine_fields(Q: SnapshotMatrix, shifts, init_fields, lam: float, max_iter: int = 5000,
                  rel_stop: float = 1e-8, ranks=None, rank_tol: float = 0.01,
                  backtracking: bool = False):
    """Proximal-gradient refinement of the co-moving fields with the shifts held fixed.

    ``shifts`` is (K, N) in the transport convention, ``init_fields`` is
    (K, M, N). ``ranks`` optionally caps the rank of each frame after
    thresholding; the initial fields are first truncated to those ranks.
    Iterates

        Q^k <- svt(Q^k - eta * T^kT (sum_j T^j Q^j - Q), eta * lam / 2),  eta = 1/K

    and stops when the relative objective decrease drops below ``rel_stop``.
    Returns (fields, RefineReport).
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    grid = Q.grid
    data = Q.values
    shifts = np.atleast_2d(np.asarray(shifts, dtype=np.float64))
    fields = np.array(init_fields, dtype=np.float64)
    if fields.ndim == 2:
        fields = fields[None]
    K = fields.shape[0]
    if fields.shape[1:] != data.shape or shifts.shape != (K, grid.N):
        raise ValueError(f"fields {fields.shape} / shifts {shifts.shape} do not match the data {data.shape}, K={K}")
    if ranks is not None and len(ranks) != K:
        raise ValueError(f"need one rank cap per frame, got {ranks}")
    caps = list(ranks) if ranks is not None else [None] * K

    def apply(fs):
        return sum(shift_operator(f, s, grid) for f, s in zip(fs, shifts))

    def objective(fs, resid):
        return float(np.sum(resid * resid)) + lam * sum(nuclear_norm(f) for f in fs)

    def prox_step(fs, resid, eta):
        return np.stack([svt(f - eta * shift_operator(resid, s, grid, ADJOINT), eta * lam / 2.0, cap)
                         for f, s, cap in zip(fs, shifts, caps)])

    if ranks is not None:
        # start from the nearest feasible point, so every step stays within the caps
        fields = np.stack([svt(f, 0.0, cap) for f, cap in zip(fields, caps)])
    eta0 = 1.0 / K
    eta = eta0
    resid = apply(fields) - data
    obj = objective(fields, resid)
    history = [obj]
    converged = False
    rejected = None
    it = 0
    for it in range(1, max_iter + 1):
        if backtracking:
            eta = min(2.0 * eta, 64.0 * eta0)
            while True:
                cand = prox_step(fields, resid, eta)
                cand_resid = apply(cand) - data
                diff = cand - fields
                smooth_new = np.sum(cand_resid * cand_resid)
                bound = (np.sum(resid * resid) + 2.0 * sum(np.sum(shift_operator(resid, s, grid, ADJOINT) * d)
                                                         for s, d in zip(shifts, diff))
                         + np.sum(diff * diff) / eta)
                if smooth_new <= bound * (1 + 1e-12) + 1e-300 or eta <= eta0:
                    break
                eta = max(eta / 2.0, eta0)
        else:
            cand = prox_step(fields, resid, eta)
            cand_resid = apply(cand) - data
        new_obj = objective(cand, cand_resid)
        if new_obj > obj:
            # only rounding can raise the objective: stay at the better point
            rejected = new_obj
            history.append(obj)
            converged = True
            break
        fields, resid = cand, cand_resid
        history.append(new_obj)
        decrease = obj - new_obj
        if decrease <= rel_stop * max(obj, np.finfo(float).tiny):
            converged = True
            obj = new_obj
            break
        obj = new_obj

    qn = np.linalg.norm(data)
    err = float(np.linalg.norm(resid) / qn) if qn > 0 else float("nan")
    report = RefineReport(iterations_run=it, final_relative_error=err,
                          ranks=[numerical_rank(f, rank_tol) if np.any(f) else 0 for f in fields],
                          converged=converged, objective=history, rank_tol=rank_tol,
                          rejected_objective=rejected)
    return fields, report
