"""Full-batch objective ``||Q - sum_k T^k Q^k||_F^2 + lam * sum_k ||Q^k||_*``
and its (sub)gradient with respect to all network parameters.

``T^k Q^k`` is obtained by evaluating shape block k at the shifted grid
points ``(x_m + Delta^k(t_n), t_n)``; no interpolation is involved.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import SnapshotMatrix
from .linalg import DEFAULT_RANK_TOL, svd
from .model import MlpHead, ModelGradients, ShapeModel, ShiftModel

CHUNK_SIZE = 4096
# above this many cached floats the forward pass is recomputed during backprop
CACHE_LIMIT = 100_000_000


class NonFiniteOutputError(FloatingPointError):
    def __init__(self, k: int, m: int, n: int, path: str):
        super().__init__(f"non-finite {path} network output for frame {k} at grid point (m={m}, n={n})")
        self.index = (k, m, n)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    reconstruction: float
    regularization: float
    lam: float


def _chunks(size: int):
    return [slice(i, min(i + CHUNK_SIZE, size)) for i in range(0, size, CHUNK_SIZE)]


class _GridEvaluation:
    """Network outputs on the whole grid plus what backprop needs."""

    def __init__(self, Q: SnapshotMatrix, shape: ShapeModel, shift: ShiftModel,
                 exact: bool, keep: bool, threads: int = 1):
        if shape.K != shift.K:
            raise ValueError(f"shape model has {shape.K} blocks, shift model {shift.K}")
        self.shape, self.shift = shape, shift
        self.exact, self.threads = exact, max(1, int(threads))
        grid = Q.grid
        M, N, K = grid.M, grid.N, shape.K
        self.M, self.N, self.K = M, N, K
        t = grid.t
        xs, ts = (a.ravel() for a in grid.mesh())  # sample s = m * N + n
        self.xs = xs
        self.n_index = np.tile(np.arange(N), M)
        self.base = shape.normalize(xs, ts)

        self.head_cache = []
        deltas = []
        for h in shift.heads:
            if isinstance(h, MlpHead):
                d, c = h.forward(t, keep=True, exact=exact)
            else:
                d, c = h.forward(t, keep=True)
            deltas.append(d)
            self.head_cache.append(c)
        self.deltas = np.stack(deltas)  # (K, N), network convention x + Delta

        self.slices = _chunks(M * N)
        width = max(max(blk.widths) for blk in shape.blocks)
        depth = max(len(blk.weights) for blk in shape.blocks)
        self.keep = keep and 4 * K * M * N * width * depth <= CACHE_LIMIT
        jobs = [(k, sl) for k in range(K) for sl in self.slices]
        results = self._map(lambda job: self._forward_chunk(*job, keep=self.keep), jobs)
        fields = np.empty((K, M * N))
        transformed = np.empty((K, M * N))
        self.caches = {}
        for (k, sl), (un, sh, caches) in zip(jobs, results):
            fields[k, sl] = un
            transformed[k, sl] = sh
            if self.keep:
                self.caches[k, sl.start] = caches
        for name, arr in (("unshifted", fields), ("shifted", transformed)):
            bad = ~np.isfinite(arr)
            if bad.any():
                k, s = (int(i) for i in np.argwhere(bad)[0])
                raise NonFiniteOutputError(k, s // N, s % N, name)
        self.fields = fields.reshape(K, M, N)
        self.transformed = transformed.reshape(K, M, N)

    def _map(self, fn, jobs):
        if self.threads == 1 or len(jobs) == 1:
            return [fn(j) for j in jobs]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, jobs))

    def _inputs(self, k: int, sl: slice):
        base = self.base[sl]
        moved = base.copy()
        moved[:, 0] = (self.xs[sl] + self.deltas[k, self.n_index[sl]] - self.shape.x_center) / self.shape.x_scale
        return base, moved

    def _forward_chunk(self, k, sl, keep):
        # both paths go through the block as one batch
        blk = self.shape.blocks[k]
        base, moved = self._inputs(k, sl)
        n = base.shape[0]
        both = np.concatenate([base, moved])
        if keep:
            out, cache = blk.forward(both, exact=self.exact, keep=True)
            return out[:n, 0], out[n:, 0], cache
        out = blk.forward(both, exact=self.exact)
        return out[:n, 0], out[n:, 0], None

    def backward(self, d_shifted: np.ndarray, d_unshifted: np.ndarray) -> ModelGradients:
        """``d_shifted``/``d_unshifted``: (K, M, N) upstream gradients."""
        K, M, N = self.K, self.M, self.N
        d_sh = d_shifted.reshape(K, M * N)
        d_un = d_unshifted.reshape(K, M * N)

        def job(item):
            k, sl = item
            blk = self.shape.blocks[k]
            if self.keep:
                cache = self.caches[k, sl.start]
            else:
                _, _, cache = self._forward_chunk(k, sl, keep=True)
            g, d_in = blk.backward(cache, np.concatenate([d_un[k, sl], d_sh[k, sl]])[:, None])
            n = sl.stop - sl.start
            return g, d_in[n:, 0]

        jobs = [(k, sl) for k in range(K) for sl in self.slices]
        results = self._map(job, jobs)

        shape_grads = []
        d_delta = np.empty((K, M * N))
        for k in range(K):
            acc = None
            for (kk, sl), (g, d_x) in zip(jobs, results):
                if kk != k:
                    continue
                # fixed chunk order keeps the reduction reproducible
                acc = g if acc is None else [a + b for a, b in zip(acc, g)]
                d_delta[k, sl] = d_x
            shape_grads += acc
        d_delta = d_delta.reshape(K, M, N).sum(axis=1) / self.shape.x_scale  # (K, N)
        shift_grads = []
        for k, h in enumerate(self.shift.heads):
            shift_grads += h.backward(self.head_cache[k], d_delta[k])
        return ModelGradients(shape_grads, shift_grads)


def _objective(Q, ev: _GridEvaluation, lam: float, rank_tol: float | None):
    residual = Q.values - ev.transformed.sum(axis=0)
    recon = float(np.sum(residual * residual))
    nuc, subgrads = 0.0, []
    for k in range(ev.K):
        res = svd(ev.fields[k])
        s = res.singular_values
        nuc += float(np.sum(s))
        if rank_tol is not None:
            if s[0] == 0.0:
                subgrads.append(np.zeros((ev.M, ev.N)))
            else:
                r = int(np.count_nonzero(s > rank_tol * s[0]))
                subgrads.append(res.u[:, :r] @ res.vt[:r])
    reg = lam * nuc
    return LossBreakdown(recon + reg, recon, reg, lam), residual, subgrads


def evaluate_loss(Q: SnapshotMatrix, shape: ShapeModel, shift: ShiftModel, lam: float, threads: int = 1):
    """Returns (LossBreakdown, transformed fields T^k Q^k, co-moving fields Q^k);
    both field stacks have shape (K, M, N)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ev = _GridEvaluation(Q, shape, shift, exact=True, keep=False, threads=threads)
    breakdown, _, _ = _objective(Q, ev, lam, None)
    return breakdown, ev.transformed, ev.fields


def loss_and_gradient(Q: SnapshotMatrix, shape: ShapeModel, shift: ShiftModel, lam: float,
                      rank_tol: float = DEFAULT_RANK_TOL, threads: int = 1, exact: bool = True):
    """One full-batch pass: (LossBreakdown, ModelGradients).

    The residual seeds the shifted outputs with -2 (Q - sum_j T^j Q^j); the
    nuclear term seeds the unshifted outputs of frame k with lam * U_k V_k^T.
    ``exact=False`` swaps the batch-invariant kernels for BLAS (faster,
    used by the training loop).
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ev = _GridEvaluation(Q, shape, shift, exact=exact, keep=True, threads=threads)
    breakdown, residual, subgrads = _objective(Q, ev, lam, rank_tol)
    d_shifted = np.broadcast_to(-2.0 * residual, (ev.K, ev.M, ev.N))
    d_unshifted = lam * np.stack(subgrads)
    return breakdown, ev.backward(np.ascontiguousarray(d_shifted), d_unshifted)


def loss_gradient(Q, shape, shift, lam, rank_tol: float = DEFAULT_RANK_TOL, threads: int = 1) -> ModelGradients:
    return loss_and_gradient(Q, shape, shift, lam, rank_tol, threads)[1]
