"""Dense matrix primitives: SVD, nuclear norm and its subgradient, singular
value thresholding and numerical rank.

All routines take and return plain ``numpy`` float64 arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RANK_TOL = 1e-7


class SvdConvergenceError(np.linalg.LinAlgError):
    """Raised when the SVD iteration cap is hit before convergence."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray  # (M, R), orthonormal columns
    singular_values: np.ndarray  # (R,), non-increasing
    vt: np.ndarray  # (R, N), orthonormal rows

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.vt


def _as_finite_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # first nonzero entry of every left singular vector is made non-negative
    nonzero = np.abs(u) > 0
    first = np.argmax(nonzero, axis=0)
    signs = np.sign(u[first, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``keep`` by an orthonormal
    completion of the kept ones."""
    m, r = u.shape
    out = u.copy()
    basis = [out[:, j] for j in range(r) if keep[j]]
    candidates = iter(np.eye(m))
    for j in range(r):
        if keep[j]:
            continue
        while True:
            e = next(candidates).copy()
            for b in basis:
                e -= (b @ e) * b
            for b in basis:  # second pass for numerical orthogonality
                e -= (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 1e-8:
                break
        out[:, j] = e / nrm
        basis.append(out[:, j])
    return out


def jacobi_svd(a, tol: float = 1e-12, max_sweeps: int | None = None) -> SvdResult:
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Slow but simple and independent of LAPACK; used as a fallback and as a
    cross-check in the test-suite.
    """
    a = _as_finite_matrix(a)
    transposed = a.shape[0] < a.shape[1]
    work = (a.T if transposed else a).copy()
    m, n = work.shape
    v = np.eye(n)
    if max_sweeps is None:
        max_sweeps = 100 * max(m, n)

    off = 0.0
    for _ in range(max_sweeps):
        off = 0.0
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ai, aj = work[:, i], work[:, j]
                alpha = ai @ ai
                beta = aj @ aj
                gamma = ai @ aj
                if alpha == 0.0 or beta == 0.0:
                    continue
                rel = abs(gamma) / np.sqrt(alpha * beta)
                off = max(off, rel)
                if rel <= tol:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wi = work[:, i].copy()
                work[:, i] = c * wi - s * work[:, j]
                work[:, j] = s * wi + c * work[:, j]
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if not rotated:
            break
    else:
        raise SvdConvergenceError("Jacobi SVD did not converge", off)

    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]
    keep = sigma > sigma[0] * 1e-15 if sigma[0] > 0 else np.zeros(n, dtype=bool)
    u = np.zeros_like(work)
    u[:, keep] = work[:, keep] / sigma[keep]
    sigma = np.where(keep, sigma, 0.0)
    u = _complete_basis(u, keep)
    if transposed:
        u, vt = v, u.T
    else:
        vt = v.T
    u, vt = _fix_signs(u, vt)
    return SvdResult(u, sigma, vt)


def svd(a) -> SvdResult:
    """Thin singular value decomposition ``a = u @ diag(s) @ vt``.

    LAPACK (``gesdd``) does the work; if it reports non-convergence the
    one-sided Jacobi routine is tried before giving up.
    """
    a = _as_finite_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError:
        return jacobi_svd(a)
    u, vt = _fix_signs(u, vt)
    return SvdResult(u, s, vt)


def singular_values(a) -> np.ndarray:
    a = _as_finite_matrix(a)
    try:
        return np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError:
        return jacobi_svd(a).singular_values


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)))


def spectral_norm(a) -> float:
    return float(singular_values(a)[0])


def nuclear_norm(a) -> float:
    """Sum of singular values."""
    return float(np.sum(singular_values(a)))


def nuclear_subgradient(a, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Subgradient ``U_r V_r^T`` of the nuclear norm at ``a``.

    Directions with ``sigma_i <= rank_tol * sigma_max`` are dropped, i.e. the
    free part of the subdifferential is set to zero. The zero matrix maps to
    zero.
    """
    if not 0.0 < rank_tol < 1.0:
        raise ValueError("rank_tol must lie in (0, 1)")
    res = svd(a)
    s = res.singular_values
    if s[0] == 0.0:
        return np.zeros_like(np.asarray(a, dtype=np.float64))
    r = int(np.count_nonzero(s > rank_tol * s[0]))
    return res.u[:, :r] @ res.vt[:r]


def svt(a, tau: float, max_rank: int | None = None) -> np.ndarray:
    """Singular value thresholding, the proximal map of ``tau * ||.||_*``.

    ``max_rank`` additionally keeps only the leading singular values, which
    gives the exact minimiser of the prox objective over matrices of rank
    at most ``max_rank``.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    res = svd(a)
    s = np.maximum(res.singular_values - tau, 0.0)
    if max_rank is not None:
        s[max_rank:] = 0.0
    r = int(np.count_nonzero(s))
    return (res.u[:, :r] * s[:r]) @ res.vt[:r]


def numerical_rank(a, rel_tol: float = 0.01) -> int:
    """Number of singular values above ``rel_tol * sigma_max``."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    s = singular_values(a)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))
