import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_prox, prox_objective
from nspod.linalg import (SvdConvergenceError, jacobi_svd, nuclear_norm, nuclear_subgradient,
                          numerical_rank, svd, svt)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(max_side=20):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def _check_svd(a, res, tol=1e-10):
    s = res.singular_values
    r = s.size
    assert np.allclose(res.u.T @ res.u, np.eye(r), atol=tol)
    assert np.allclose(res.vt @ res.vt.T, np.eye(r), atol=tol)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
    scale = max(s[0], 1.0)
    assert np.max(np.abs(res.reconstruct() - a)) <= 1e-8 * scale


def test_svd_diagonal():
    assert svd(np.diag([3.0, 4.0])).singular_values == pytest.approx([4.0, 3.0])
    assert svd(np.eye(2)).singular_values == pytest.approx([1.0, 1.0])


def test_svd_reconstructs_random():
    a = np.random.default_rng(0).standard_normal((5, 3))
    res = svd(a)
    assert np.max(np.abs(res.reconstruct() - a)) < 1e-10
    _check_svd(a, res)


def test_svd_sign_convention():
    a = np.random.default_rng(1).standard_normal((6, 4))
    u = svd(a).u
    for col in u.T:
        first = col[np.nonzero(col)[0][0]]
        assert first >= 0


@pytest.mark.parametrize("shape", [(5, 3), (3, 5), (6, 6), (1, 4), (4, 1)])
def test_jacobi_matches_lapack(shape):
    a = np.random.default_rng(2).standard_normal(shape)
    ref, jac = svd(a), jacobi_svd(a)
    _check_svd(a, jac)
    assert np.allclose(jac.singular_values, ref.singular_values, atol=1e-12)
    # same sign convention, distinct singular values -> same vectors
    assert np.allclose(np.abs(jac.u.T @ ref.u), np.eye(min(shape)), atol=1e-8)


def test_jacobi_rank_deficient_completes_basis():
    a = np.outer([1.0, 2.0, 3.0, 4.0], [1.0, -1.0, 0.5])
    res = jacobi_svd(a)
    _check_svd(a, res)
    assert res.singular_values[1:] == pytest.approx([0.0, 0.0], abs=1e-12)


def test_jacobi_iteration_cap_reports_residual():
    a = np.random.default_rng(3).standard_normal((6, 5))
    with pytest.raises(SvdConvergenceError) as info:
        jacobi_svd(a, max_sweeps=1)
    assert info.value.residual > 0


def test_svd_rejects_non_finite():
    with pytest.raises(ValueError):
        svd(np.array([[1.0, np.nan]]))


def test_svd_deterministic():
    a = np.random.default_rng(4).standard_normal((30, 20))
    r1, r2 = svd(a), svd(a)
    assert np.array_equal(r1.u, r2.u) and np.array_equal(r1.singular_values, r2.singular_values)
    assert np.array_equal(r1.vt, r2.vt)


@settings(max_examples=60, deadline=None)
@given(matrices())
def test_svd_invariants(a):
    _check_svd(a, svd(a))


# ----------------------------------------------------------------- nuclear

def test_nuclear_norm_examples():
    assert nuclear_norm(np.diag([3.0, 4.0])) == pytest.approx(7.0)
    assert nuclear_norm(np.zeros((3, 4))) == 0.0
    rng = np.random.default_rng(5)
    u = rng.standard_normal(4)
    v = rng.standard_normal(6)
    u *= 2.0 / np.linalg.norm(u)
    v *= 3.0 / np.linalg.norm(v)
    assert nuclear_norm(np.outer(u, v)) == pytest.approx(6.0, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(matrices())
def test_norm_sandwich(a):
    fro = np.linalg.norm(a)
    nuc = nuclear_norm(a)
    rank = np.linalg.matrix_rank(a)
    assert fro <= nuc * (1 + 1e-12) + 1e-12
    assert nuc <= np.sqrt(max(rank, 1)) * fro * (1 + 1e-12) + 1e-12


def test_subgradient_examples():
    assert np.allclose(nuclear_subgradient(np.diag([3.0, 4.0])), np.eye(2))
    z = nuclear_subgradient(np.zeros((3, 2)))
    assert z.shape == (3, 2) and not z.any()


def test_subgradient_matches_finite_differences():
    a = np.random.default_rng(6).standard_normal((4, 4))
    g = nuclear_subgradient(a)
    h = 1e-6
    fd = np.empty_like(a)
    for idx in np.ndindex(a.shape):
        e = np.zeros_like(a)
        e[idx] = h
        fd[idx] = (nuclear_norm(a + e) - nuclear_norm(a - e)) / (2 * h)
    assert np.max(np.abs(fd - g)) < 1e-5


def test_subgradient_rank_tol_validation():
    with pytest.raises(ValueError):
        nuclear_subgradient(np.eye(2), rank_tol=0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**32 - 1), st.booleans())
def test_subgradient_inequality(m, n, seed, deficient):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    if deficient and min(m, n) > 1:
        a = np.outer(rng.standard_normal(m), rng.standard_normal(n))
    b = rng.standard_normal((m, n))
    g = nuclear_subgradient(a)
    assert np.linalg.norm(g, 2) <= 1 + 1e-12
    assert nuclear_norm(b) >= nuclear_norm(a) + np.sum(g * (b - a)) - 1e-9


# --------------------------------------------------------------------- svt

def test_svt_examples():
    assert np.allclose(svt(np.diag([3.0, 4.0]), 1.0), np.diag([2.0, 3.0]))
    a = np.random.default_rng(7).standard_normal((4, 3))
    assert np.max(np.abs(svt(a, 0.0) - a)) < 1e-10
    with pytest.raises(ValueError):
        svt(a, -1.0)


def test_svt_matches_brute_force_prox():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((2, 2))
    x_ref, v_ref = brute_force_prox(a, 0.5)
    x = svt(a, 0.5)
    assert np.max(np.abs(x - x_ref)) < 1e-3
    assert prox_objective(x, a, 0.5) <= v_ref + 1e-12


@settings(max_examples=50, deadline=None)
@given(matrices(8), st.floats(0, 5))
def test_svt_beats_trivial_points(a, tau):
    x = svt(a, tau)
    v = prox_objective(x, a, tau)
    assert v <= prox_objective(a, a, tau) + 1e-9
    assert v <= prox_objective(np.zeros_like(a), a, tau) + 1e-9


def test_svt_rank_cap():
    a = np.diag([5.0, 4.0, 3.0])
    assert np.allclose(svt(a, 1.0, max_rank=2), np.diag([4.0, 3.0, 0.0]))


# -------------------------------------------------------------------- rank

def test_numerical_rank_examples():
    assert numerical_rank(np.diag([5.0, 0.004]), 0.01) == 1
    assert numerical_rank(np.eye(3), 0.01) == 3
    assert numerical_rank(np.zeros((3, 3)), 0.01) == 0
    rng = np.random.default_rng(9)
    a = np.outer(rng.standard_normal(6), rng.standard_normal(5)) + np.outer(rng.standard_normal(6),
                                                                              rng.standard_normal(5))
    s = np.linalg.svd(a, compute_uv=False)
    assert s[1] > 0.01 * s[0] and s[2] < 1e-12 * s[0]  # oracle: exactly two significant values
    assert numerical_rank(a, 0.01) == 2
