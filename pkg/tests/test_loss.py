import numpy as np
import pytest
from oracles import fd_gradient_deviation

from nspod import loss as loss_mod
from nspod.data import Grid, SnapshotMatrix
from nspod.linalg import nuclear_norm
from nspod.loss import NonFiniteOutputError, evaluate_loss, loss_and_gradient, loss_gradient
from nspod.model import Mlp, MlpHead, PolynomialHead, ShapeModel, ShiftModel, shape_forward


def _random_instance(seed, M=4, N=4, K=2, hidden=(4,), heads=None):
    rng = np.random.default_rng(seed)
    grid = Grid(0.0, 3.0, M, -1.0, 1.0, N)
    Q = SnapshotMatrix(grid, rng.standard_normal((M, N)))
    shape = ShapeModel.init(K, rng, hidden=hidden, grid=grid)
    heads = heads or [1, "mlp"][:K]
    shift = ShiftModel.init(heads, rng, hidden=(3,))
    return Q, shape, shift


def _scalar_loss(Q, shape, shift, lam):
    # direct evaluation sample by sample, without the batched grid code
    g = Q.grid
    K = shape.K
    fields = np.zeros((K, g.M, g.N))
    recon = 0.0
    for m, x in enumerate(g.x):
        for n, t in enumerate(g.t):
            total = 0.0
            for k in range(K):
                h = shift.heads[k]
                d = float(h.forward(np.array([t]))[0])
                total += shape_forward(shape, x + d, t)[k]
                fields[k, m, n] = shape_forward(shape, x, t)[k]
            recon += (Q.values[m, n] - total) ** 2
    return recon + lam * sum(np.sum(np.linalg.svd(f, compute_uv=False)) for f in fields)


def test_perfect_fit_is_zero():
    grid = Grid(0.0, 4.0, 5, 0.0, 2.0, 3)
    a, b, c = 0.5, -1.0, 0.25
    shape = ShapeModel([Mlp([np.array([[a, b]])], [np.array([c])])])
    x, t = grid.mesh()
    Q = SnapshotMatrix(grid, a * x + b * t + c)
    shift = ShiftModel([PolynomialHead([0.0])])
    br, transformed, fields = evaluate_loss(Q, shape, shift, 0.0)
    assert br.total == pytest.approx(0.0, abs=1e-28)
    grads = loss_gradient(Q, shape, shift, 0.0)
    assert all(np.max(np.abs(p)) < 1e-13 for p in grads.flat())


def test_zero_networks_give_norm():
    Q, _, _ = _random_instance(0, K=1)
    zero = Mlp([np.zeros((3, 2)), np.zeros((1, 3))], [np.zeros(3), np.zeros(1)])
    shape = ShapeModel([zero])
    shift = ShiftModel([PolynomialHead([0.3])])
    br, _, _ = evaluate_loss(Q, shape, shift, 0.0)
    assert br.total == pytest.approx(np.sum(Q.values**2), rel=1e-14)
    assert br.regularization == 0.0


def test_matches_scalar_recomputation():
    Q, shape, shift = _random_instance(1)
    br, _, _ = evaluate_loss(Q, shape, shift, 0.1)
    assert br.total == pytest.approx(_scalar_loss(Q, shape, shift, 0.1), abs=1e-10)
    assert br.total == br.reconstruction + br.regularization
    assert br.reconstruction >= 0 and br.regularization >= 0


def test_lambda_zero_is_reconstruction_only():
    Q, shape, shift = _random_instance(2)
    br, transformed, _ = evaluate_loss(Q, shape, shift, 0.0)
    assert br.total == br.reconstruction == pytest.approx(np.sum((Q.values - transformed.sum(0)) ** 2))


def test_affine_shift_coefficient_gradient():
    Q, _, _ = _random_instance(3, K=1)
    a, b, c = 1.5, 0.3, -0.2
    shape = ShapeModel([Mlp([np.array([[a, b]])], [np.array([c])])])
    shift = ShiftModel([PolynomialHead([0.4, -0.1])])
    br, transformed, _ = evaluate_loss(Q, shape, shift, 0.0)
    residual = Q.values - transformed[0]
    grads = loss_gradient(Q, shape, shift, 0.0)
    assert grads.shift[0][0] == pytest.approx(np.sum(-2 * residual * a), abs=1e-12)


@pytest.mark.parametrize("seed,M,N,K,lam", [(10, 3, 3, 2, 0.1), (11, 4, 3, 1, 0.0), (12, 5, 4, 2, 0.0),
                                            (13, 3, 5, 1, 0.1), (14, 4, 4, 2, 0.1)])
def test_gradient_matches_finite_differences(seed, M, N, K, lam):
    # draw until every frame is clearly full rank, which keeps the nuclear
    # term differentiable at the evaluation point
    for attempt in range(50):
        Q, shape, shift = _random_instance(seed + 1000 * attempt, M, N, K, hidden=(4, 4))
        _, _, fields = evaluate_loss(Q, shape, shift, lam)
        spectra = [np.linalg.svd(f, compute_uv=False) for f in fields]
        if all(s[-1] > 1e-3 * s[0] and np.min(-np.diff(s)) > 1e-3 * s[0] for s in spectra):
            break
    else:
        pytest.fail("no full-rank instance found")
    assert fd_gradient_deviation(Q, shape, shift, lam) < 1e-4


def test_subgradient_seed_valid_for_rank_deficient_frame():
    Q, shape, shift = _random_instance(20, M=5, N=4, K=2, hidden=(4,))
    # block 0 ignores t -> its unshifted field has identical columns (rank 1)
    blk = shape.blocks[0]
    w0 = blk.weights[0].copy()
    w0[:, 1] = 0.0
    shape.blocks[0] = Mlp([w0] + blk.weights[1:], blk.biases)
    ev = loss_mod._GridEvaluation(Q, shape, shift, exact=True, keep=False)
    _, _, subgrads = loss_mod._objective(Q, ev, 0.1, 1e-7)
    f = ev.fields[0]
    assert np.linalg.matrix_rank(f) == 1
    rng = np.random.default_rng(21)
    for _ in range(10):
        b = rng.standard_normal(f.shape)
        assert nuclear_norm(b) >= nuclear_norm(f) + np.sum(subgrads[0] * (b - f)) - 1e-8


def test_grid_evaluation_matches_shape_forward_bitwise():
    Q, shape, shift = _random_instance(30, M=6, N=5, hidden=(8, 8))
    _, _, fields = evaluate_loss(Q, shape, shift, 0.05)
    for m, x in enumerate(Q.grid.x):
        for n, t in enumerate(Q.grid.t):
            assert np.array_equal(fields[:, m, n], shape_forward(shape, x, t))


def test_threads_do_not_change_gradient(monkeypatch):
    monkeypatch.setattr(loss_mod, "CHUNK_SIZE", 7)  # force several chunks
    Q, shape, shift = _random_instance(40, M=9, N=8, hidden=(6,))
    a = loss_and_gradient(Q, shape, shift, 0.1, threads=1)
    b = loss_and_gradient(Q, shape, shift, 0.1, threads=4)
    assert a[0] == b[0]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a[1].flat(), b[1].flat()))


def test_recompute_path_matches_cached(monkeypatch):
    Q, shape, shift = _random_instance(41, M=6, N=5, hidden=(5,))
    a = loss_and_gradient(Q, shape, shift, 0.1)
    monkeypatch.setattr(loss_mod, "CACHE_LIMIT", 0)
    b = loss_and_gradient(Q, shape, shift, 0.1)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a[1].flat(), b[1].flat()))


def test_non_finite_output_identified():
    Q, shape, shift = _random_instance(50, K=1, hidden=(3,))
    # constant positive hidden activations times huge output weights overflow
    shape.blocks[0] = Mlp([np.zeros((3, 2)), np.full((1, 3), 1e308)], [np.full(3, 5.0), np.zeros(1)])
    with pytest.raises(NonFiniteOutputError) as info:
        evaluate_loss(Q, shape, shift, 0.0)
    assert info.value.index == (0, 0, 0)


def test_negative_lambda_rejected():
    Q, shape, shift = _random_instance(51)
    with pytest.raises(ValueError):
        evaluate_loss(Q, shape, shift, -1.0)


def test_mlp_head_gradient_flows():
    Q, shape, shift = _random_instance(52, K=1, heads=["mlp"])
    assert isinstance(shift.heads[0], MlpHead)
    g = loss_gradient(Q, shape, shift, 0.0)
    assert any(np.any(p != 0) for p in g.shift)


def test_gradient_sampled_parameters():
    # 100 parameters drawn across every layer of both sub-networks
    Q, shape, shift = _random_instance(60, M=5, N=5, K=2, hidden=(6, 6))
    lam = 0.0
    _, grads = loss_and_gradient(Q, shape, shift, lam)
    flat = grads.flat()
    params = shape.parameters() + shift.parameters()
    n_shape = len(shape.parameters())
    slots = [(i, idx) for i, p in enumerate(params) for idx in np.ndindex(p.shape)]
    rng = np.random.default_rng(61)
    picks = [slots[j] for j in rng.choice(len(slots), size=100, replace=False)]
    assert {i for i, _ in picks} >= {0, len(params) - 1}
    h = 1e-5
    for i, idx in picks:
        vals = []
        for sgn in (1, -1):
            q = [x.copy() for x in params]
            q[i][idx] += sgn * h
            vals.append(evaluate_loss(Q, shape.with_parameters(q[:n_shape]),
                                      shift.with_parameters(q[n_shape:]), lam)[0].total)
        fd = (vals[0] - vals[1]) / (2 * h)
        assert abs(fd - flat[i][idx]) <= max(1e-4 * abs(fd), 1e-7)
