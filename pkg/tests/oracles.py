"""Independent reference computations shared by the unit and acceptance suites."""
import numpy as np
from scipy.optimize import minimize

from nspod.loss import evaluate_loss, loss_and_gradient


def nuclear_norm_ref(x):
    return float(np.sum(np.linalg.svd(x, compute_uv=False)))


def prox_objective(x, a, tau):
    return 0.5 * float(np.sum((x - a) ** 2)) + tau * nuclear_norm_ref(x)


def pattern_search(fun, x0, step=1.0, min_step=1e-8, seed=0, stall=6):
    """Derivative-free minimiser: random orthonormal poll directions, step
    halved after ``stall`` unsuccessful polls. Works for non-smooth convex
    objectives where axis-aligned compass search can get stuck on kinks."""
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=np.float64)
    shape = x.shape
    x = x.ravel()
    fx = fun(x.reshape(shape))
    fails = 0
    while step > min_step:
        q, _ = np.linalg.qr(rng.standard_normal((x.size, x.size)))
        improved = False
        for d in np.concatenate([q.T, -q.T]):
            cand = x + step * d
            fc = fun(cand.reshape(shape))
            if fc < fx:
                x, fx, improved = cand, fc, True
                break
        if improved:
            fails = 0
        else:
            fails += 1
            if fails >= stall:
                step /= 2
                fails = 0
    return x.reshape(shape), fx


def factored_prox(a, tau, seed=0, restarts=3):
    """Prox of ``tau * ||.||_*`` at ``a`` without any SVD.

    Uses ||X||_* = min over X = U V^T of (||U||^2 + ||V||^2) / 2 and runs
    L-BFGS on the smooth problem 0.5 ||U V^T - A||^2 + tau/2 (||U||^2 + ||V||^2)
    from a few random starts. With full inner dimension this problem has no
    spurious local minima, and it has no kinks at rank-deficient points.
    """
    a = np.asarray(a, dtype=np.float64)
    m, n = a.shape
    r = min(m, n)

    def fun(z):
        u, v = z[:m * r].reshape(m, r), z[m * r:].reshape(n, r)
        res = u @ v.T - a
        val = 0.5 * np.sum(res * res) + 0.5 * tau * (np.sum(u * u) + np.sum(v * v))
        return val, np.concatenate([(res @ v + tau * u).ravel(), (res.T @ u + tau * v).ravel()])

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        out = minimize(fun, rng.standard_normal((m + n) * r), jac=True, method="L-BFGS-B",
                       options=dict(maxiter=10000, gtol=1e-13, ftol=1e-16))
        if best is None or out.fun < best.fun:
            best = out
    u, v = best.x[:m * r].reshape(m, r), best.x[m * r:].reshape(n, r)
    return u @ v.T


def brute_force_prox(a, tau, seed=0):
    return pattern_search(lambda x: prox_objective(x, a, tau), a, step=0.5, seed=seed)


def fd_gradient_deviation(Q, shape, shift, lam, h=1e-5):
    """Largest relative gap between the analytic gradient and central
    differences of ``evaluate_loss`` over every parameter entry."""
    _, grads = loss_and_gradient(Q, shape, shift, lam)
    flat = grads.flat()
    params = shape.parameters() + shift.parameters()
    n_shape = len(shape.parameters())
    worst = 0.0
    for i, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            vals = []
            for sgn in (1, -1):
                q = [x.copy() for x in params]
                q[i][idx] += sgn * h
                vals.append(evaluate_loss(Q, shape.with_parameters(q[:n_shape]),
                                          shift.with_parameters(q[n_shape:]), lam)[0].total)
            fd = (vals[0] - vals[1]) / (2 * h)
            an = flat[i][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-3))
    return worst
