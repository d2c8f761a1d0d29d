"""Reference solvers used only by the tests.

Each one is written independently of the package code paths it checks.
"""
import itertools

import numpy as np
from scipy import linalg


def owl_value(x, xi):
    return float(np.dot(np.sort(np.abs(x))[::-1], xi))


def prox_objective(x, v, xi, t):
    return t * owl_value(x, xi) + 0.5 * float(np.sum((x - v) ** 2))


def _compositions(n):
    # all ways to cut range(n) into consecutive nonempty blocks
    for cuts in itertools.product((False, True), repeat=n - 1):
        blocks, start = [], 0
        for i, cut in enumerate(cuts, start=1):
            if cut:
                blocks.append((start, i))
                start = i
        blocks.append((start, n))
        yield blocks


def brute_force_prox(v, xi, t=1.0):
    """Exact OWL prox by enumerating every magnitude ordering and tie pattern.

    The minimizer shares signs with ``v`` and its magnitudes, listed in some
    order, form blocks of equal values (the last block possibly zero). For
    every ordering and blocking the restricted problem is a separable
    quadratic with a closed-form solution; each candidate is evaluated with
    the true objective and the best one is returned. Feasible for len <= 5.
    """
    v = np.asarray(v, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n = v.size
    mag = np.abs(v)
    sign = np.sign(v)
    best, best_val = np.zeros(n), prox_objective(np.zeros(n), v, xi, t)
    for perm in itertools.permutations(range(n)):
        perm = np.array(perm)
        for blocks in _compositions(n):
            for zero_last in (False, True):
                u = np.empty(n)
                for b, (s, e) in enumerate(blocks):
                    if zero_last and b == len(blocks) - 1:
                        u[s:e] = 0.0
                    else:
                        u[s:e] = max(mag[perm[s:e]].mean() - t * xi[s:e].mean(), 0.0)
                x = np.empty(n)
                x[perm] = u
                x *= sign
                val = prox_objective(x, v, xi, t)
                if val < best_val:
                    best, best_val = x, val
    return best


def glasso_dual(S, lam, tol=1e-12, max_iter=200000):
    """Graphical lasso with unpenalized diagonal, solved on the dual.

    Maximizes ``log det(S + W)`` over symmetric ``W`` with zero diagonal and
    ``|W_ij| <= lam`` by projected gradient ascent with backtracking, then
    returns ``(S + W)^-1``. The primal penalty is ``lam * sum_{i != j}
    |theta_ij|``.
    """
    S = np.asarray(S, dtype=float)
    p = S.shape[0]
    off = ~np.eye(p, dtype=bool)

    def project(W):
        W = np.clip(W, -lam, lam)
        W[~off] = 0.0
        return 0.5 * (W + W.T)

    def value(W):
        try:
            L = linalg.cholesky(S + W, lower=True)
        except linalg.LinAlgError:
            return -np.inf
        return 2.0 * np.sum(np.log(np.diag(L)))

    W = np.zeros((p, p))
    f = value(W)
    step = 1.0
    for _ in range(max_iter):
        grad = linalg.inv(S + W)
        while True:
            cand = project(W + step * grad)
            fc = value(cand)
            if fc >= f + np.sum(grad * (cand - W)) - np.sum((cand - W) ** 2) / (2 * step):
                break
            step *= 0.5
        moved = np.max(np.abs(cand - W))
        W, f = cand, fc
        step *= 2.0
        if moved < tol:
            break
    theta = linalg.inv(S + W)
    return 0.5 * (theta + theta.T)


def lasso_cd(y, A, lam, tol=1e-14, max_iter=100000):
    """Coordinate descent for ``||y - A b||^2 + lam * ||b||_1``."""
    y = np.asarray(y, dtype=float)
    A = np.asarray(A, dtype=float)
    m = A.shape[1]
    b = np.zeros(m)
    r = y.copy()
    sq = np.sum(A ** 2, axis=0)
    for _ in range(max_iter):
        biggest = 0.0
        for k in range(m):
            old = b[k]
            rho = A[:, k] @ r + sq[k] * old
            new = np.sign(rho) * max(abs(rho) - lam / 2, 0.0) / sq[k]
            if new != old:
                r -= A[:, k] * (new - old)
                b[k] = new
                biggest = max(biggest, abs(new - old))
        if biggest < tol:
            break
    return b


def central_difference_gradient(f, X, h=1e-6):
    """Symmetric-direction central differences of ``f`` at symmetric ``X``.

    Entry (i, j) is the derivative along ``E_ij``; off-diagonal directions
    perturb both mirrored entries, so the result is halved there to match
    the gradient with respect to a single matrix entry.
    """
    p = X.shape[0]
    G = np.zeros_like(X)
    for i in range(p):
        for j in range(i, p):
            E = np.zeros_like(X)
            E[i, j] = E[j, i] = h
            d = (f(X + E) - f(X - E)) / (2 * h)
            G[i, j] = G[j, i] = d if i == j else d / 2
    return G


def random_pd(rng, p, cond=10.0):
    Q, _ = linalg.qr(rng.standard_normal((p, p)))
    eig = np.geomspace(1.0, cond, p)
    return (Q * eig) @ Q.T


def random_covariance(rng, p, n=None, cond=10.0):
    """Sample covariance of ``n`` draws from a random covariance with condition ``cond``."""
    n = n or 3 * p
    X = rng.standard_normal((n, p)) @ linalg.cholesky(random_pd(rng, p, cond))
    X -= X.mean(axis=0)
    return X.T @ X / n
