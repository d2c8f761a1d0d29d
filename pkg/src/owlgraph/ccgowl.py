"""Column-by-column graphical OWL.

Each variable is regressed on all the others with an OWL penalty; the
coefficients and residual variances are then combined into a precision
matrix through the block-inversion identities
``theta_jj = 1 / sigma_j^2`` and ``theta_{-j,j} = -beta_j / sigma_j^2``.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numba
import numpy as np
from scipy import linalg

from .owl import OscarParams, _prox_owl_kernel, check_weights, oscar_weights, owl_norm
from .structures import ColumnEstimate, PrecisionEstimate, SolverConfig, SolverError
from .synth import DesignMatrix, standardize

logger = logging.getLogger(__name__)

ASSEMBLY_MODES = ("scaled-average", "scaled-and", "raw-beta")


@numba.njit(cache=True, nogil=True)
def _gram_apply(G, A, At, v):
    # G @ v when the Gram matrix is stored, else A^T (A v) (cheaper for n < m / 2)
    if G.shape[0] > 0:
        return G @ v
    return At @ (A @ v)


@numba.njit(cache=True, nogil=True)
def _ista_kernel(G, A, At, c, yy, xi, t, shrink, tol, max_iter, max_backtracks, bb, beta, trace):
    # Loss ||y - A beta||^2 = yy - 2 c.beta + beta.G.beta with G = A^T A and
    # c = A^T y, so one Gram product per trial step covers loss and gradient.
    # With bb set, each line search starts from the short Barzilai-Borwein
    # step d.Gd / (2 Gd.Gd) of the last move d.
    # status: 0 converged, 1 max_iter reached, 2 line search failed
    m = beta.shape[0]
    Gb = _gram_apply(G, A, At, beta)
    loss = yy - 2.0 * (c @ beta) + beta @ Gb
    cand = np.empty(m)
    d = np.zeros(m)
    step = np.inf
    k = 0
    while k < max_iter:
        grad = 2.0 * (Gb - c)
        accepted = False
        for _ in range(max_backtracks):
            _prox_owl_kernel(beta - t * grad, xi, t, cand)
            Gc = _gram_apply(G, A, At, cand)
            loss_new = yy - 2.0 * (c @ cand) + cand @ Gc
            d = cand - beta
            bound = loss + grad @ d + (d @ d) / (2.0 * t)
            if loss_new <= bound + 1e-12 * abs(bound):
                accepted = True
                break
            t *= shrink
        if not accepted:
            return beta, k, step, t, 2
        step = np.sqrt(d @ d)
        if bb:
            Gd = Gc - Gb
            curv = d @ Gd
            if curv > 0.0:
                t = curv / (2.0 * (Gd @ Gd))
        beta = cand.copy()
        Gb = Gc
        loss = loss_new
        if trace.shape[0] > k:
            mags = np.sort(np.abs(beta))
            penalty = 0.0
            for i in range(m):
                penalty += xi[i] * mags[m - 1 - i]
            trace[k] = loss + penalty
        k += 1
        if step < tol:
            return beta, k, step, t, 0
    return beta, k, step, t, 1


def _curvature(A):
    """Gram matrix, or empty plus the design factors when ``A`` is wide."""
    n, m = A.shape
    if m <= 2 * n:
        return np.ascontiguousarray(A.T @ A), np.empty((0, 0)), np.empty((0, 0))
    return np.empty((0, 0)), np.ascontiguousarray(A), np.ascontiguousarray(A.T)


def _run_ista(curvature, c, yy, xi, t, config, beta0, record_trace):
    G, A, At = curvature
    m = c.shape[0]
    beta = np.zeros(m) if beta0 is None else np.array(beta0, dtype=float)
    if beta.shape != (m,):
        raise ValueError(f"beta0 must have shape ({m},), got {beta.shape}")
    trace = np.empty(config.max_iter if record_trace else 0)
    beta, k, step, t, status = _ista_kernel(
        G, A, At, np.ascontiguousarray(c, dtype=float), float(yy), xi, float(t), float(config.c), float(config.tol),
        int(config.max_iter), int(config.max_backtracks), config.step_rule == "bb", beta, trace,
    )
    if status == 2:
        raise SolverError(
            f"line search failed after {config.max_backtracks} backtracks",
            {"beta": beta, "iteration": k, "t": t},
        )
    return beta, k, status == 0, step, (trace[:k] if record_trace else None)


def owl_regression(y, A, xi, config=None, beta0=None, record_trace=False, step=None):
    """Minimize ``||y - A beta||^2 + owl_norm(beta, xi)`` by proximal gradient.

    The first step is ``min(t0, 1 / L)`` with ``L = 2 * ||A||_2^2``; later
    line searches start from the short Barzilai-Borwein step (or the previous
    step when ``config.step_rule == "warm"``). Each trial step is multiplied
    by ``config.c`` until the quadratic upper bound holds.
    Iteration stops when ``||beta_new - beta||_2 < config.tol``.

    Parameters
    ----------
    y : array_like of shape (n,)
    A : array_like of shape (n, m)
    xi : array_like of shape (m,)
    config : SolverConfig, optional
    beta0 : array_like of shape (m,), optional
        Starting point, zero by default.
    record_trace : bool
        Keep the objective after every step in ``objective_trace``.
    step : float, optional
        Initial step, replacing ``min(t0, 1 / L)``.

    Returns
    -------
    ColumnEstimate
        ``sigma2`` is the biased residual variance ``||y - A beta||^2 / n``.
    """
    config = config or SolverConfig()
    y = np.asarray(y, dtype=float)
    A = np.asarray(A, dtype=float)
    n, m = A.shape
    if m == 0 or not np.any(A):
        raise SolverError("degenerate design: no nonzero columns")
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    xi = np.ascontiguousarray(check_weights(xi))
    if xi.size != m:
        raise ValueError(f"need {m} weights, got {xi.size}")
    if step is None:
        step = min(config.t0, 1.0 / (2.0 * linalg.norm(A, 2) ** 2))
    fit = _run_ista(_curvature(A), A.T @ y, y @ y, xi, step, config, beta0, record_trace)
    return _finish(y, A, xi, *fit)


def _finish(y, A, xi, beta, k, converged, step_norm, trace):
    # residuals from A itself, not the Gram expansion, for an accurate sigma2
    resid = y - A @ beta
    loss = float(resid @ resid)
    return ColumnEstimate(
        beta=beta,
        sigma2=loss / y.size,
        iterations=int(k),
        converged=bool(converged),
        objective=loss + owl_norm(beta, xi),
        final_step=float(step_norm),
        objective_trace=trace,
    )


def assemble_precision(columns, mode="scaled-average"):
    """Combine per-column regressions into a symmetric matrix.

    ``T`` has ``T_jj = 1 / sigma_j^2`` and ``T_{-j,j} = -beta_j / sigma_j^2``.

    * ``scaled-average`` returns ``(T + T.T) / 2``;
    * ``scaled-and`` also zeroes every pair where either ``T_ij`` or
      ``T_ji`` is zero;
    * ``raw-beta`` uses ``T_jj = 1`` and ``T_{-j,j} = -beta_j`` (no variance
      scaling), then averages.
    """
    if mode not in ASSEMBLY_MODES:
        raise ValueError(f"unknown assembly mode {mode!r}; choose from {ASSEMBLY_MODES}")
    p = len(columns)
    T = np.zeros((p, p))
    for j, col in enumerate(columns):
        beta = np.asarray(col.beta, dtype=float)
        if beta.size != p - 1:
            raise ValueError(f"column {j}: expected {p - 1} coefficients, got {beta.size}")
        if not col.sigma2 > 0:
            raise ValueError(f"column {j}: residual variance must be positive, got {col.sigma2}")
        scale = 1.0 if mode == "raw-beta" else 1.0 / col.sigma2
        others = np.arange(p) != j
        T[j, j] = scale
        T[others, j] = -beta * scale
    theta = (T + T.T) / 2
    if mode == "scaled-and":
        theta[(T == 0) | (T.T == 0)] = 0.0
        np.fill_diagonal(theta, np.diag(T))
    return theta


def _unit_norm_design(X):
    if not isinstance(X, DesignMatrix) or not X.standardized:
        X = standardize(np.asarray(getattr(X, "data", X), dtype=float))
    n = X.data.shape[0]
    return X.data / np.sqrt(n)


def _solve_column(Z, gram, j, xi, step, config):
    others = np.arange(Z.shape[1]) != j
    A = Z[:, others]
    if A.shape[1] <= 2 * A.shape[0]:
        curvature = (np.ascontiguousarray(gram[np.ix_(others, others)]), np.empty((0, 0)), np.empty((0, 0)))
    else:
        curvature = _curvature(A)
    try:
        fit = _run_ista(curvature, gram[others, j], gram[j, j], xi, step, config, None, False)
    except SolverError as exc:
        raise SolverError(f"column {j}: {exc}", {**exc.state, "column": j}) from exc
    col = _finish(Z[:, j], A, xi, *fit)
    # unit-norm residual sum of squares is the per-sample residual variance
    # of the standardized data
    return replace(col, sigma2=col.sigma2 * Z.shape[0])


def estimate_ccgowl(X, params, config=None, assembly="scaled-average", threads=1):
    """ccGOWL estimate of the precision matrix.

    The standardized design is rescaled to unit-norm columns, one OWL
    regression with OSCAR weights is solved per variable, and the results
    are assembled with :func:`assemble_precision`.

    Parameters
    ----------
    X : DesignMatrix or array_like of shape (n, p)
        Standardized here when not flagged as already standardized.
    params : OscarParams or (lambda1, lambda2)
    config : SolverConfig, optional
    assembly : {"scaled-average", "scaled-and", "raw-beta"}
    threads : int
        Worker threads for the column problems. Results do not depend on it.

    Returns
    -------
    PrecisionEstimate
        Not guaranteed positive definite; see ``info["positive_definite"]``.
        ``info["columns"]`` holds the per-column estimates.
    """
    config = config or SolverConfig()
    if not isinstance(params, OscarParams):
        params = OscarParams(*params)
    if assembly not in ASSEMBLY_MODES:
        raise ValueError(f"unknown assembly mode {assembly!r}; choose from {ASSEMBLY_MODES}")
    Z = _unit_norm_design(X)
    n, p = Z.shape
    if n < 2 or p < 2:
        raise ValueError(f"need n >= 2 and p >= 2, got n={n}, p={p}")
    xi = oscar_weights(params, p - 1)
    gram = Z.T @ Z
    # by eigenvalue interlacing the full Gram bound is valid for every column
    step = min(config.t0, 1.0 / (2.0 * linalg.eigvalsh(gram)[-1]))

    def solve(j):
        return _solve_column(Z, gram, j, xi, step, config)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            columns = list(pool.map(solve, range(p)))
    else:
        columns = [solve(j) for j in range(p)]

    theta = assemble_precision(columns, assembly)
    try:
        np.linalg.cholesky(theta)
        positive_definite = True
    except np.linalg.LinAlgError:
        positive_definite = False
    converged = all(c.converged for c in columns)
    if not converged:
        bad = [j for j, c in enumerate(columns) if not c.converged]
        logger.warning("ccGOWL columns %s hit max_iter=%d", bad, config.max_iter)
    return PrecisionEstimate(
        theta=theta,
        iterations=max(c.iterations for c in columns),
        final_gap=max(c.final_step for c in columns),
        objective=float(sum(c.objective for c in columns)),
        converged=converged,
        method="ccgowl",
        info={
            "positive_definite": positive_definite,
            "assembly": assembly,
            "column_iterations": [c.iterations for c in columns],
            "columns": columns,
        },
    )


def grouping_certificate(X, j, lambda2, atol=1e-8):
    """Coefficient pairs of column ``j`` that are guaranteed to be equal.

    For unit-norm, centered columns ``a_k, a_l`` of ``X[:, -j]`` with
    correlation ``rho = a_k . a_l``, the pair is certified when
    ``sqrt(2 - 2 rho) < lambda2 / (2 ||X[:, j]||_2)``. The factor 2 matches
    the unhalved squared loss minimized by :func:`owl_regression`.

    Parameters
    ----------
    X : array_like of shape (n, p)
    j : int
        Response column.
    lambda2 : float
        Smallest gap between consecutive OWL weights
        (see :func:`owlgraph.owl.min_weight_gap`).

    Returns
    -------
    list of (k, l)
        Positions ``k < l`` in the coefficient vector of column ``j``.
    """
    X = np.asarray(getattr(X, "data", X), dtype=float)
    if lambda2 <= 0:
        raise ValueError("lambda2 must be positive")
    others = np.arange(X.shape[1]) != j
    A = X[:, others]
    if np.any(np.abs(A.sum(axis=0)) > atol) or np.any(
        np.abs(np.linalg.norm(A, axis=0) - 1.0) > atol
    ):
        raise ValueError("columns of X[:, -j] must be centered with unit norm")
    bound = lambda2 / (2.0 * np.linalg.norm(X[:, j]))
    rho = np.clip(A.T @ A, -1.0, 1.0)
    dist = np.sqrt(np.maximum(2.0 - 2.0 * rho, 0.0))
    ks, ls = np.nonzero(np.triu(dist < bound, 1))
    return [(int(k), int(l)) for k, l in zip(ks, ls)]
