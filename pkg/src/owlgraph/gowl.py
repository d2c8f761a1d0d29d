"""Graphical OWL: OWL-penalized Gaussian likelihood solved by proximal gradient.

The penalty is applied to both mirrored off-diagonal entries, so for a
symmetric ``theta`` it equals ``2 * owl_norm(vechs(theta), xi)``. With
constant weights this is exactly the graphical lasso penalty
``lam * sum_{i != j} |theta_ij|``, and the proximal step on the matrix reduces
to ``prox_owl`` on ``vechs`` with the same step size.
"""
import functools
import logging
import math

import numpy as np
from scipy import linalg

from .owl import check_weights, owl_norm, prox_owl
from .structures import PrecisionEstimate, SolverConfig, SolverError

logger = logging.getLogger(__name__)

STALL_STEPS = 20


@functools.lru_cache(maxsize=32)
def _strict_lower_indices(p):
    # triu indices in row-major order are the strict lower triangle in
    # column-major order once rows and columns are swapped
    cols, rows = np.triu_indices(p, 1)
    return rows, cols


def n_offdiag(p):
    return p * (p - 1) // 2


def vechs(M):
    """Strict lower triangle of ``M`` stacked column by column.

    >>> vechs(np.arange(9.).reshape(3, 3))
    array([3., 6., 7.])
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] < 2:
        raise ValueError("vechs needs p >= 2")
    rows, cols = _strict_lower_indices(M.shape[0])
    return M[rows, cols]


def unvechs(v, diag):
    """Symmetric matrix with strict lower triangle ``v`` and diagonal ``diag``."""
    diag = np.asarray(diag, dtype=float)
    p = diag.size
    v = np.asarray(v, dtype=float)
    if v.size != n_offdiag(p):
        raise ValueError(f"expected {n_offdiag(p)} entries for p={p}, got {v.size}")
    rows, cols = _strict_lower_indices(p)
    M = np.diag(diag)
    M[rows, cols] = v
    M[cols, rows] = v
    return M


def _cholesky(theta):
    try:
        return linalg.cholesky(theta, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None


def _logdet_from_chol(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _inverse_from_chol(L):
    inv = linalg.cho_solve((L, True), np.eye(L.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


def _matrix_of(S):
    return np.asarray(getattr(S, "matrix", S), dtype=float)


def _check_dims(S, xi):
    p = S.shape[0]
    if S.ndim != 2 or S.shape[1] != p:
        raise ValueError(f"S must be square, got shape {S.shape}")
    if xi.size != n_offdiag(p):
        raise ValueError(
            f"need {n_offdiag(p)} weights for p={p}, got {xi.size}"
        )


def penalty(theta, xi):
    """OWL penalty on both mirrored off-diagonal entries of ``theta``."""
    return 2.0 * owl_norm(vechs(theta), xi)


def gowl_objective(theta, S, xi):
    """``-log det(theta) + tr(S theta) + 2 * owl_norm(vechs(theta), xi)``.

    Raises ``SolverError`` when ``theta`` is not positive definite.
    """
    theta = np.asarray(theta, dtype=float)
    S = _matrix_of(S)
    xi = np.asarray(xi, dtype=float)
    _check_dims(S, xi)
    L = _cholesky(theta)
    if L is None:
        raise SolverError("theta is not positive definite")
    return -_logdet_from_chol(L) + float(np.sum(S * theta)) + penalty(theta, xi)


def nll_gradient(theta, S):
    """Gradient ``S - theta^-1`` of the smooth part, via Cholesky."""
    L = _cholesky(np.asarray(theta, dtype=float))
    if L is None:
        raise SolverError("theta is not positive definite")
    G = _matrix_of(S) - _inverse_from_chol(L)
    return 0.5 * (G + G.T)


def matrix_prox(M, xi, t=1.0):
    """Apply ``prox_owl`` to ``vechs(M)`` and mirror; the diagonal is kept."""
    M = np.asarray(M, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if xi.size != n_offdiag(M.shape[0]):
        raise ValueError(
            f"need {n_offdiag(M.shape[0])} weights for p={M.shape[0]}, got {xi.size}"
        )
    return unvechs(prox_owl(vechs(M), xi, t), np.diag(M))


def duality_gap(theta, S, xi):
    """Gap ``tr(S theta) + 2 * owl_norm(vechs(theta), xi) - p``.

    Exact when ``theta^-1 - S`` is a feasible dual point; zero at the optimum.
    """
    theta = np.asarray(theta, dtype=float)
    S = _matrix_of(S)
    xi = np.asarray(xi, dtype=float)
    _check_dims(S, xi)
    return float(np.sum(S * theta)) + penalty(theta, xi) - theta.shape[0]


def dual_point(theta_inv, S, xi):
    """Feasible dual matrix nearest to ``theta^-1 - S``.

    The off-diagonal part is projected onto the dual OWL ball (Moreau:
    ``w - prox_owl(w, xi)``); the unpenalized diagonal is set to zero.
    """
    w = vechs(theta_inv - S)
    w = w - prox_owl(w, xi, 1.0)
    return unvechs(w, np.zeros(S.shape[0]))


def primal_dual_gap(theta, S, xi, theta_inv=None, primal=None):
    """Primal objective minus the dual value at ``dual_point``.

    Nonnegative by weak duality; ``inf`` while ``S + W`` is not positive
    definite.
    """
    theta = np.asarray(theta, dtype=float)
    S = _matrix_of(S)
    xi = np.asarray(xi, dtype=float)
    if theta_inv is None:
        theta_inv = _inverse_from_chol(_cholesky(theta))
    if primal is None:
        primal = gowl_objective(theta, S, xi)
    W = dual_point(theta_inv, S, xi)
    L = _cholesky(S + W)
    if L is None:
        return math.inf
    return primal - (_logdet_from_chol(L) + S.shape[0])


def _stopping_gap(theta, S, xi, inv, objective):
    # a certified primal-dual gap alone bounds only the objective error, so the
    # first-order gap formula must also be small
    return max(primal_dual_gap(theta, S, xi, inv, objective), abs(duality_gap(theta, S, xi)))


def estimate_gowl(S, xi, config=None, callback=None):
    """GOWL estimate of the precision matrix.

    Proximal gradient descent with a backtracking line search that keeps
    every iterate positive definite. Each search starts from the short
    Barzilai-Borwein step unless ``config.step_rule == "warm"``. Stops once
    both the primal-dual gap and ``|duality_gap|`` are at most ``config.tol``.

    Parameters
    ----------
    S : array_like or SampleCovariance
        Sample covariance, shape (p, p).
    xi : array_like of shape (p * (p - 1) / 2,)
        OWL weights.
    config : SolverConfig, optional
    callback : callable, optional
        Called as ``callback(k, theta, objective, t)`` after every accepted
        step.

    Returns
    -------
    PrecisionEstimate
        ``converged`` is False when ``max_iter`` ran out.

    Raises
    ------
    SolverError
        Non-PD initialization, or no acceptable step after
        ``config.max_backtracks`` reductions.
    """
    config = config or SolverConfig()
    S = _matrix_of(S)
    S = 0.5 * (S + S.T)
    xi = check_weights(xi)
    _check_dims(S, xi)
    p = S.shape[0]

    if config.theta0 is None:
        diag = np.diag(S)
        if np.any(diag <= 0):
            raise SolverError("S must have a positive diagonal")
        theta = np.diag(1.0 / diag)
    else:
        theta = np.array(config.theta0, dtype=float)
        theta = 0.5 * (theta + theta.T)
    L = _cholesky(theta)
    if L is None:
        raise SolverError("initial theta is not positive definite", {"theta": theta})

    inv = _inverse_from_chol(L)
    smooth = -_logdet_from_chol(L) + float(np.sum(S * theta))
    objective = smooth + penalty(theta, xi)
    t = config.t0
    gap = _stopping_gap(theta, S, xi, inv, objective)
    converged = gap <= config.tol
    stalled = False
    flat_steps = 0
    k = 0
    while not converged and k < config.max_iter:
        grad = S - inv
        for _ in range(config.max_backtracks):
            cand = matrix_prox(theta - t * grad, xi, t)
            L_new = _cholesky(cand)
            if L_new is not None:
                smooth_new = -_logdet_from_chol(L_new) + float(np.sum(S * cand))
                step = cand - theta
                bound = smooth + float(np.sum(step * grad)) + float(np.sum(step * step)) / (2 * t)
                if smooth_new <= bound + 1e-12 * abs(bound):
                    break
            t *= config.c
        else:
            raise SolverError(
                f"no positive definite descent step after {config.max_backtracks} backtracks",
                {"theta": theta, "iteration": k, "t": t},
            )
        k += 1
        theta_old, grad_old = theta, grad
        theta, L, smooth = cand, L_new, smooth_new
        inv = _inverse_from_chol(L)
        if config.step_rule == "bb":
            # backtracking only shrinks t, so reseed it from the local curvature
            d_theta = theta - theta_old
            d_grad = S - inv - grad_old
            curv = float(np.sum(d_theta * d_grad))
            if curv > 0:
                t = curv / float(np.sum(d_grad * d_grad))
        previous = objective
        objective = smooth + penalty(theta, xi)
        if callback is not None:
            callback(k, theta, objective, t)
        previous_gap = gap
        gap = _stopping_gap(theta, S, xi, inv, objective)
        converged = gap <= config.tol
        # rounding can keep the gap above a very small tol; give up only after
        # a sustained run of steps that change nothing
        flat = abs(previous - objective) <= 1e-13 * max(1.0, abs(previous))
        flat_steps = flat_steps + 1 if (flat and gap >= previous_gap) else 0
        if not converged and flat_steps >= STALL_STEPS:
            stalled = converged = True

    if not converged:
        logger.warning("GOWL stopped at max_iter=%d with gap %.3g", config.max_iter, gap)
    return PrecisionEstimate(
        theta=theta,
        iterations=k,
        final_gap=float(gap),
        objective=float(objective),
        converged=bool(converged),
        method="gowl",
        info={"stalled": stalled, "step": t},
    )
