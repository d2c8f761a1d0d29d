"""Ordered weighted l1 (OWL) norm, OSCAR weights and the OWL proximal map.

The proximal map follows the sort / shift / isotonic-projection / unsort
decomposition. The isotonic step is a stack-based pool-adjacent-violators
pass compiled with numba.
"""
from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class OscarParams:
    """Sparsity (``lambda1``) and grouping (``lambda2``) levels of OSCAR."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError(
                f"OSCAR parameters must be nonnegative, got "
                f"lambda1={self.lambda1}, lambda2={self.lambda2}"
            )


def check_weights(xi):
    """Validate an OWL weight vector and return it as a float array.

    Raises ``ValueError`` unless ``xi`` is a nonempty, nonnegative,
    non-increasing 1-D sequence.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1 or xi.size == 0:
        raise ValueError("weights must be a nonempty 1-D sequence")
    if np.any(xi < 0):
        raise ValueError("weights must be nonnegative")
    if np.any(np.diff(xi) > 0):
        raise ValueError("weights must be non-increasing")
    return xi


def oscar_weights(params, K):
    """OSCAR weights ``xi_i = lambda1 + lambda2 * (K - i)`` for ``i = 1..K``.

    Parameters
    ----------
    params : OscarParams or tuple of (lambda1, lambda2)
    K : int
        Number of penalized entries.

    Returns
    -------
    xi : ndarray of shape (K,)
        Non-increasing, nonnegative weights.
    """
    if not isinstance(params, OscarParams):
        params = OscarParams(*params)
    K = int(K)
    if K < 1:
        raise ValueError(f"K must be positive, got {K}")
    return params.lambda1 + params.lambda2 * np.arange(K - 1, -1, -1, dtype=float)


def owl_norm(v, xi):
    """Sum of ``xi_i * |v|_[i]`` with ``|v|_[i]`` the i-th largest magnitude."""
    v = np.asarray(v, dtype=float).ravel()
    xi = np.asarray(xi, dtype=float).ravel()
    if v.shape != xi.shape:
        raise ValueError(f"length mismatch: v has {v.size}, xi has {xi.size}")
    return float(np.dot(xi, np.sort(np.abs(v))[::-1]))


@numba.njit(cache=True, nogil=True)
def _pav_decreasing(y, out):
    # Blocks live on a stack as (start, length, sum); a new element is pushed,
    # then merged backwards while the last block mean exceeds its predecessor's.
    n = y.shape[0]
    start = np.empty(n, dtype=np.int64)
    length = np.empty(n, dtype=np.int64)
    total = np.empty(n, dtype=np.float64)
    top = -1
    for i in range(n):
        top += 1
        start[top] = i
        length[top] = 1
        total[top] = y[i]
        while top > 0 and total[top - 1] * length[top] < total[top] * length[top - 1]:
            total[top - 1] += total[top]
            length[top - 1] += length[top]
            top -= 1
    for b in range(top + 1):
        value = total[b] / length[b]
        for i in range(start[b], start[b] + length[b]):
            out[i] = value
    return out


@numba.njit(cache=True, nogil=True)
def _prox_owl_kernel(v, xi, t, out):
    n = v.shape[0]
    magnitude = np.abs(v)
    # mergesort is stable, so ties keep their original order
    order = np.argsort(-magnitude, kind="mergesort")
    shifted = np.empty(n)
    for i in range(n):
        shifted[i] = magnitude[order[i]] - t * xi[i]
    pooled = _pav_decreasing(shifted, np.empty(n))
    for i in range(n):
        k = order[i]
        value = pooled[i] if pooled[i] > 0.0 else 0.0
        if v[k] > 0.0:
            out[k] = value
        elif v[k] < 0.0:
            out[k] = -value
        else:
            out[k] = 0.0
    return out


def pav_nonincreasing(y):
    """Euclidean projection of ``y`` onto the cone of non-increasing sequences.

    Pooled blocks carry their block mean; every member of a block receives
    the same floating-point value.
    """
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("pav_nonincreasing needs a nonempty input")
    return _pav_decreasing(y, np.empty_like(y))


def prox_owl(v, xi, t=1.0):
    """Proximal map of ``t * owl_norm(., xi)`` evaluated at ``v``.

    Solves ``argmin_x t * sum_i xi_i |x|_[i] + 0.5 * ||x - v||^2``.

    Parameters
    ----------
    v : array_like of shape (K,)
    xi : array_like of shape (K,)
        Non-increasing, nonnegative weights.
    t : float
        Positive step size; scales the weights.

    Returns
    -------
    x : ndarray of shape (K,)

    Notes
    -----
    Ties in ``|v|`` are broken by original index, so output is deterministic.
    Entries pooled by the isotonic projection are bit-identical in magnitude.
    """
    v = np.asarray(v, dtype=np.float64)
    shape = v.shape
    v = np.ascontiguousarray(v.ravel())
    xi = np.ascontiguousarray(xi, dtype=np.float64).ravel()
    if v.shape != xi.shape:
        raise ValueError(f"length mismatch: v has {v.size}, xi has {xi.size}")
    if not t > 0:
        raise ValueError(f"step size must be positive, got {t}")
    return _prox_owl_kernel(v, xi, float(t), np.empty_like(v)).reshape(shape)


def soft_threshold(v, lam):
    """Elementwise soft-thresholding ``sign(v) * max(|v| - lam, 0)``."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def min_weight_gap(xi):
    """Smallest gap between consecutive weights (0 for a single weight)."""
    xi = np.asarray(xi, dtype=float)
    if xi.size < 2:
        return 0.0
    return float(np.min(xi[:-1] - xi[1:]))
