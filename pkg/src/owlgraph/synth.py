"""Synthetic grouped precision matrices, Gaussian sampling and standardization."""
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import linalg


@dataclass
class DesignMatrix:
    data: np.ndarray
    standardized: bool = False


@dataclass
class SampleCovariance:
    matrix: np.ndarray
    n: int


@dataclass
class GroundTruth:
    """True precision matrix with one group label per strict-lower entry.

    ``labels`` follows the ``vechs`` ordering; 0 marks background entries and
    ``1..n_groups`` the planted blocks.
    """

    theta_star: np.ndarray
    labels: np.ndarray
    n_groups: int
    blocks: list = field(default_factory=list)


@dataclass
class SynthConfig:
    p: int
    kappa: float = 0.1
    n: int = 100
    seed: Optional[int] = None
    noise_zero_prob: float = 0.5
    noise_range: Tuple[float, float] = (-0.1, 0.1)
    positive_mean_range: Tuple[float, float] = (0.9, 1.0)
    negative_mean_range: Tuple[float, float] = (-1.0, -0.9)
    min_eigenvalue: float = 1e-2
    permute: bool = False

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"p must be at least 2, got {self.p}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.n_groups < 1:
            raise ValueError(f"kappa * p rounds to zero groups (p={self.p}, kappa={self.kappa})")

    @property
    def n_groups(self):
        # round half up: p=25, kappa=0.1 gives 3 groups
        return int(math.floor(self.kappa * self.p + 0.5))

    @property
    def size_range(self):
        lo = max(2, math.ceil(0.1 * self.p - 1e-9))
        hi = math.floor(0.4 * self.p + 1e-9)
        return lo, hi

    def to_dict(self):
        return asdict(self)


def _strict_lower(p):
    cols, rows = np.triu_indices(p, 1)
    return rows, cols


def generate_grouped_precision(config, rng):
    """Plant ``round(kappa * p)`` blocks of equal-valued entries.

    Blocks are disjoint runs of consecutive variables whose sizes are drawn
    uniformly from ``[max(2, ceil(0.1 p)), floor(0.4 p)]``. Every strict-lower
    entry inside block ``g`` takes that block's mean, drawn from the
    positive range for odd ``g`` and the negative range for even ``g``.
    The diagonal is 1 and all other entries are 0.

    Raises
    ------
    ValueError
        When the blocks cannot be packed into ``p`` variables.
    """
    p, G = config.p, config.n_groups
    lo, hi = config.size_range
    if hi < lo or G * lo > p:
        raise ValueError(
            f"cannot pack {G} groups of size in [{lo}, {hi}] into p={p} variables"
        )
    for _ in range(1000):
        sizes = rng.integers(lo, hi + 1, size=G)
        if sizes.sum() <= p:
            break
    else:
        sizes = np.full(G, lo)
    # spread the unused variables over the G + 1 gaps around the blocks
    spare = p - int(sizes.sum())
    cuts = np.sort(rng.integers(0, spare + 1, size=G))
    gaps = np.diff(np.concatenate([[0], cuts]))

    theta = np.eye(p)
    order = rng.permutation(p) if config.permute else np.arange(p)
    blocks = []
    start = 0
    for g in range(G):
        start += int(gaps[g])
        members = order[start:start + int(sizes[g])]
        start += int(sizes[g])
        lo_m, hi_m = config.positive_mean_range if g % 2 == 0 else config.negative_mean_range
        value = rng.uniform(lo_m, hi_m)
        idx = np.ix_(members, members)
        block = np.full((len(members), len(members)), value)
        np.fill_diagonal(block, 1.0)
        theta[idx] = block
        blocks.append(sorted(int(m) for m in members))

    labels = np.zeros(p * (p - 1) // 2, dtype=int)
    rows, cols = _strict_lower(p)
    for g, members in enumerate(blocks, start=1):
        inside = np.isin(rows, members) & np.isin(cols, members)
        labels[inside] = g
    return GroundTruth(theta_star=theta, labels=labels, n_groups=G, blocks=blocks)


def noise_matrix(p, config, rng):
    """Sparse symmetric noise projected onto the PSD cone."""
    lo, hi = config.noise_range
    rows, cols = _strict_lower(p)
    values = rng.uniform(lo, hi, size=rows.size)
    values[rng.random(rows.size) < config.noise_zero_prob] = 0.0
    E = np.zeros((p, p))
    E[rows, cols] = values
    E[cols, rows] = values
    w, V = linalg.eigh(E)
    E = (V * np.maximum(w, 0.0)) @ V.T
    return 0.5 * (E + E.T)


def add_noise(truth, config, rng):
    """``theta_star + E`` with PSD noise ``E``, shifted so ``lambda_min >= delta``."""
    theta = np.asarray(getattr(truth, "theta_star", truth), dtype=float)
    M = theta + noise_matrix(theta.shape[0], config, rng)
    delta = config.min_eigenvalue
    lam_min = linalg.eigvalsh(M)[0]
    if lam_min < delta:
        M = M + (delta - lam_min) * np.eye(M.shape[0])
    # a tiny rounding margin keeps the floor true for the stored matrix
    while linalg.eigvalsh(M)[0] < delta:
        M = M + 1e-12 * np.eye(M.shape[0])
    return M


def sample_gaussian(theta, n, rng):
    """``n`` i.i.d. rows from ``N(0, theta^-1)`` via the Cholesky factor of ``theta``."""
    theta = np.asarray(theta, dtype=float)
    try:
        L = linalg.cholesky(theta, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("theta must be positive definite") from exc
    Z = rng.standard_normal((n, theta.shape[0]))
    # x = L^-T z has covariance (L L^T)^-1
    X = linalg.solve_triangular(L, Z.T, lower=True, trans="T").T
    return DesignMatrix(data=X, standardized=False)


def standardize(X):
    """Center each column and scale it by its biased standard deviation."""
    X = np.asarray(getattr(X, "data", X), dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    centered = X - X.mean(axis=0)
    sd = np.sqrt(np.mean(centered ** 2, axis=0))
    constant = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0)))
    if constant.size:
        raise ValueError(f"column {int(constant[0])} is constant")
    return DesignMatrix(data=centered / sd, standardized=True)


def sample_covariance(X):
    """Biased sample covariance ``X^T X / n`` of a standardized design."""
    if not isinstance(X, DesignMatrix) or not X.standardized:
        X = standardize(X)
    data = X.data
    n = data.shape[0]
    S = data.T @ data / n
    S = 0.5 * (S + S.T)
    return SampleCovariance(matrix=S, n=n)


@dataclass
class SyntheticInstance:
    truth: GroundTruth
    theta: np.ndarray
    X: DesignMatrix


def make_instance(config, rng=None):
    """Grouped truth, noisy precision and a sampled design for one replicate."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    truth = generate_grouped_precision(config, rng)
    theta = add_noise(truth, config, rng)
    X = sample_gaussian(theta, config.n, rng)
    return SyntheticInstance(truth=truth, theta=theta, X=X)
