"""Group-recovery scoring, error metrics and cross-validation."""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment

from .gowl import estimate_gowl, n_offdiag, vechs
from .owl import OscarParams, oscar_weights
from .structures import SolverConfig, SolverError
from .synth import standardize

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_GROUPS = 8


@dataclass
class EvalReport:
    weighted_f1: float
    mse: float
    abs_error: float
    sensitivity: float
    specificity: float
    best_permutation: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["best_permutation"] = {str(k): int(v) for k, v in self.best_permutation.items()}
        return d


@dataclass
class CvResult:
    best_lambda1: float
    best_lambda2: float
    grid: list
    criterion: str

    def to_dict(self):
        return asdict(self)


# -- 1-D Gaussian mixture ---------------------------------------------------

def _kmeanspp_centers(x, k, rng):
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.size)])
        else:
            centers.append(x[rng.choice(x.size, p=d2 / total)])
    return np.array(centers, dtype=float)


def _em_1d(x, k, rng, max_iter, tol, var_floor):
    means = _kmeanspp_centers(x, k, rng)
    variances = np.full(k, max(np.var(x), var_floor))
    weights = np.full(k, 1.0 / k)
    loglik = []
    for _ in range(max_iter):
        log_dens = (
            -0.5 * np.log(2 * np.pi * variances)[None, :]
            - 0.5 * (x[:, None] - means[None, :]) ** 2 / variances[None, :]
            + np.log(weights)[None, :]
        )
        top = log_dens.max(axis=1, keepdims=True)
        norm = top[:, 0] + np.log(np.exp(log_dens - top).sum(axis=1))
        resp = np.exp(log_dens - norm[:, None])
        loglik.append(float(norm.sum()))
        if len(loglik) > 1 and abs(loglik[-1] - loglik[-2]) < tol:
            break
        nk = resp.sum(axis=0) + 1e-300
        weights = np.maximum(nk / x.size, 1e-300)
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = np.maximum((resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk, var_floor)
    return weights, means, variances, resp, loglik


def fit_gmm_1d(x, components, seed=None, n_init=10, max_iter=100, tol=1e-8,
               var_floor=1e-8, relative_floor=1e-2):
    """Fit a 1-D Gaussian mixture by EM.

    Each of ``n_init`` runs starts from k-means++ centers drawn from one
    generator seeded with ``seed``; the run with the highest final
    log-likelihood wins.

    Component variances never drop below
    ``max(var_floor, relative_floor * var(x))``. Sparse estimates contain
    many exact zeros, and without a data-scaled floor a zero-width component
    on them has unbounded likelihood and wins every restart.

    Returns
    -------
    weights, means, variances : ndarray of shape (components,)
    resp : ndarray of shape (len(x), components)
    loglik : list of float
        Log-likelihood after each E-step; non-decreasing.
    """
    x = np.asarray(x, dtype=float).ravel()
    if components < 1:
        raise ValueError("components must be at least 1")
    rng = np.random.default_rng(seed)
    floor = max(var_floor, relative_floor * float(np.var(x)))
    best = None
    for _ in range(n_init):
        fit = _em_1d(x, components, rng, max_iter, tol, floor)
        if best is None or fit[4][-1] > best[4][-1]:
            best = fit
    return best


def gmm_cluster_entries(theta_hat, components, seed=None, n_init=10, relative_floor=1e-2):
    """Hard GMM labels for the strict-lower entries of ``theta_hat``.

    Labels are canonical: 0 is the component whose mean is nearest zero
    (background), the rest are numbered 1.. by increasing mean.
    """
    x = vechs(np.asarray(theta_hat, dtype=float))
    _, means, _, resp, _ = fit_gmm_1d(
        x, components, seed=seed, n_init=n_init, relative_floor=relative_floor
    )
    raw = resp.argmax(axis=1)
    background = int(np.argmin(np.abs(means)))
    rest = [c for c in np.argsort(means, kind="stable") if c != background]
    relabel = np.empty(components, dtype=int)
    relabel[background] = 0
    relabel[rest] = np.arange(1, components)
    return relabel[raw]


# -- weighted F1 ------------------------------------------------------------

def _f1_table(pred, truth, pred_labels, true_labels):
    """Contribution of assigning predicted label a to true label b."""
    N = truth.size
    table = np.zeros((len(pred_labels), len(true_labels)))
    for a, pa in enumerate(pred_labels):
        in_a = pred == pa
        for b, tb in enumerate(true_labels):
            in_b = truth == tb
            tp = np.count_nonzero(in_a & in_b)
            if tp:
                table[a, b] = (in_b.sum() / N) * 2.0 * tp / (in_a.sum() + in_b.sum())
    return table


def weighted_f1(pred, truth, fix_background=True):
    """Support-weighted F1, maximized over relabelings of ``pred``.

    Parameters
    ----------
    pred, truth : array_like of int
    fix_background : bool
        Keep predicted label 0 mapped to true label 0.

    Returns
    -------
    score : float
    mapping : dict
        Predicted label -> true label achieving ``score``.
    """
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {truth.size} labels")
    pred_labels = sorted(set(pred.tolist()))
    true_labels = sorted(set(truth.tolist()))
    # a predicted label left unmatched scores zero; model it as a dummy column
    slots = true_labels + [None] * max(0, len(pred_labels) - len(true_labels))
    table = _f1_table(pred, truth, pred_labels, true_labels)
    table = np.hstack([table, np.zeros((len(pred_labels), len(slots) - len(true_labels)))])

    fixed = {}
    if fix_background and 0 in pred_labels and 0 in true_labels:
        fixed = {pred_labels.index(0): true_labels.index(0)}
    free_rows = [a for a in range(len(pred_labels)) if a not in fixed]
    free_cols = [b for b in range(len(slots)) if b not in fixed.values()]
    sub = table[np.ix_(free_rows, free_cols)]

    if len(free_rows) <= MAX_EXHAUSTIVE_GROUPS:
        best, best_cols = -1.0, ()
        for cols in itertools.permutations(range(len(free_cols)), len(free_rows)):
            score = sub[range(len(free_rows)), cols].sum()
            if score > best + 1e-15:
                best, best_cols = score, cols
        assignment = dict(zip(free_rows, (free_cols[c] for c in best_cols)))
    else:
        r, c = linear_sum_assignment(sub, maximize=True)
        assignment = {free_rows[i]: free_cols[j] for i, j in zip(r, c)}
    assignment.update(fixed)

    score = float(sum(table[a, b] for a, b in assignment.items()))
    next_free = max(max(true_labels), max(pred_labels)) + 1
    mapping = {}
    for a, b in sorted(assignment.items()):
        if slots[b] is None:
            mapping[pred_labels[a]] = next_free
            next_free += 1
        else:
            mapping[pred_labels[a]] = slots[b]
    return min(score, 1.0), mapping


# -- error metrics ----------------------------------------------------------

def error_metrics(theta_hat, theta_star, threshold=1e-4):
    """MSE, mean absolute error, sensitivity and specificity over strict-lower entries.

    An entry counts as an edge when its magnitude exceeds ``threshold``.
    Rates with an empty denominator are reported as 1.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    if theta_hat.shape != theta_star.shape:
        raise ValueError(f"shape mismatch: {theta_hat.shape} vs {theta_star.shape}")
    est, true = vechs(theta_hat), vechs(theta_star)
    diff = est - true
    est_edge = np.abs(est) > threshold
    true_edge = np.abs(true) > threshold
    tp = np.count_nonzero(est_edge & true_edge)
    fn = np.count_nonzero(~est_edge & true_edge)
    tn = np.count_nonzero(~est_edge & ~true_edge)
    fp = np.count_nonzero(est_edge & ~true_edge)
    return {
        "mse": float(np.mean(diff ** 2)),
        "abs_error": float(np.mean(np.abs(diff))),
        "sensitivity": tp / (tp + fn) if tp + fn else 1.0,
        "specificity": tn / (tn + fp) if tn + fp else 1.0,
    }


def evaluate(theta_hat, truth, components=None, seed=None, threshold=1e-4, cluster_matrix=None):
    """Full report for one estimate against a :class:`GroundTruth`.

    ``cluster_matrix`` (default ``theta_hat``) is what the mixture model
    clusters; ``components`` defaults to ``n_groups + 1``.
    """
    if components is None:
        components = truth.n_groups + 1
    target = theta_hat if cluster_matrix is None else cluster_matrix
    pred = gmm_cluster_entries(target, components, seed=seed)
    score, mapping = weighted_f1(pred, truth.labels)
    metrics = error_metrics(theta_hat, truth.theta_star, threshold)
    return EvalReport(weighted_f1=score, best_permutation=mapping, **metrics)


# -- cross-validation -------------------------------------------------------

def default_grid(size=20):
    """Log-spaced OSCAR grid: lambda1 in [1e-4, 0.25], lambda2 in [1e-4, 0.1]."""
    lam1 = np.logspace(-4, np.log10(0.25), size)
    lam2 = np.logspace(-4, -1, size)
    return [OscarParams(float(a), float(b)) for a in lam1 for b in lam2]


def _fold_indices(n, folds, seed):
    order = np.random.default_rng(seed).permutation(n)
    return np.array_split(order, folds)


def _gowl_score(train, test, params, config):
    S_train = train.T @ train / train.shape[0]
    S_test = test.T @ test / test.shape[0]
    p = S_train.shape[0]
    xi = oscar_weights(params, n_offdiag(p))
    theta = estimate_gowl(S_train, xi, config).theta
    L = linalg.cholesky(theta, lower=True)
    return -2.0 * float(np.sum(np.log(np.diag(L)))) + float(np.sum(S_test * theta))


def _ccgowl_score(train, test, params, config):
    from .ccgowl import owl_regression

    n, p = train.shape
    Z = train / np.sqrt(n)
    xi = oscar_weights(params, p - 1)
    err = 0.0
    for j in range(p):
        others = np.arange(p) != j
        beta = owl_regression(Z[:, j], Z[:, others], xi, config).beta
        resid = test[:, j] - test[:, others] @ beta
        err += float(resid @ resid)
    return err


def cross_validate(X, grid=None, folds=2, estimator="ccgowl", config=None, seed=0, threads=1):
    """Pick OSCAR parameters by K-fold cross-validation.

    Rows are shuffled with ``seed`` and split into ``folds`` parts; each part
    is standardized on its own. The score is the held-out Gaussian negative
    log-likelihood ``-log det theta + tr(S_test theta)`` for ``gowl`` and the
    summed held-out squared prediction error of all node regressions for
    ``ccgowl``. Ties go to the smaller lambda1, then the smaller lambda2.
    """
    X = np.asarray(getattr(X, "data", X), dtype=float)
    grid = default_grid() if grid is None else [
        g if isinstance(g, OscarParams) else OscarParams(*g) for g in grid
    ]
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    n = X.shape[0]
    if n < 2 * folds:
        raise ValueError(f"n={n} is too small for {folds} folds")
    if estimator not in ("gowl", "ccgowl"):
        raise ValueError(f"unknown estimator {estimator!r}")
    config = config or SolverConfig()
    score_fn = _gowl_score if estimator == "gowl" else _ccgowl_score

    parts = _fold_indices(n, folds, seed)
    splits = []
    for f in range(folds):
        train_idx = np.concatenate([parts[g] for g in range(folds) if g != f])
        splits.append((standardize(X[train_idx]).data, standardize(X[parts[f]]).data))

    def score(params):
        total = 0.0
        for train, test in splits:
            try:
                total += score_fn(train, test, params, config)
            except (SolverError, linalg.LinAlgError) as exc:
                logger.info("grid point %s failed: %s", params, exc)
                return float("inf")
        return total / folds

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score, grid))
    else:
        scores = [score(g) for g in grid]

    records = [
        {"lambda1": g.lambda1, "lambda2": g.lambda2, "score": s} for g, s in zip(grid, scores)
    ]
    best = min(records, key=lambda r: (r["score"], r["lambda1"], r["lambda2"]))
    criterion = "heldout_nll" if estimator == "gowl" else "heldout_prediction_sse"
    return CvResult(best["lambda1"], best["lambda2"], records, criterion)
