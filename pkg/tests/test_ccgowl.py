import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owlgraph.ccgowl import (
    assemble_precision,
    estimate_ccgowl,
    grouping_certificate,
    owl_regression,
)
from owlgraph.owl import min_weight_gap, oscar_weights, owl_norm, prox_owl
from owlgraph.structures import ColumnEstimate, SolverConfig, SolverError
from owlgraph.synth import SynthConfig, make_instance, standardize
from oracles import lasso_cd

TIGHT = SolverConfig(tol=1e-13, max_iter=200000)


def unit_columns(rng, n, m):
    A = rng.standard_normal((n, m))
    A -= A.mean(axis=0)
    return A / np.linalg.norm(A, axis=0)


def test_zero_penalty_is_least_squares():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((40, 5))
    y = rng.standard_normal(40)
    col = owl_regression(y, A, np.zeros(5), TIGHT)
    ref = np.linalg.lstsq(A, y, rcond=None)[0]
    np.testing.assert_allclose(col.beta, ref, atol=1e-6)
    assert col.converged
    assert col.sigma2 == pytest.approx(np.mean((y - A @ ref) ** 2))


def test_orthonormal_design_is_one_prox():
    # ||y - A b||^2 = ||A^T y - b||^2 + const, so the minimizer is the prox of
    # the OWL norm with halved weights at A^T y
    rng = np.random.default_rng(1)
    A, _ = np.linalg.qr(rng.standard_normal((30, 6)))
    y = 3 * rng.standard_normal(30)
    xi = oscar_weights((0.5, 0.3), 6)
    col = owl_regression(y, A, xi, TIGHT)
    np.testing.assert_allclose(col.beta, prox_owl(A.T @ y, xi / 2), atol=1e-9)


def test_zero_response():
    rng = np.random.default_rng(2)
    col = owl_regression(np.zeros(20), rng.standard_normal((20, 4)), oscar_weights((0.1, 0.1), 4))
    np.testing.assert_array_equal(col.beta, 0.0)
    assert col.iterations == 1


def test_lasso_reduction():
    rng = np.random.default_rng(3)
    for _ in range(5):
        A = unit_columns(rng, 50, 8)
        y = A @ rng.standard_normal(8) + 0.3 * rng.standard_normal(50)
        lam = rng.uniform(0.05, 0.5)
        col = owl_regression(y, A, np.full(8, lam), TIGHT)
        np.testing.assert_allclose(col.beta, lasso_cd(y, A, lam), atol=1e-6)


def test_wide_design_matches_gram_path():
    # n < m / 2 switches to products with A instead of the Gram matrix
    rng = np.random.default_rng(4)
    A = rng.standard_normal((10, 30))
    y = rng.standard_normal(10)
    xi = oscar_weights((0.2, 0.01), 30)
    wide = owl_regression(y, A, xi, TIGHT)
    # zero rows leave the objective unchanged but make the design tall
    tall = owl_regression(np.concatenate([y, np.zeros(20)]), np.vstack([A, np.zeros((20, 30))]), xi, TIGHT)
    np.testing.assert_allclose(wide.beta, tall.beta, atol=1e-9)
    # optimality: the objective cannot be lowered by a small random move
    f = lambda b: np.sum((y - A @ b) ** 2) + owl_norm(b, xi)
    for _ in range(20):
        assert f(wide.beta) <= f(wide.beta + 1e-4 * rng.standard_normal(30)) + 1e-12


def test_descent_and_fixed_point():
    rng = np.random.default_rng(5)
    A = unit_columns(rng, 60, 10)
    y = A @ rng.standard_normal(10)
    xi = oscar_weights((0.05, 0.02), 10)
    col = owl_regression(y, A, xi, SolverConfig(tol=1e-10, max_iter=50000), record_trace=True)
    trace = col.objective_trace
    assert trace.size == col.iterations
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]))
    again = owl_regression(y, A, xi, SolverConfig(tol=1e-10), beta0=col.beta)
    assert again.iterations <= 1


def test_regression_errors():
    with pytest.raises(SolverError):
        owl_regression(np.ones(5), np.zeros((5, 2)), [0.1, 0.1])
    with pytest.raises(ValueError):
        owl_regression(np.ones(4), np.ones((5, 2)), [0.1, 0.1])
    with pytest.raises(ValueError):
        owl_regression(np.ones(5), np.eye(5)[:, :2], [0.1])


# -- assembly -------------------------------------------------------------------

def _columns_from_theta(theta):
    # regression of x_j on the rest: beta = -theta_{-j,j} / theta_jj,
    # residual variance 1 / theta_jj
    p = theta.shape[0]
    cols = []
    for j in range(p):
        others = np.arange(p) != j
        cols.append(ColumnEstimate(beta=-theta[others, j] / theta[j, j],
                                   sigma2=1 / theta[j, j], iterations=0, converged=True))
    return cols


def test_assembly_round_trip():
    theta = np.array([[2.0, -0.6, 0.3], [-0.6, 1.5, 0.0], [0.3, 0.0, 1.2]])
    np.testing.assert_allclose(assemble_precision(_columns_from_theta(theta)), theta, atol=1e-15)
    np.testing.assert_allclose(assemble_precision(_columns_from_theta(theta), "scaled-and"), theta, atol=1e-15)


def test_assembly_modes():
    cols = [ColumnEstimate(np.zeros(2), 0.5, 0, True) for _ in range(3)]
    np.testing.assert_array_equal(assemble_precision(cols), 2 * np.eye(3))
    # T_12 = 0.4 but T_21 = 0
    cols = [ColumnEstimate(np.array([0.0, 0.0]), 1.0, 0, True),
            ColumnEstimate(np.array([-0.4, 0.0]), 1.0, 0, True),
            ColumnEstimate(np.array([0.0, 0.0]), 1.0, 0, True)]
    assert assemble_precision(cols, "scaled-average")[0, 1] == pytest.approx(0.2)
    assert assemble_precision(cols, "scaled-and")[0, 1] == 0.0
    raw = assemble_precision([ColumnEstimate(np.array([0.5]), 4.0, 0, True),
                              ColumnEstimate(np.array([0.5]), 9.0, 0, True)], "raw-beta")
    np.testing.assert_array_equal(raw, [[1.0, -0.5], [-0.5, 1.0]])


def test_assembly_errors():
    with pytest.raises(ValueError):
        assemble_precision([ColumnEstimate(np.zeros(1), 0.0, 0, True)] * 2)
    with pytest.raises(ValueError):
        assemble_precision([ColumnEstimate(np.zeros(2), 1.0, 0, True)] * 2)
    with pytest.raises(ValueError):
        assemble_precision([ColumnEstimate(np.zeros(1), 1.0, 0, True)] * 2, "bogus")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["scaled-average", "scaled-and", "raw-beta"]))
def test_assembly_symmetric(seed, mode):
    rng = np.random.default_rng(seed)
    p = 5
    cols = [ColumnEstimate(np.where(rng.random(p - 1) < 0.4, 0.0, rng.standard_normal(p - 1)),
                           rng.uniform(0.1, 2), 0, True) for _ in range(p)]
    theta = assemble_precision(cols, mode)
    assert np.array_equal(theta, theta.T)


# -- full estimator -----------------------------------------------------------

def test_independent_data_shrinks_to_diagonal():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((2000, 5))
    est = estimate_ccgowl(X, (0.2, 0.0))
    off = ~np.eye(5, dtype=bool)
    assert np.all(est.theta[off] == 0.0)
    weak = estimate_ccgowl(X, (0.001, 0.0))
    assert np.all(np.abs(weak.theta[off]) < 0.1)


def test_threads_give_identical_result():
    inst = make_instance(SynthConfig(p=12, kappa=0.2, n=80, seed=3))
    a = estimate_ccgowl(inst.X, (0.05, 0.01), threads=1)
    b = estimate_ccgowl(inst.X, (0.05, 0.01), threads=4)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.info["column_iterations"] == b.info["column_iterations"]


def test_columns_match_standalone_regression():
    inst = make_instance(SynthConfig(p=8, kappa=0.2, n=100, seed=4))
    est = estimate_ccgowl(inst.X, (0.05, 0.01), TIGHT)
    Z = standardize(inst.X).data / np.sqrt(100)
    xi = oscar_weights((0.05, 0.01), 7)
    for j in (0, 5):
        others = np.arange(8) != j
        ref = owl_regression(Z[:, j], Z[:, others], xi, TIGHT)
        np.testing.assert_allclose(est.info["columns"][j].beta, ref.beta, atol=1e-9)
        assert est.info["columns"][j].sigma2 == pytest.approx(100 * ref.sigma2)


def test_estimate_metadata_and_errors():
    inst = make_instance(SynthConfig(p=6, kappa=0.2, n=50, seed=0))
    est = estimate_ccgowl(inst.X, (0.05, 0.01), assembly="raw-beta")
    assert est.method == "ccgowl" and est.info["assembly"] == "raw-beta"
    assert isinstance(est.info["positive_definite"], bool)
    assert len(est.info["column_iterations"]) == 6
    with pytest.raises(ValueError):
        estimate_ccgowl(inst.X, (0.05, 0.01), assembly="nope")
    with pytest.raises(ValueError):
        estimate_ccgowl(np.ones((1, 3)), (0.1, 0.1))


# -- grouping certificate -------------------------------------------------------

def near_duplicate_design(rng, n, m, dist):
    """Unit-norm centered design whose first two columns are ``dist`` apart."""
    A = unit_columns(rng, n, m)
    u, w = A[:, 0], A[:, 1]
    w = w - (w @ u) * u
    w /= np.linalg.norm(w)
    rho = 1 - dist ** 2 / 2
    A[:, 1] = rho * u + np.sqrt(1 - rho ** 2) * w
    return A


def test_certificate_examples():
    rng = np.random.default_rng(7)
    A = unit_columns(rng, 40, 3)
    A[:, 2] = A[:, 1]
    X = np.column_stack([A[:, 0], A[:, 1], A[:, 2]])
    assert (0, 1) in grouping_certificate(X, 0, 1e-3)
    # orthogonal columns are never certified with a unit bound
    Q, _ = np.linalg.qr(np.column_stack([np.ones(40), rng.standard_normal((40, 3))]))
    assert grouping_certificate(Q[:, 1:], 0, 1.0) == []


def test_certificate_validates_input():
    with pytest.raises(ValueError):
        grouping_certificate(np.ones((10, 3)), 0, 0.1)
    with pytest.raises(ValueError):
        grouping_certificate(unit_columns(np.random.default_rng(0), 10, 3), 0, 0.0)


def test_certified_pairs_are_pooled():
    rng = np.random.default_rng(8)
    violations = certified = 0
    for _ in range(40):
        A = near_duplicate_design(rng, 50, 5, rng.uniform(0.005, 0.05))
        y = A @ rng.uniform(0.5, 2.0, 5) + 0.2 * rng.standard_normal(50)
        y -= y.mean()
        X = np.column_stack([y, A])
        lam2 = 2.5 * np.linalg.norm(y) * np.sqrt(2 - 2 * A[:, 0] @ A[:, 1])
        xi = oscar_weights((0.01, lam2), 5)
        pairs = grouping_certificate(X, 0, min_weight_gap(xi))
        beta = owl_regression(y, A, xi).beta
        for k, l in pairs:
            certified += 1
            violations += beta[k] != beta[l]
    assert certified >= 40 and violations == 0


def test_unhalved_loss_needs_the_factor_two():
    # a pair inside lambda2 / ||y|| but outside lambda2 / (2 ||y||): the
    # residual points along a_k - a_l and the optimum splits the pair
    rng = np.random.default_rng(1)
    n = 60
    u, w = unit_columns(rng, n, 2).T
    w = w - (w @ u) * u
    w /= np.linalg.norm(w)
    rho = 1 - 0.1 ** 2 / 2
    ak = np.sqrt((1 + rho) / 2) * u + np.sqrt((1 - rho) / 2) * w
    al = np.sqrt((1 + rho) / 2) * u - np.sqrt((1 - rho) / 2) * w
    A = np.column_stack([ak, al])
    y = (ak - al) / np.linalg.norm(ak - al) + 1.5 * (ak + al) / np.linalg.norm(ak + al)
    lam2 = 0.19
    dist = np.linalg.norm(ak - al)
    assert dist < lam2 / np.linalg.norm(y)
    assert grouping_certificate(np.column_stack([y, A]), 0, lam2) == []
    beta = owl_regression(y, A, oscar_weights((0.0, lam2), 2), TIGHT).beta
    assert np.all(beta > 0) and beta[0] - beta[1] > 0.5


def test_step_rules_reach_the_same_solution():
    rng = np.random.default_rng(12)
    A = unit_columns(rng, 30, 12)
    y = A @ rng.standard_normal(12) + 0.1 * rng.standard_normal(30)
    xi = oscar_weights((0.05, 0.01), 12)
    warm = owl_regression(y, A, xi, SolverConfig(tol=1e-12, max_iter=200000, step_rule="warm"))
    bb = owl_regression(y, A, xi, SolverConfig(tol=1e-12, max_iter=200000), record_trace=True)
    np.testing.assert_allclose(warm.beta, bb.beta, atol=1e-8)
    trace = bb.objective_trace
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]))
