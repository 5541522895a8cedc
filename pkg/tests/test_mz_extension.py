import numpy as np
import pytest
import scipy.optimize

from gbcdc import _lsq
from gbcdc.composition import ComponentRegression, bc_ge_component
from gbcdc.errors import ConvergenceError, DomainError, RankDeficientError, SingularJacobianError
from gbcdc.local_estimators import fit_ols
from gbcdc.mz_extension import (
    EstimatingFunction,
    bc_ge_mz,
    check_jacobian,
    exp_regression,
    get_estimating_function,
    huber,
    linear_score,
    location,
    mz_covariates,
    psi_covariate,
    solve_z_estimator,
)


def _exp_batches(rng, N, m, theta=0.5, sd=0.5):
    batches = []
    for _ in range(N):
        lo = rng.uniform(0.0, 2.0)
        x = rng.uniform(lo, lo + 1.0, m)
        batches.append(np.column_stack([x, np.exp(theta * x) + sd * rng.standard_normal(m)]))
    return batches


def _log_linear_start(batch):
    x, y = batch[:, 0], batch[:, 1]
    return [np.sum(x * np.log(np.maximum(y, 0.1))) / np.sum(x * x)]


class TestSolver:
    def test_location(self):
        fit = solve_z_estimator(np.array([1.0, 2.0, 3.0]), location(), [0.0])
        assert fit.theta_hat[0] == pytest.approx(2.0, abs=1e-12)
        assert fit.kind == "mz"

    def test_linear_score_is_ols(self, rng):
        x = rng.uniform(0.5, 2, 40)
        y = 1.3 * x + rng.standard_normal(40)
        fit = solve_z_estimator(np.column_stack([x, y]), linear_score(), [0.0])
        assert fit.theta_hat[0] == pytest.approx(np.sum(x * y) / np.sum(x * x), abs=1e-10)
        np.testing.assert_allclose(fit.theta_hat, fit_ols(x[:, None], y).theta_hat, atol=1e-10)

    def test_huber_bisection_oracle(self, rng):
        z = np.append(rng.normal(0.0, 1.0, 49), 60.0)
        fn = huber(1.345)
        fit = solve_z_estimator(z, fn, [np.median(z)])
        root = scipy.optimize.brentq(lambda t: fn.mean(np.array([t]), z)[0],
                                     z.min(), z.max(), xtol=1e-14)
        assert fit.theta_hat[0] == pytest.approx(root, abs=1e-8)
        assert np.median(z) < fit.theta_hat[0] < z.mean()
        assert abs(fn.mean(fit.theta_hat, z)[0]) <= 1e-10

    def test_residual_below_tol(self, rng):
        fn = exp_regression()
        for b in _exp_batches(rng, 20, 40):
            fit = solve_z_estimator(b, fn, _log_linear_start(b), tol=1e-10)
            assert np.max(np.abs(fn.mean(fit.theta_hat, b))) <= 1e-10
            np.testing.assert_allclose(fit.v_matrix, -np.linalg.inv(fit.gram), rtol=1e-12)

    def test_singular_jacobian(self):
        flat = EstimatingFunction(lambda t, z: np.ones((len(z), 1)), lambda t, z: np.zeros((len(z), 1, 1)))
        with pytest.raises(SingularJacobianError):
            solve_z_estimator(np.zeros(4), flat, [0.0])

    def test_no_descent(self):
        # A score that never vanishes cannot be driven below tol.
        fn = EstimatingFunction(lambda t, z: np.full((len(z), 1), 1.0 + t[0] ** 2),
                                lambda t, z: np.full((len(z), 1, 1), 2 * t[0]))
        with pytest.raises((ConvergenceError, SingularJacobianError)):
            solve_z_estimator(np.zeros(4), fn, [1.0])


class TestJacobians:
    @pytest.mark.parametrize("name", ["location", "linear-score", "exp-regression", "huber(1.5)"])
    def test_analytic_matches_finite_difference(self, name, rng):
        fn = get_estimating_function(name)
        if name in ("location", "huber(1.5)"):
            z = rng.standard_normal(200)
            probes = rng.uniform(-0.5, 0.5, (10, 1))
        elif name == "linear-score":
            x = rng.standard_normal((200, 2))
            z = np.column_stack([x, x @ [1.0, -1.0] + rng.standard_normal(200)])
            probes = rng.standard_normal((10, 2))
        else:
            z = _exp_batches(rng, 1, 200)[0]
            probes = rng.uniform(0.2, 0.8, (10, 1))
        assert check_jacobian(fn, z, probes) <= 1e-4

    def test_names(self):
        assert get_estimating_function("huber").name == "huber(1.345)"
        assert get_estimating_function("huber(2)").smoothness == "nonsmooth"
        with pytest.raises(DomainError):
            get_estimating_function("quantile")


class TestCovariates:
    def test_own_root_vanishes(self, rng):
        fn = exp_regression()
        for b in _exp_batches(rng, 5, 50):
            fit = solve_z_estimator(b, fn, _log_linear_start(b))
            cov = psi_covariate(b, fn, fit.theta_hat)
            assert np.max(np.abs(cov)) <= 1e-10 * np.sqrt(len(b))

    def test_hand_value(self):
        cov = psi_covariate(np.array([1.0, 2.0, 3.0]), location(), [1.0])
        np.testing.assert_allclose(cov, [np.sqrt(3.0)])

    def test_zero_score(self):
        zero = EstimatingFunction(lambda t, z: np.zeros((len(z), 1)))
        np.testing.assert_array_equal(psi_covariate(np.arange(5.0), zero, [0.3]), [0.0])

    def test_literal_centering_is_zero(self, rng):
        fn = exp_regression()
        batches = _exp_batches(rng, 4, 30)
        fits = [solve_z_estimator(b, fn, _log_linear_start(b)) for b in batches]
        for c in mz_covariates(batches, fn, fits, centering="literal"):
            assert np.max(np.abs(c)) <= 1e-9


class TestComposite:
    def test_constant_covariates(self, rng):
        fits = [solve_z_estimator(rng.standard_normal(10), location(), [0.0]) for _ in range(6)]
        with pytest.raises(RankDeficientError):
            bc_ge_mz(fits, [np.array([0.5])] * 6, 0)

    def test_noise_free_recovery(self, rng):
        c = rng.standard_normal((8, 2))
        targets = 1.25 + c @ [0.4, -0.3]
        fits = [solve_z_estimator(np.array([t]), location(), [0.0]) for t in targets]
        theta, xi, _ = bc_ge_mz(fits, list(c), 0)
        assert theta == pytest.approx(1.25, abs=1e-10)
        np.testing.assert_allclose(xi, [0.4, -0.3], atol=1e-10)

    def test_same_kernel_as_linear_case(self, rng):
        c = rng.standard_normal((9, 1))
        fits = [solve_z_estimator(rng.standard_normal(5), location(), [0.0]) for _ in range(9)]
        t = np.array([f.theta_hat[0] for f in fits])
        assert bc_ge_mz(fits, list(c), 0)[0] == bc_ge_component(ComponentRegression(t, c))[0]
        assert bc_ge_mz(fits, list(c), 0)[0] == _lsq.intercept_fit(t, c).intercept

    def test_bias_not_worse_than_naive(self):
        # Exponential mean curve, batch designs on shifted unit intervals,
        # pilot-centered covariates.
        fn = exp_regression()
        naive, bc = [], []
        for r in range(200):
            rng = np.random.default_rng(r)
            batches = _exp_batches(rng, 50, 30)
            fits = [solve_z_estimator(b, fn, _log_linear_start(b)) for b in batches]
            cov = mz_covariates(batches, fn, fits, centering="pilot")
            naive.append(np.mean([f.theta_hat[0] for f in fits]) - 0.5)
            bc.append(bc_ge_mz(fits, cov, 0)[0] - 0.5)
        print(f"mean bias naive {np.mean(naive):.5f}, bc_ge {np.mean(bc):.5f}")
        assert abs(np.mean(bc)) <= abs(np.mean(naive))
