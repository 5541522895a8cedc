import numpy as np
import pytest
import scipy.optimize
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gbcdc.errors import DomainError, SingularGramError
from gbcdc.local_estimators import (
    default_lambda_grid,
    fit_lasso,
    fit_ols,
    fit_ridge,
    kkt_residuals,
    lambda_max,
    lasso_representation,
    rcond,
    ridge_representation,
    select_lambda_cv,
)


def _batch(rng, m=60, p=5, beta=None, sd=1.0):
    x = rng.standard_normal((m, p)) + rng.standard_normal(p)
    beta = rng.standard_normal(p) if beta is None else np.asarray(beta, dtype=float)
    eps = sd * rng.standard_normal(m)
    return x, x @ beta + eps, beta, eps


class TestOls:
    def test_hand_solved(self):
        np.testing.assert_allclose(fit_ols([[1.0], [1.0]], [2.0, 4.0]).theta_hat, [3.0])

    def test_zero_response(self, rng):
        x = rng.standard_normal((10, 3))
        np.testing.assert_array_equal(fit_ols(x, np.zeros(10)).theta_hat, np.zeros(3))

    def test_singular(self):
        with pytest.raises(SingularGramError):
            fit_ols(np.zeros((5, 1)), np.ones(5))


class TestRidge:
    def test_hand_solved(self):
        np.testing.assert_allclose(fit_ridge([[1.0], [1.0]], [2.0, 4.0], 1.0).theta_hat, [1.5])

    def test_matches_objective_minimizer(self):
        obj = lambda b: ((2 - b) ** 2 + (4 - b) ** 2) / 4 + 0.5 * b**2
        grid = np.linspace(0, 3, 30001)
        assert grid[np.argmin(obj(grid))] == pytest.approx(1.5, abs=1e-4)
        res = scipy.optimize.minimize_scalar(obj)
        assert res.x == pytest.approx(fit_ridge([[1.0], [1.0]], [2.0, 4.0], 1.0).theta_hat[0], abs=1e-6)

    def test_lambda_zero_is_ols(self, rng):
        x, y, _, _ = _batch(rng)
        np.testing.assert_allclose(fit_ridge(x, y, 0.0).theta_hat, fit_ols(x, y).theta_hat,
                                   rtol=0, atol=1e-12)

    def test_representation_identity(self, rng):
        for _ in range(100):
            m, p = rng.integers(5, 80), rng.integers(1, 7)
            x, y, beta, eps = _batch(rng, m, p)
            lam = rng.uniform(0.001, 3)
            np.testing.assert_allclose(fit_ridge(x, y, lam).theta_hat,
                                       ridge_representation(x, beta, eps, lam), rtol=0, atol=1e-10)

    def test_covariates(self, rng):
        x, y, _, _ = _batch(rng, 30, 3)
        fit = fit_ridge(x, y, 0.4)
        np.testing.assert_allclose(fit.v_matrix, -np.linalg.inv(x.T @ x / 30 + 0.4 * np.eye(3)),
                                   atol=1e-12)

    def test_negative_lambda(self):
        with pytest.raises(DomainError):
            fit_ridge([[1.0]], [1.0], -0.1)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 5.0))
    def test_row_order_invariance(self, seed, lam):
        rng = np.random.default_rng(seed)
        x, y, _, _ = _batch(rng, 20, 3)
        perm = rng.permutation(20)
        np.testing.assert_allclose(fit_ridge(x[perm], y[perm], lam).theta_hat,
                                   fit_ridge(x, y, lam).theta_hat, rtol=0, atol=1e-12)


class TestLasso:
    def test_soft_threshold_oracle(self):
        fit = fit_lasso([[1.0], [-1.0]], [3.0, -1.0], 0.5)
        np.testing.assert_allclose(fit.theta_hat, [1.5], atol=1e-12)
        assert fit.support == (0,)

    def test_lambda_zero_is_ols(self, rng):
        x, y, _, _ = _batch(rng)
        np.testing.assert_allclose(fit_lasso(x, y, 0.0).theta_hat, fit_ols(x, y).theta_hat,
                                   rtol=0, atol=1e-8)

    def test_screening(self, rng):
        x, y, _, _ = _batch(rng)
        lmax = lambda_max(x, y)
        assert lmax == pytest.approx(np.max(np.abs(x.T @ y / len(y))))
        for lam in (lmax, 1.5 * lmax):
            fit = fit_lasso(x, y, lam)
            np.testing.assert_array_equal(fit.theta_hat, np.zeros(x.shape[1]))
            assert fit.support == ()
            assert fit.v_matrix.shape == (0, 0)

    def test_kkt(self, rng):
        tol = 1e-8
        for _ in range(100):
            x, y, _, _ = _batch(rng, rng.integers(20, 100), rng.integers(1, 10))
            lam = rng.uniform(0.01, 1.0) * lambda_max(x, y)
            fit = fit_lasso(x, y, lam, tol=tol)
            grad = x.T @ (y - x @ fit.theta_hat) / x.shape[0]
            on = np.zeros(x.shape[1], dtype=bool)
            on[list(fit.support)] = True
            assert np.all(np.abs(grad[on] - lam * np.sign(fit.theta_hat[on])) <= 10 * tol)
            assert np.all(np.abs(grad[~on]) <= lam + 10 * tol)
            assert max(kkt_residuals(x, y, fit.theta_hat, lam)) <= 10 * tol

    def test_covariates_restricted(self, rng):
        x, y, _, _ = _batch(rng, 80, 5, beta=[2.0, 0, -1.5, 0, 0])
        fit = fit_lasso(x, y, 0.1)
        s = list(fit.support)
        gss = x[:, s].T @ x[:, s] / 80
        np.testing.assert_allclose(fit.v_matrix, -np.linalg.inv(gss), atol=1e-10)

    def test_representation_on_recovery(self, rng):
        checked = 0
        beta = np.array([3.0, 1.0, -1.0, 0.0, 0.0, 0.0])
        for _ in range(60):
            x, y, _, eps = _batch(rng, 200, 6, beta=beta)
            lam = 0.1
            fit = fit_lasso(x, y, lam, tol=1e-12)
            truth = (0, 1, 2)
            if fit.support != truth or np.any(np.sign(fit.theta_hat[:3]) != np.sign(beta[:3])):
                continue
            checked += 1
            np.testing.assert_allclose(fit.theta_hat[:3],
                                       lasso_representation(x, beta, eps, lam, truth),
                                       rtol=0, atol=1e-8)
        assert checked >= 20


class TestCrossValidation:
    def test_singleton_grid(self, rng):
        x, y, _, _ = _batch(rng, 40, 3)
        assert select_lambda_cv(x, y, grid=[0.37]) == 0.37
        assert select_lambda_cv(x, y, kind="ridge", grid=[0.37]) == 0.37

    def test_member_of_grid_and_deterministic(self, rng):
        x, y, _, _ = _batch(rng, 25, 4)
        grid = default_lambda_grid(x, y)
        a = select_lambda_cv(x, y, folds=5, seed=3)
        assert a in grid
        assert a == select_lambda_cv(x, y, folds=5, seed=3)
        assert select_lambda_cv(x, y, kind="ridge", folds=5, seed=3, rule="1se") in grid

    def test_default_grid(self, rng):
        x, y, _, _ = _batch(rng, 25, 4)
        grid = default_lambda_grid(x, y)
        assert grid.size == 50
        assert grid[0] == pytest.approx(lambda_max(x, y))
        assert grid[-1] == pytest.approx(1e-3 * lambda_max(x, y))
        assert np.all(np.diff(grid) < 0)

    def test_pure_noise_prefers_large_penalties(self):
        # With beta = 0 the held-out error is smallest near the empty model,
        # so the chosen level should sit in the top tenth of the grid.
        hits = 0
        for r in range(100):
            rng = np.random.default_rng(1000 + r)
            x = rng.standard_normal((500, 5))
            y = rng.standard_normal(500)
            grid = default_lambda_grid(x, y)
            lam = select_lambda_cv(x, y, grid=grid, seed=r, rule="1se")
            hits += lam >= grid[4]
        assert hits >= 80

    def test_bad_inputs(self, rng):
        x, y, _, _ = _batch(rng, 10, 2)
        with pytest.raises(DomainError):
            select_lambda_cv(x, y, grid=[0.1, 0.2])
        with pytest.raises(DomainError):
            select_lambda_cv(x, y, folds=11)
        with pytest.raises(DomainError):
            select_lambda_cv(x, y, rule="mode")


@given(arrays(float, (6, 2), elements=st.floats(-10, 10)))
def test_rcond_bounds(a):
    r = rcond(a)
    assert 0.0 <= r <= 1.0
