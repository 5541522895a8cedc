"""Per-batch estimators and the covariate matrices of their closed-form representations.

All penalized objectives use the ``1/(2m)`` loss scaling,

    ridge:  (1/2m)||y - X b||^2 + (lam/2)||b||^2      (normal equations (G + lam I) b = c)
    lasso:  (1/2m)||y - X b||^2 + lam ||b||_1

with ``G = X^T X / m`` and ``c = X^T y / m``. The ridge objective is written
with ``lam/2`` only so that its stationarity condition reads ``(G + lam I) b = c``;
this is the same estimator as ``(1/m)||y - X b||^2 + lam ||b||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .data_model import SUPPORT_TOL, LocalFit
from .errors import ConvergenceError, DimensionMismatchError, DomainError, SingularGramError

RCOND_CAP = 1e-12
"""Reciprocal condition numbers below this value count as singular."""

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty level and family.

    Parameters
    ----------
    lam : float
        Penalty level, ``lam >= 0``.
    kind : {"ridge", "lasso"}
    rate_exponent : float
        Exponent ``delta`` in ``lam ~ m**(-delta)``. Documentation only; it
        is never used in a computation.
    """

    lam: float
    kind: str = "ridge"
    rate_exponent: float = 0.5

    def __post_init__(self):
        if not self.lam >= 0:
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if self.kind not in ("ridge", "lasso"):
            raise DomainError(f"penalty kind must be 'ridge' or 'lasso', got {self.kind!r}")
        if not 0 < self.rate_exponent <= 1:
            raise DomainError("rate_exponent must lie in (0, 1]")


def rcond(a: np.ndarray) -> float:
    """Reciprocal 2-norm condition number of a square matrix (0 if singular)."""
    if a.size == 0:
        return 1.0
    s = np.linalg.svd(a, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def _moments(batch_x, batch_y):
    x = np.asarray(batch_x, dtype=float)
    y = np.asarray(batch_y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionMismatchError(f"incompatible batch shapes {x.shape} and {y.shape}")
    if x.shape[0] < 1:
        raise DomainError("empty batch")
    m = x.shape[0]
    gram = x.T @ x / m
    gram = 0.5 * (gram + gram.T)
    return x, y, gram, x.T @ y / m, m


def _check_lambda(lam):
    lam = float(lam)
    if not lam >= 0 or not np.isfinite(lam):
        raise DomainError(f"lambda must be finite and >= 0, got {lam}")
    return lam


def fit_ols(batch_x, batch_y) -> LocalFit:
    """Least squares on one batch.

    Raises
    ------
    SingularGramError
        If the Gram matrix has reciprocal condition number below ``RCOND_CAP``.
    """
    _, _, gram, c, m = _moments(batch_x, batch_y)
    if rcond(gram) < RCOND_CAP:
        raise SingularGramError("Gram matrix of the batch is numerically singular")
    p = gram.shape[0]
    theta = np.linalg.solve(gram, c)
    return LocalFit(theta, gram, np.zeros((p, p)), tuple(range(p)), 0.0, m, "ols")


def fit_ridge(batch_x, batch_y, lam: float) -> LocalFit:
    """Ridge estimate ``(G + lam I)^{-1} c`` with covariates ``V = -(G + lam I)^{-1}``.

    Examples
    --------
    >>> fit_ridge([[1.0], [1.0]], [2.0, 4.0], 1.0).theta_hat
    array([1.5])
    """
    lam = _check_lambda(lam)
    _, _, gram, c, m = _moments(batch_x, batch_y)
    p = gram.shape[0]
    a = gram + lam * np.eye(p)
    if rcond(a) < RCOND_CAP:
        raise SingularGramError("Gram matrix of the batch is numerically singular")
    a_inv = np.linalg.inv(a)
    a_inv = 0.5 * (a_inv + a_inv.T)
    theta = np.linalg.solve(a, c)
    return LocalFit(theta, gram, -a_inv, tuple(range(p)), lam, m, "ridge")


@numba.njit(cache=True, nogil=True)
def _coordinate_descent(gram, c, lam, beta, tol, max_iter):
    """Cyclic coordinate descent for ``0.5 b'Gb - c'b + lam |b|_1``.

    Updates ``beta`` in place. Returns the number of sweeps, or -1 if the
    largest coordinate change never fell below ``tol``.
    """
    p = gram.shape[0]
    for sweep in range(max_iter):
        dmax = 0.0
        for k in range(p):
            gkk = gram[k, k]
            if gkk <= 0.0:
                beta[k] = 0.0
                continue
            r = c[k] - gram[k, :] @ beta + gkk * beta[k]
            if r > lam:
                nb = (r - lam) / gkk
            elif r < -lam:
                nb = (r + lam) / gkk
            else:
                nb = 0.0
            d = abs(nb - beta[k])
            if d > dmax:
                dmax = d
            beta[k] = nb
        if dmax < tol:
            return sweep + 1
    return -1


def _polish(gram, c, lam, beta, tol):
    """Re-solve the stationarity equations on the active set.

    Coordinate descent stops with stationarity residuals of order ``tol``.
    Given the active set and signs it found, the exact minimizer solves
    ``G_SS b_S = c_S - lam sgn_S``. The polished point is kept only if it
    reproduces the signs and satisfies the inactive-set conditions.
    """
    support = np.flatnonzero(np.abs(beta) > SUPPORT_TOL)
    out = np.zeros_like(beta)
    if support.size == 0:
        return out, support
    sign = np.sign(beta[support])
    g_ss = gram[np.ix_(support, support)]
    if rcond(g_ss) < RCOND_CAP:
        raise SingularGramError("restricted Gram matrix on the detected support is singular")
    out[support] = np.linalg.solve(g_ss, c[support] - lam * sign)
    grad = c - gram @ out
    inactive = np.ones(beta.size, dtype=bool)
    inactive[support] = False
    ok = (np.all(np.sign(out[support]) == sign)
          and np.all(np.abs(out[support]) > SUPPORT_TOL)
          and np.all(np.abs(grad[inactive]) <= lam + tol))
    if ok:
        return out, support
    out = np.where(np.abs(beta) > SUPPORT_TOL, beta, 0.0)
    return out, support


def fit_lasso(batch_x, batch_y, lam: float, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> LocalFit:
    """LASSO on one batch by cyclic coordinate descent with covariance updates.

    The returned ``v_matrix`` is ``-(G_SS)^{-1}`` on the detected support ``S``.

    Parameters
    ----------
    batch_x : array_like, shape (m, p)
    batch_y : array_like, shape (m,)
    lam : float
        Penalty level on the ``1/(2m)`` scaled objective.
    tol : float
        Stop when the largest coordinate change in a sweep is below ``tol``.
    max_iter : int
        Maximum number of sweeps.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` sweeps do not reach ``tol``.
    SingularGramError
        If the Gram matrix restricted to the detected support is singular.
    """
    lam = _check_lambda(lam)
    if not tol > 0:
        raise DomainError("tol must be positive")
    _, _, gram, c, m = _moments(batch_x, batch_y)
    beta = np.zeros(gram.shape[0])
    sweeps = _coordinate_descent(gram, c, lam, beta, float(tol), int(max_iter))
    if sweeps < 0:
        raise ConvergenceError(f"coordinate descent did not converge in {max_iter} sweeps")
    theta, support = _polish(gram, c, lam, beta, tol)
    g_ss = gram[np.ix_(support, support)]
    v = -np.linalg.inv(g_ss) if support.size else np.zeros((0, 0))
    v = 0.5 * (v + v.T)
    return LocalFit(theta, gram, v, tuple(support.tolist()), lam, m, "lasso")


def lambda_max(batch_x, batch_y) -> float:
    """Smallest LASSO penalty whose solution is identically zero: ``max_k |c_k|``."""
    _, _, _, c, _ = _moments(batch_x, batch_y)
    return float(np.max(np.abs(c)))


def default_lambda_grid(batch_x, batch_y, size: int = 50, ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced grid from ``lambda_max`` down to ``ratio * lambda_max``."""
    lmax = lambda_max(batch_x, batch_y)
    if lmax <= 0:
        raise DomainError("response is orthogonal to every covariate; lambda_max is 0")
    return np.geomspace(lmax, ratio * lmax, size)


def kkt_residuals(batch_x, batch_y, theta, lam):
    """LASSO stationarity residuals.

    Returns
    -------
    on_support : float
        ``max |c_k - (G theta)_k - lam sgn(theta_k)|`` over nonzero coordinates.
    off_support : float
        ``max(|c_k - (G theta)_k| - lam, 0)`` over zero coordinates.
    """
    _, _, gram, c, _ = _moments(batch_x, batch_y)
    theta = np.asarray(theta, dtype=float)
    grad = c - gram @ theta
    active = np.abs(theta) > SUPPORT_TOL
    on = np.abs(grad[active] - lam * np.sign(theta[active]))
    off = np.abs(grad[~active]) - lam
    return float(np.max(on, initial=0.0)), float(max(np.max(off, initial=0.0), 0.0))


def ridge_representation(batch_x, beta, eps, lam) -> np.ndarray:
    """Right-hand side of the ridge closed representation.

    ``beta - (G + lam I)^{-1} lam beta + (G + lam I)^{-1} X^T eps / m``,
    which equals the ridge fit on ``y = X beta + eps`` exactly.
    """
    x = np.asarray(batch_x, dtype=float)
    m, p = x.shape
    a = x.T @ x / m + lam * np.eye(p)
    return beta - np.linalg.solve(a, lam * beta) + np.linalg.solve(a, x.T @ eps / m)


def lasso_representation(batch_x, beta, eps, lam, support) -> np.ndarray:
    """Right-hand side of the LASSO closed representation on ``support``.

    ``beta_S - G_SS^{-1} lam sgn(beta_S) + G_SS^{-1} X_S^T eps / m``. Valid
    when the fit recovers the support and signs of ``beta``.
    """
    x = np.asarray(batch_x, dtype=float)
    s = np.asarray(support, dtype=int)
    xs = x[:, s]
    m = x.shape[0]
    g = xs.T @ xs / m
    b = np.asarray(beta, dtype=float)[s]
    return b - np.linalg.solve(g, lam * np.sign(b)) + np.linalg.solve(g, xs.T @ eps / m)


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _lasso_cv_errors(x, y, fold_id, folds, grid, tol, max_iter):
    m, p = x.shape
    ng = grid.shape[0]
    err = np.zeros((folds, ng))
    for f in range(folds):
        train = fold_id != f
        test = fold_id == f
        xt = x[train]
        yt = y[train]
        mt = xt.shape[0]
        gram = xt.T @ xt / mt
        c = xt.T @ yt / mt
        xe = x[test]
        ye = y[test]
        beta = np.zeros(p)
        for i in range(ng):
            _coordinate_descent(gram, c, grid[i], beta, tol, max_iter)
            r = ye - xe @ beta
            err[f, i] = np.mean(r * r)
    return err


def _ridge_cv_errors(x, y, fold_id, folds, grid):
    err = np.zeros((folds, grid.size))
    for f in range(folds):
        train = fold_id != f
        xt, yt = x[train], y[train]
        mt = xt.shape[0]
        w, q = np.linalg.eigh(xt.T @ xt / mt)
        qc = q.T @ (xt.T @ yt / mt)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = q @ (qc[:, None] / (w[:, None] + grid[None, :]))
        resid = y[~train][:, None] - x[~train] @ coef
        err[f] = np.mean(resid**2, axis=0)
    return err


def cv_errors(batch_x, batch_y, kind, folds, grid, seed):
    """Held-out mean squared prediction error, shape ``(folds, len(grid))``."""
    x, y, _, _, m = _moments(batch_x, batch_y)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise DomainError("lambda grid must be a nonempty vector")
    if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise DomainError("lambda grid must be strictly positive and strictly descending")
    if folds < 2:
        raise DomainError("need at least 2 folds")
    if folds > m:
        raise DomainError(f"folds={folds} exceeds batch size m={m}")
    fold_id = np.random.default_rng(seed).permutation(np.arange(m) % folds)
    if kind == "lasso":
        return _lasso_cv_errors(np.ascontiguousarray(x), y, fold_id, folds, grid,
                                DEFAULT_TOL, 100_000)
    if kind == "ridge":
        return _ridge_cv_errors(x, y, fold_id, folds, grid)
    raise DomainError(f"penalty kind must be 'ridge' or 'lasso', got {kind!r}")


def select_lambda_cv(batch_x, batch_y, kind: str = "lasso", folds: int = 5, grid=None,
                     seed: int = 0, rule: str = "min") -> float:
    """Choose the penalty level by K-fold cross-validation.

    Parameters
    ----------
    batch_x, batch_y : array_like
        One batch of data.
    kind : {"lasso", "ridge"}
    folds : int
        Number of folds (at most the batch size).
    grid : array_like, optional
        Strictly descending positive candidates. Defaults to
        :func:`default_lambda_grid`.
    seed : int
        Seed of the fold assignment.
    rule : {"min", "1se"}
        ``"min"`` returns the minimizer of the mean held-out error, breaking
        ties toward the larger value. ``"1se"`` returns the largest value whose
        mean error is within one standard error of that minimum.

    Returns
    -------
    float
    """
    if grid is None:
        grid = default_lambda_grid(batch_x, batch_y)
    grid = np.asarray(grid, dtype=float)
    err = cv_errors(batch_x, batch_y, kind, folds, grid, seed)
    mean = err.mean(axis=0)
    best = int(np.argmin(mean))  # first index = largest lambda among ties
    if rule == "1se":
        se = err[:, best].std(ddof=1) / np.sqrt(err.shape[0])
        best = int(np.flatnonzero(mean <= mean[best] + se)[0])
    elif rule != "min":
        raise DomainError(f"unknown CV rule {rule!r}")
    return float(grid[best])
