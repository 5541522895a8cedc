"""Least-squares kernel shared by every bias-corrected composite.

The pro-forma regression of local estimates on their covariates is an
ordinary least-squares problem with an intercept. It is solved here in
centered form: the slopes come from the centered covariates and the intercept
from the means, which is the exact least-squares intercept of the design
``(1, V)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InsufficientBatchesError, RankDeficientError

RCOND_CAP = 1e-12

_HOMOGENIZE_HINT = (
    "the pro-forma design (1, V) is rank deficient; batches look identically "
    "distributed. Apply gbcdc.homogenization (build_plan + apply_transform) "
    "before fitting the local estimators")


@dataclass(frozen=True)
class InterceptFit:
    intercept: float
    slopes: np.ndarray
    var_hat: float
    sigma2_hat: float
    rss: float


def design_rcond(covariates: np.ndarray) -> float:
    """Reciprocal condition number of ``(1, V)``."""
    n = covariates.shape[0]
    design = np.column_stack([np.ones(n), covariates])
    s = np.linalg.svd(design, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def check_sizes(n: int, q: int) -> None:
    if n <= q + 1:
        raise InsufficientBatchesError(
            f"need more than q + 1 = {q + 1} batches for the pro-forma regression, got {n}")


def intercept_fit(responses: np.ndarray, covariates: np.ndarray) -> InterceptFit:
    """Fit ``responses ~ 1 + covariates`` by least squares.

    Parameters
    ----------
    responses : ndarray, shape (N,)
    covariates : ndarray, shape (N, q)

    Returns
    -------
    InterceptFit
        Intercept, slopes, ``sigma2 * e1' (D'D)^{-1} e1`` and
        ``sigma2 = RSS / (N - q - 1)``.
    """
    t = np.asarray(responses, dtype=float)
    v = np.asarray(covariates, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n, q = v.shape
    check_sizes(n, q)
    if design_rcond(v) < RCOND_CAP:
        raise RankDeficientError(_HOMOGENIZE_HINT)
    vbar = v.mean(axis=0)
    tbar = t.mean()
    vc = v - vbar
    tc = t - tbar
    slopes = np.linalg.lstsq(vc, tc, rcond=None)[0]
    intercept = float(tbar - vbar @ slopes)
    resid = tc - vc @ slopes
    rss = float(resid @ resid)
    sigma2 = rss / (n - q - 1)
    sxx = vc.T @ vc
    lever = 1.0 / n + float(vbar @ np.linalg.solve(sxx, vbar))
    return InterceptFit(intercept, slopes, sigma2 * lever, sigma2, rss)


def intercept_fit_from_factor(n: int, r: np.ndarray) -> InterceptFit:
    """Same fit from the triangular factor of the augmented design.

    Parameters
    ----------
    n : int
        Number of rows absorbed into the factor.
    r : ndarray, shape (q + 2, q + 2)
        Upper-triangular ``R`` with ``R'R = A'A`` for ``A = (1, V, t)``.

    Notes
    -----
    The leading ``(q + 1)`` block ``R11`` is a triangular factor of the design
    ``D = (1, V)`` and has the same singular values, so the rank decision uses
    the reciprocal condition number of ``D`` itself. The last column holds
    ``Q't`` and its final entry squared is the residual sum of squares.
    """
    r = np.asarray(r, dtype=float)
    q = r.shape[0] - 2
    check_sizes(n, q)
    r11 = r[: q + 1, : q + 1]
    s = np.linalg.svd(r11, compute_uv=False)
    if s[0] <= 0 or s[-1] / s[0] < RCOND_CAP:
        raise RankDeficientError(_HOMOGENIZE_HINT)
    coef = scipy.linalg.solve_triangular(r11, r[: q + 1, q + 1])
    rss = float(r[q + 1, q + 1] ** 2)
    sigma2 = rss / (n - q - 1)
    e1 = np.zeros(q + 1)
    e1[0] = 1.0
    w = scipy.linalg.solve_triangular(r11, e1, trans="T")
    return InterceptFit(float(coef[0]), coef[1:], sigma2 * float(w @ w), sigma2, rss)
