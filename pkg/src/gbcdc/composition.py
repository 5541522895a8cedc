"""Aggregation of local fits into a global estimate.

Three composites are provided:

* :func:`naive_average` - the plain mean of the local estimates;
* :func:`dc_expression` - the Gram-weighted mean;
* :func:`bc_ge` - the bias-corrected global estimator, i.e. the intercept of
  the regression of local estimates on the rows of their representation
  covariates ``V_m(D_j)``.

For the LASSO the composites work on a common support, normally chosen by
:func:`majority_vote_support`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _lsq
from .data_model import CompositionResult, LocalFit, stack_thetas
from .errors import (
    DimensionMismatchError,
    DomainError,
    GbcdcError,
    SingularGramError,
    SupportMismatchError,
)
from .local_estimators import RCOND_CAP, rcond


@dataclass(frozen=True)
class ComponentRegression:
    """Pro-forma regression data for one component ``k``.

    Attributes
    ----------
    responses : ndarray, shape (N,)
        Local estimates ``theta_hat_j[k]``.
    covariates : ndarray, shape (N, q)
        Row ``j`` is ``V_m(D_j)^T e_k``.
    component_index : int
        0-based coordinate of the original parameter.
    """

    responses: np.ndarray
    covariates: np.ndarray
    component_index: int = 0

    def __post_init__(self):
        t = np.array(self.responses, dtype=float).ravel()
        v = np.array(self.covariates, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != t.shape[0]:
            raise DimensionMismatchError(
                f"{t.shape[0]} responses but covariate matrix has shape {v.shape}")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "responses", t)
        object.__setattr__(self, "covariates", v)

    @property
    def N(self) -> int:
        return self.responses.shape[0]

    @property
    def q(self) -> int:
        return self.covariates.shape[1]


# ---------------------------------------------------------------------------
# Support selection
# ---------------------------------------------------------------------------


def majority_vote_support(fits: Sequence[LocalFit], threshold: float = 0.5) -> tuple[int, ...]:
    """Coordinates selected by at least ``ceil(threshold * N)`` batch supports.

    Examples
    --------
    Supports {0, 1}, {0}, {0, 1} with threshold 0.5 need 2 votes, giving (0, 1).
    """
    if len(fits) == 0:
        raise DomainError("need at least one local fit")
    if not 0 < threshold <= 1:
        raise DomainError(f"threshold must lie in (0, 1], got {threshold}")
    p = fits[0].p
    votes = np.zeros(p, dtype=int)
    for f in fits:
        if f.p != p:
            raise DimensionMismatchError("local fits differ in dimension")
        votes[list(f.support)] += 1
    need = math.ceil(round(threshold * len(fits), 9))
    return tuple(int(k) for k in np.flatnonzero(votes >= need))


# ---------------------------------------------------------------------------
# Pro-forma design
# ---------------------------------------------------------------------------


def _common_kind(fits):
    kinds = {f.kind for f in fits}
    if len(kinds) != 1:
        raise DomainError(f"cannot mix estimator kinds {sorted(kinds)}")
    return kinds.pop()


def restricted_covariates(fit: LocalFit, support: Sequence[int]) -> np.ndarray:
    """Covariate matrix ``-(G_SS)^{-1}`` of a LASSO fit on ``support``."""
    s = list(support)
    g = fit.gram[np.ix_(s, s)]
    if rcond(g) < RCOND_CAP:
        raise SingularGramError("restricted Gram matrix is singular on the voted support")
    v = -np.linalg.inv(g)
    return 0.5 * (v + v.T)


def pro_forma_design(fits: Sequence[LocalFit], support: Sequence[int] | None = None):
    """Stack responses and covariates of the pro-forma regression.

    Returns
    -------
    components : tuple of int
        Coordinates of the original parameter being composed.
    responses : ndarray, shape (N, q)
        ``responses[j, i]`` is the estimate of coordinate ``components[i]``
        from batch ``j``.
    covariates : ndarray, shape (N, len(components), q)
        Row ``i`` of ``covariates[j]`` is row ``components[i]`` of ``V_m(D_j)``.
        For LASSO ``q = |S|``; for ridge and OLS ``q = p``.
    """
    thetas = stack_thetas(fits)
    kind = _common_kind(fits)
    p = thetas.shape[1]
    if kind == "mz":
        raise DomainError("M/Z fits carry no representation covariates; use bc_ge_mz")
    if kind == "lasso":
        if support is None:
            support = majority_vote_support(fits)
        support = tuple(int(k) for k in support)
        if len(support) == 0:
            raise DomainError("the voted LASSO support is empty; nothing to compose")
        v = np.stack([f.v_matrix if f.support == support
                      else restricted_covariates(f, support) for f in fits])
        return support, thetas[:, list(support)], v
    comps = tuple(range(p)) if support is None else tuple(int(k) for k in support)
    # Ridge and OLS rows keep all q = p columns even when only some
    # components are reported.
    v = np.stack([f.v_matrix for f in fits])
    idx = list(comps)
    return comps, thetas[:, idx], v[:, idx, :]


def component_regressions(fits: Sequence[LocalFit],
                          support: Sequence[int] | None = None) -> list[ComponentRegression]:
    """One :class:`ComponentRegression` per composed coordinate."""
    comps, t, v = pro_forma_design(fits, support)
    return [ComponentRegression(t[:, i], v[:, i, :], k) for i, k in enumerate(comps)]


# ---------------------------------------------------------------------------
# Composites
# ---------------------------------------------------------------------------


def bc_ge_component(reg: ComponentRegression):
    """Bias-corrected estimate of one component.

    Parameters
    ----------
    reg : ComponentRegression

    Returns
    -------
    theta_tilde : float
        Least-squares intercept.
    xi_tilde : ndarray, shape (q,)
        Least-squares slopes.
    var_hat : float
        ``sigma2_hat * e1' ((1, V)'(1, V))^{-1} e1`` with
        ``sigma2_hat = RSS / (N - q - 1)``.

    Raises
    ------
    InsufficientBatchesError
        If ``N <= q + 1``.
    RankDeficientError
        If the design ``(1, V)`` has reciprocal condition number below 1e-12.
    """
    fit = _lsq.intercept_fit(reg.responses, reg.covariates)
    return fit.intercept, fit.slopes, fit.var_hat


def estimate_sigma2(reg: ComponentRegression, theta_tilde_k: float, xi_tilde) -> float:
    """Residual variance ``RSS / (N - q - 1)`` of the pro-forma regression."""
    _lsq.check_sizes(reg.N, reg.q)
    resid = reg.responses - theta_tilde_k - reg.covariates @ np.asarray(xi_tilde, dtype=float)
    return float(resid @ resid) / (reg.N - reg.q - 1)


def _annotated(err: GbcdcError, k: int) -> GbcdcError:
    new = type(err)(f"component {k + 1}: {err}")
    new.component = k
    return new


def bc_ge(fits: Sequence[LocalFit], support: Sequence[int] | None = None,
          threshold: float = 0.5) -> CompositionResult:
    """Bias-corrected global estimator over all components.

    Parameters
    ----------
    fits : sequence of LocalFit
        Ridge, OLS or LASSO fits of the same kind.
    support : sequence of int, optional
        Coordinates to compose. For LASSO the default is the majority-vote
        support at ``threshold``; otherwise all coordinates.
    threshold : float
        Vote fraction used when the LASSO support is chosen here.
    """
    if support is None and fits and fits[0].kind == "lasso":
        support = majority_vote_support(fits, threshold)
    regs = component_regressions(fits, support)
    theta, xi, var, s2 = [], [], [], []
    for reg in regs:
        try:
            fit = _lsq.intercept_fit(reg.responses, reg.covariates)
        except GbcdcError as err:
            raise _annotated(err, reg.component_index) from err
        theta.append(fit.intercept)
        xi.append(fit.slopes)
        var.append(fit.var_hat)
        s2.append(fit.sigma2_hat)
    return CompositionResult(np.array(theta), tuple(xi), np.array(var), np.array(s2),
                             "bc_ge", len(fits), tuple(r.component_index for r in regs))


def structural_xi(result: CompositionResult, lam: float, kind: str) -> tuple[np.ndarray, ...]:
    """Nuisance slopes implied by the representation, for comparison with ``xi_tilde``.

    The LASSO representation gives ``xi = lam * sgn(theta)`` and the ridge
    one ``xi = lam * theta``, both over the composed coordinates. These are
    diagnostics only; the composite always fits the slopes freely.
    """
    theta = result.theta_tilde
    base = np.sign(theta) if kind == "lasso" else theta
    return tuple(lam * base for _ in theta)


def _between(terms: np.ndarray):
    n = terms.shape[0]
    if n < 2:
        s2 = np.zeros(terms.shape[1])
    else:
        s2 = terms.var(axis=0, ddof=1)
    return s2 / n, s2


def naive_average(fits: Sequence[LocalFit], support: Sequence[int] | None = None
                  ) -> CompositionResult:
    """Plain mean of the local estimates.

    ``var_hat`` is the between-batch variance divided by ``N`` (zero when
    ``N = 1``).
    """
    thetas = stack_thetas(fits)
    comps = tuple(range(thetas.shape[1])) if support is None else tuple(support)
    t = thetas[:, list(comps)]
    var, s2 = _between(t)
    # Averaging deviations from the first batch keeps identical fits exact.
    mean = t[0] + (t - t[0]).mean(axis=0) if len(t) else t.mean(axis=0)
    return CompositionResult(mean, (), var, s2, "naive", len(fits), comps)


def dc_expression(fits: Sequence[LocalFit], kind: str | None = None,
                  support: Sequence[int] | None = None) -> CompositionResult:
    """Gram-weighted aggregate of the local estimates.

    Ridge and OLS fits give ``(mean G_j + lam I)^{-1} mean(G_j theta_j)``.
    LASSO fits give ``(sum G_j,SS)^{-1} sum G_j,SS theta_j,S`` on a common
    support ``S``.

    Parameters
    ----------
    fits : sequence of LocalFit
    kind : {"ridge", "ols", "lasso"}, optional
        Defaults to the kind recorded in the fits.
    support : sequence of int, optional
        Common LASSO support. When omitted, all LASSO fits must already share
        one.

    Raises
    ------
    SupportMismatchError
        LASSO fits on differing supports and no common support given.
    SingularGramError
        Pooled Gram matrix not invertible.
    """
    thetas = stack_thetas(fits)
    kind = kind or _common_kind(fits)
    grams = np.stack([f.gram for f in fits])
    if kind == "lasso":
        if support is None:
            supports = {f.support for f in fits}
            if len(supports) != 1:
                raise SupportMismatchError(
                    "LASSO fits have different supports; pass a common support "
                    "(see majority_vote_support)")
            support = supports.pop()
        comps = tuple(int(k) for k in support)
        lam = 0.0
    elif kind in ("ridge", "ols"):
        comps = tuple(range(thetas.shape[1])) if support is None else tuple(support)
        lams = {f.lam for f in fits}
        if len(lams) != 1:
            raise DomainError("dc_expression needs a common penalty level across batches")
        lam = lams.pop() if kind == "ridge" else 0.0
    else:
        raise DomainError(f"dc_expression is not defined for kind {kind!r}")
    idx = list(comps)
    g = grams[:, idx][:, :, idx]
    t = thetas[:, idx]
    a = g.mean(axis=0) + lam * np.eye(len(idx))
    if len(idx) == 0 or rcond(a) < RCOND_CAP:
        raise SingularGramError("pooled Gram matrix is singular")
    terms = np.linalg.solve(a, np.einsum("jab,jb->aj", g, t)).T
    var, s2 = _between(terms)
    return CompositionResult(terms.mean(axis=0), (), var, s2, "dc_expression", len(fits), comps)


def lasso_full_mse(lam: float, sign_beta, e_vvT, sigma2: float, n: int) -> float:
    """Plug-in mean squared error of one full-data LASSO coordinate.

    ``lam**2 * s' E[v v'] s + sigma2 / n`` with ``s = sgn(beta_S)``.

    Examples
    --------
    >>> round(lasso_full_mse(0.1, [1.0], [[1.0]], 1.0, 100), 12)
    0.02
    """
    s = np.atleast_1d(np.asarray(sign_beta, dtype=float))
    e = np.atleast_2d(np.asarray(e_vvT, dtype=float))
    if e.shape != (s.size, s.size):
        raise DimensionMismatchError("E[vv'] must be square with the size of the sign vector")
    if lam < 0 or sigma2 < 0 or n < 1:
        raise DomainError("need lambda >= 0, sigma2 >= 0 and n >= 1")
    scale = max(1.0, float(np.max(np.abs(e))))
    if np.max(np.abs(e - e.T)) > 1e-12 * scale:
        raise DomainError("E[vv'] must be symmetric")
    if np.linalg.eigvalsh(e)[0] < -1e-12 * scale:
        raise DomainError("E[vv'] must be positive semidefinite")
    return float(lam**2 * (s @ e @ s) + sigma2 / n)
