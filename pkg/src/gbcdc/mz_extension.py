"""Local Z-estimators and their bias-corrected composite.

A Z-estimator solves ``Psi_j(theta) = (1/m) sum_i psi(theta, Z_i) = 0`` on
batch ``j``. Its linearization around a pilot value supplies the covariate
``psi(D_j) = m^{-1/2} sum_i psi(theta_eval, Z_i)`` of the pro-forma
regression. At ``theta_eval = theta_hat_j`` this covariate is zero by
construction, so the default centering uses the pilot (naive average)
estimate instead.

Estimating functions are vectorized: ``psi(theta, z)`` receives the whole
batch ``z`` of shape (m, d), one observation per row, and returns an (m, p)
array. The optional ``jacobian(theta, z)`` returns (m, p, p).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _lsq
from .data_model import LocalFit, stack_thetas
from .errors import ConvergenceError, DimensionMismatchError, DomainError, SingularJacobianError
from .local_estimators import RCOND_CAP, rcond

MAX_HALVINGS = 30


@dataclass(frozen=True)
class EstimatingFunction:
    """Estimating function ``psi`` with optional analytic Jacobian.

    Attributes
    ----------
    psi : callable
        ``psi(theta, z) -> (m, p)``.
    jacobian : callable or None
        ``jacobian(theta, z) -> (m, p, p)`` with entries ``d psi_a / d theta_b``.
        When absent, central finite differences of the mean are used.
    smoothness : {"smooth", "nonsmooth"}
        Smooth functions have a representation remainder of order ``m^{-1}``;
        nonsmooth ones (Huber, quantile-type) of order ``m^{-3/4}``.
    name : str
    """

    psi: Callable
    jacobian: Callable | None = None
    smoothness: str = "smooth"
    name: str = ""

    def __post_init__(self):
        if self.smoothness not in ("smooth", "nonsmooth"):
            raise DomainError(f"smoothness must be 'smooth' or 'nonsmooth', got {self.smoothness!r}")

    def values(self, theta, z) -> np.ndarray:
        out = np.asarray(self.psi(np.asarray(theta, dtype=float), z), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if out.shape[1] != np.size(theta):
            raise DimensionMismatchError(
                f"psi returned {out.shape[1]} components for a {np.size(theta)}-vector theta")
        return out

    def mean(self, theta, z) -> np.ndarray:
        return self.values(theta, z).mean(axis=0)

    def mean_jacobian(self, theta, z) -> np.ndarray:
        """``(1/m) sum_i d psi(theta, Z_i) / d theta``, shape (p, p)."""
        theta = np.asarray(theta, dtype=float)
        if self.jacobian is not None:
            jac = np.asarray(self.jacobian(theta, z), dtype=float)
            return jac.reshape(-1, theta.size, theta.size).mean(axis=0)
        return finite_difference_jacobian(lambda t: self.mean(t, z), theta)


def finite_difference_jacobian(fun, theta, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    jac = np.empty((p, p))
    for b in range(p):
        h = rel_step * max(1.0, abs(theta[b]))
        e = np.zeros(p)
        e[b] = h
        jac[:, b] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return jac


def check_jacobian(fn: EstimatingFunction, z, probes, rtol: float = 1e-4) -> float:
    """Largest relative gap between analytic and finite-difference mean Jacobians."""
    if fn.jacobian is None:
        raise DomainError("estimating function has no analytic Jacobian")
    worst = 0.0
    for theta in np.atleast_2d(probes):
        ana = fn.mean_jacobian(theta, z)
        num = finite_difference_jacobian(lambda t: fn.mean(t, z), theta)
        scale = max(np.max(np.abs(num)), 1e-12)
        worst = max(worst, float(np.max(np.abs(ana - num)) / scale))
    return worst


# ---------------------------------------------------------------------------
# Built-in estimating functions
# ---------------------------------------------------------------------------


def _col(z):
    z = np.asarray(z, dtype=float)
    return z if z.ndim == 2 else z[:, None]


def location() -> EstimatingFunction:
    """``psi(theta, z) = z - theta`` (root: the sample mean)."""
    return EstimatingFunction(
        psi=lambda t, z: _col(z)[:, :1] - t[0],
        jacobian=lambda t, z: -np.ones((_col(z).shape[0], 1, 1)),
        name="location")


def linear_score() -> EstimatingFunction:
    """``psi(theta, (x, y)) = x (y - x'theta)``; rows of ``z`` are ``(x_1..x_p, y)``."""
    def psi(t, z):
        z = _col(z)
        x, y = z[:, :-1], z[:, -1]
        return x * (y - x @ t)[:, None]

    def jac(t, z):
        x = _col(z)[:, :-1]
        return -np.einsum("ia,ib->iab", x, x)

    return EstimatingFunction(psi, jac, name="linear-score")


def huber(c: float = 1.345) -> EstimatingFunction:
    """Huber location score ``clip(z - theta, -c, c)``."""
    if not c > 0:
        raise DomainError("Huber constant must be positive")

    def psi(t, z):
        return np.clip(_col(z)[:, :1] - t[0], -c, c)

    def jac(t, z):
        inside = np.abs(_col(z)[:, :1] - t[0]) <= c
        return -inside.astype(float)[:, :, None]

    return EstimatingFunction(psi, jac, smoothness="nonsmooth", name=f"huber({c:g})")


def exp_regression() -> EstimatingFunction:
    """Least-squares score for ``E[y | x] = exp(x'theta)``; rows are ``(x_1..x_p, y)``."""
    def psi(t, z):
        z = _col(z)
        x, y = z[:, :-1], z[:, -1]
        mu = np.exp(x @ t)
        return x * ((y - mu) * mu)[:, None]

    def jac(t, z):
        z = _col(z)
        x, y = z[:, :-1], z[:, -1]
        mu = np.exp(x @ t)
        return np.einsum("i,ia,ib->iab", (y - 2 * mu) * mu, x, x)

    return EstimatingFunction(psi, jac, name="exp-regression")


_HUBER = re.compile(r"^huber(?:\(\s*([0-9.eE+-]+)\s*\))?$")


def get_estimating_function(name: str) -> EstimatingFunction:
    """Look up a built-in by name: ``location``, ``linear-score``, ``huber(c)``, ``exp-regression``."""
    name = name.strip()
    if name == "location":
        return location()
    if name == "linear-score":
        return linear_score()
    if name == "exp-regression":
        return exp_regression()
    match = _HUBER.match(name)
    if match:
        return huber(float(match.group(1))) if match.group(1) else huber()
    raise DomainError(f"unknown estimating function {name!r}")


# ---------------------------------------------------------------------------
# Solver and composite
# ---------------------------------------------------------------------------


def solve_z_estimator(batch, fn: EstimatingFunction, init, tol: float = 1e-10,
                      max_iter: int = 100) -> LocalFit:
    """Root of ``(1/m) sum_i psi(theta, Z_i)`` by damped Newton iteration.

    Each Newton step is halved up to 30 times until the sup-norm of the mean
    score decreases.

    Parameters
    ----------
    batch : array_like, shape (m, d)
        One observation per row.
    fn : EstimatingFunction
    init : array_like, shape (p,)
    tol : float
        Target for ``max |Psi(theta_hat)|``.
    max_iter : int

    Returns
    -------
    LocalFit
        ``kind="mz"``. ``gram`` holds the symmetrized mean Jacobian ``D`` at the
        root and ``v_matrix`` holds ``-D^{-1}``.

    Raises
    ------
    SingularJacobianError
        If the mean Jacobian is singular at an iterate.
    ConvergenceError
        If no step reduces the score or ``max_iter`` is reached.
    """
    z = _col(batch)
    theta = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    score = fn.mean(theta, z)
    norm = np.max(np.abs(score))
    for _ in range(max_iter):
        if norm <= tol:
            break
        jac = fn.mean_jacobian(theta, z)
        if rcond(jac) < RCOND_CAP:
            raise SingularJacobianError("mean Jacobian is singular at the current iterate")
        step = np.linalg.solve(jac, score)
        for _ in range(MAX_HALVINGS + 1):
            cand = theta - step
            with np.errstate(over="ignore", invalid="ignore"):
                cand_score = fn.mean(cand, z)
            cand_norm = np.max(np.abs(cand_score))
            if np.isfinite(cand_norm) and cand_norm < norm:
                break
            step = step / 2
        else:
            raise ConvergenceError("step halving failed to reduce the estimating equation")
        theta, score, norm = cand, cand_score, cand_norm
    if not norm <= tol:
        raise ConvergenceError(f"Newton iteration did not reach tol={tol} in {max_iter} steps")
    d = fn.mean_jacobian(theta, z)
    d = 0.5 * (d + d.T)
    v = -np.linalg.inv(d) if rcond(d) >= RCOND_CAP else np.zeros_like(d)
    p = theta.size
    return LocalFit(theta, d, v, tuple(range(p)), 0.0, z.shape[0], "mz")


def psi_covariate(batch, fn: EstimatingFunction, theta_eval) -> np.ndarray:
    """``m^{-1/2} sum_i psi(theta_eval, Z_i)``."""
    z = _col(batch)
    return fn.values(np.atleast_1d(np.asarray(theta_eval, dtype=float)), z).sum(axis=0) \
        / np.sqrt(z.shape[0])


def mz_covariates(batches: Sequence, fn: EstimatingFunction, fits: Sequence[LocalFit],
                  centering: str = "pilot") -> list[np.ndarray]:
    """Covariates for every batch.

    ``centering="pilot"`` evaluates at the naive average of the local
    estimates; ``"literal"`` evaluates each batch at its own estimate, which
    gives zero covariates for exact roots.
    """
    if centering == "pilot":
        pilot = stack_thetas(fits).mean(axis=0)
        return [psi_covariate(b, fn, pilot) for b in batches]
    if centering == "literal":
        return [psi_covariate(b, fn, f.theta_hat) for b, f in zip(batches, fits)]
    raise DomainError(f"centering must be 'pilot' or 'literal', got {centering!r}")


def bc_ge_mz(fits: Sequence[LocalFit], covariates: Sequence, component: int):
    """Bias-corrected composite of coordinate ``component`` from Z-estimates.

    Regresses ``theta_hat_j[component]`` on the covariate vectors with an
    intercept, through the same least-squares kernel as the linear case.

    Returns
    -------
    theta_tilde : float
    xi_tilde : ndarray
    var_hat : float
    """
    thetas = stack_thetas(fits)
    cov = np.array([np.atleast_1d(c) for c in covariates], dtype=float)
    if cov.shape[0] != thetas.shape[0]:
        raise DimensionMismatchError("need one covariate vector per fit")
    fit = _lsq.intercept_fit(thetas[:, component], cov)
    return fit.intercept, fit.slopes, fit.var_hat
