"""Nadaraya-Watson batch estimates and their composite curve.

Each batch gives a curve ``r_hat_j(x)`` on a grid. The pro-forma covariate at
a grid point is ``phi_j(x) = sqrt(h/m) sum_i K_h(X_i - x)(Y_i - center)``,
and the composite ``r_tilde(x)`` is the intercept of the per-point regression
of ``r_hat_j(x)`` on ``phi_j(x)``.

Note that for any center that does not depend on ``j``,
``phi_j(x) = sqrt(h m) vhat_j(x) (r_hat_j(x) - center)`` with
``vhat_j(x) = (1/m) sum_i K_h(X_i - x)``. Centering at the batch's own estimate
therefore gives ``phi = 0`` identically (the "local" mode below).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import _lsq
from .errors import DomainError, EmptyWindowError, GbcdcError, InsufficientBatchesError

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _default_grid():
    return np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel, bandwidth rule ``h = c * m**(-varsigma)`` and evaluation grid.

    Parameters
    ----------
    kernel : {"gaussian", "epanechnikov"}
    c : float
        Bandwidth constant, positive.
    varsigma : float
        Bandwidth exponent in (0, 1).
    grid : ndarray
        Sorted evaluation points in [0, 1]; default 101 equispaced points.
    h : float, optional
        Fixed bandwidth overriding the rule.
    """

    kernel: str = "gaussian"
    c: float = 1.0
    varsigma: float = 1.0 / 3.0
    grid: np.ndarray = field(default_factory=_default_grid)
    h: float | None = None

    def __post_init__(self):
        if self.kernel not in ("gaussian", "epanechnikov"):
            raise DomainError(f"unknown kernel {self.kernel!r}")
        if not self.c > 0:
            raise DomainError("bandwidth constant must be positive")
        if not 0 < self.varsigma < 1:
            raise DomainError("varsigma must lie in (0, 1)")
        if self.h is not None and not self.h > 0:
            raise DomainError("bandwidth must be positive")
        g = np.array(self.grid, dtype=float).ravel()
        if g.size == 0 or np.any(np.diff(g) < 0) or g[0] < 0 or g[-1] > 1:
            raise DomainError("grid must be sorted within [0, 1]")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    def bandwidth(self, m: int) -> float:
        return float(self.h) if self.h is not None else float(self.c * m ** (-self.varsigma))

    def weights(self, u: np.ndarray, h: float) -> np.ndarray:
        """``K_h(u) = K(u/h)/h``."""
        t = u / h
        if self.kernel == "gaussian":
            k = np.exp(-0.5 * t * t) / _SQRT_2PI
        else:
            k = np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t), 0.0)
        return k / h


def _xy(batch):
    if isinstance(batch, tuple) and len(batch) == 2:
        x, y = batch
    else:
        arr = np.asarray(batch, dtype=float)
        x, y = arr[:, 0], arr[:, 1]
    return np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()


def nw_estimate(batch, x: float, spec: KernelSpec) -> float:
    """Nadaraya-Watson estimate at ``x``.

    ``batch`` is an ``(X, Y)`` pair or an (m, 2) array.

    Raises
    ------
    EmptyWindowError
        If no observation receives positive weight.
    """
    xs, ys = _xy(batch)
    w = spec.weights(xs - x, spec.bandwidth(xs.size))
    total = w.sum()
    if not total > 0:
        raise EmptyWindowError(f"no observation in the kernel window at x={x}")
    return float(w @ ys / total)


def phi_covariate(batch, x: float, spec: KernelSpec, center: float) -> float:
    """``sqrt(h/m) sum_i K_h(X_i - x)(Y_i - center)``."""
    xs, ys = _xy(batch)
    m = xs.size
    h = spec.bandwidth(m)
    w = spec.weights(xs - x, h)
    return float(np.sqrt(h / m) * (w @ (ys - center)))


def batch_curves(batch, spec: KernelSpec):
    """N-W curve and window mass of one batch on the grid.

    Returns
    -------
    r_hat : ndarray
        Estimates, NaN where the window is empty.
    sums : tuple of ndarray
        ``(sum K_h, sum K_h Y)`` per grid point, reused by :func:`phi_curve`.
    """
    xs, ys = _xy(batch)
    h = spec.bandwidth(xs.size)
    w = spec.weights(xs[None, :] - spec.grid[:, None], h)
    sw = w.sum(axis=1)
    swy = w @ ys
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(sw > 0, swy / sw, np.nan)
    return r, (sw, swy)


def phi_curve(sums, m: int, spec: KernelSpec, center) -> np.ndarray:
    """Covariates on the grid from the window sums of :func:`batch_curves`."""
    sw, swy = sums
    h = spec.bandwidth(m)
    return np.sqrt(h / m) * (swy - np.asarray(center) * sw)


def kernel_fits(batches, spec: KernelSpec, centering: str = "pilot"):
    """Per-batch curves and covariates.

    Parameters
    ----------
    batches : sequence
        Each an ``(X, Y)`` pair or (m, 2) array.
    spec : KernelSpec
    centering : {"pilot", "local"}
        ``"pilot"`` centers at the across-batch mean curve; ``"local"``
        centers each batch at its own estimate, which makes every covariate
        zero.

    Returns
    -------
    r_hat, phi : ndarray, shape (N, len(grid))
    """
    curves, sums, sizes = [], [], []
    for b in batches:
        r, s = batch_curves(b, spec)
        curves.append(r)
        sums.append(s)
        sizes.append(_xy(b)[0].size)
    r_hat = np.array(curves)
    if centering == "pilot":
        with np.errstate(invalid="ignore"):
            center = np.nanmean(r_hat, axis=0)
        phi = np.array([phi_curve(s, m, spec, center) for s, m in zip(sums, sizes)])
    elif centering == "local":
        phi = np.array([phi_curve(s, m, spec, r) for s, m, r in zip(sums, sizes, r_hat)])
    else:
        raise DomainError(f"centering must be 'pilot' or 'local', got {centering!r}")
    return r_hat, phi


@dataclass(frozen=True)
class CurveResult:
    """Composite curve on a grid.

    ``r_tilde`` and ``alpha_tilde`` are NaN where the point-wise regression
    failed; ``errors`` holds the reason per point (empty string if none).
    """

    x: np.ndarray
    r_tilde: np.ndarray
    alpha_tilde: np.ndarray
    naive_avg: np.ndarray
    n_batches_used: np.ndarray
    errors: tuple[str, ...]

    @property
    def rank_deficient(self) -> np.ndarray:
        return np.array(["RankDeficient" in e for e in self.errors])

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["x", "r_tilde", "alpha_tilde", "naive_avg", "n_batches_used"])
        for row in zip(self.x, self.r_tilde, self.alpha_tilde, self.naive_avg,
                       self.n_batches_used):
            w.writerow([repr(float(v)) for v in row[:4]] + [int(row[4])])
        return out.getvalue()


def bc_ge_curve(fits, covariates, grid=None) -> CurveResult:
    """Point-wise bias-corrected composite.

    Parameters
    ----------
    fits : array_like, shape (N, G)
        ``r_hat_j(x)`` per batch and grid point (NaN entries are skipped).
    covariates : array_like, shape (N, G)
        ``phi_j(x)``.
    grid : array_like, optional
        Grid points for the report; defaults to ``0..G-1``.

    Returns
    -------
    CurveResult
        Grid points whose regression fails (for example all covariates equal)
        carry NaN and an error string; other points are unaffected.
    """
    r = np.asarray(fits, dtype=float)
    phi = np.asarray(covariates, dtype=float)
    if r.shape != phi.shape or r.ndim != 2:
        raise DomainError("fits and covariates must be (N, G) arrays of the same shape")
    n_grid = r.shape[1]
    x = np.arange(n_grid, dtype=float) if grid is None else np.asarray(grid, dtype=float)
    r_tilde = np.full(n_grid, np.nan)
    alpha = np.full(n_grid, np.nan)
    naive = np.full(n_grid, np.nan)
    used = np.zeros(n_grid, dtype=int)
    errors = []
    for g in range(n_grid):
        ok = np.isfinite(r[:, g]) & np.isfinite(phi[:, g])
        used[g] = int(ok.sum())
        if used[g]:
            naive[g] = r[ok, g].mean()
        try:
            if used[g] < 3:
                raise InsufficientBatchesError("fewer than 3 batches with data")
            fit = _lsq.intercept_fit(r[ok, g], phi[ok, g][:, None])
        except GbcdcError as err:
            errors.append(f"{type(err).__name__}: {err}")
            continue
        r_tilde[g] = fit.intercept
        alpha[g] = fit.slopes[0]
        errors.append("")
    return CurveResult(x, r_tilde, alpha, naive, used, tuple(errors))


def trapezoid_ise(x, estimate, truth) -> float:
    """Trapezoid-rule integral of the squared error over the grid."""
    return float(np.trapezoid((np.asarray(estimate) - np.asarray(truth)) ** 2, x))
