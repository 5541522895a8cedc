"""Homogenizing transform ``U = A_j X + b`` for identically distributed batches.

When every batch has the same covariate distribution, the representation
covariates ``V_m(D_j)`` barely differ across batches and the pro-forma design
``(1, V)`` is (nearly) rank deficient. Rescaling the null coordinates (those
uncorrelated with the response) by a batch-specific factor ``a_j`` makes the
batch Gram matrices differ while leaving the regression coefficient of the
non-null coordinates unchanged.

The plan stores the null set, one vector of scale factors per batch, the
shift ``b`` (zero or a unit vector on the non-null coordinates) and,
optionally, the centering and scaling used to standardize the covariates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data_model import RegressionDataset
from .errors import DimensionMismatchError, DomainError, SingularGramError
from .local_estimators import RCOND_CAP, rcond

PLAN_SCHEMA = "gbcdc.homogenization_plan/1"

DEFAULT_A_LAW = {"name": "uniform_gap", "low": 0.5, "high": 1.5, "gap_low": 0.9, "gap_high": 1.1}


def _ro(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HomogenizationPlan:
    """Per-batch diagonal rescaling of the null coordinates plus a shift.

    Attributes
    ----------
    p : int
        Number of covariates.
    null_set : tuple of int
        0-based coordinates treated as uncorrelated with the response.
    a_values : ndarray, shape (N, len(null_set))
        Scale factors; row ``j`` applies to batch ``j``. All nonzero.
    b : ndarray, shape (p,)
        Shift, zero on the null set; either the zero vector or of unit norm.
    center, scale : ndarray or None
        Standardization applied before the transform, if any.
    a_law : dict
        Law the scale factors were drawn from (for provenance).
    seed : int or None
    """

    p: int
    null_set: tuple[int, ...]
    a_values: np.ndarray
    b: np.ndarray
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    a_law: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        null = tuple(sorted(int(k) for k in self.null_set))
        if any(k < 0 or k >= self.p for k in null) or len(set(null)) != len(null):
            raise DomainError("null set must hold distinct coordinates in range(p)")
        a = np.atleast_2d(np.asarray(self.a_values, dtype=float))
        if a.shape[1] != len(null):
            a = a.reshape(-1, len(null))
        if np.any(a == 0) or not np.all(np.isfinite(a)):
            raise DomainError("scale factors must be finite and nonzero")
        b = np.asarray(self.b, dtype=float)
        if b.shape != (self.p,):
            raise DimensionMismatchError(f"b must have length p={self.p}")
        if np.any(b[list(null)] != 0):
            raise DomainError("b must vanish on the null set")
        norm = np.linalg.norm(b)
        if norm != 0 and abs(norm - 1) > 1e-12:
            raise DomainError(f"b must be zero or of unit norm, got norm {norm}")
        object.__setattr__(self, "null_set", null)
        object.__setattr__(self, "a_values", _ro(a))
        object.__setattr__(self, "b", _ro(b))
        for name in ("center", "scale"):
            val = getattr(self, name)
            if val is not None:
                val = _ro(val)
                if val.shape != (self.p,):
                    raise DimensionMismatchError(f"{name} must have length p")
                object.__setattr__(self, name, val)
        if self.scale is not None and np.any(self.scale <= 0):
            raise DomainError("standardization scales must be positive")

    @property
    def N(self) -> int:
        return self.a_values.shape[0]

    @property
    def r(self) -> int:
        """1-based index of the first null coordinate after moving the null set last."""
        return self.p - len(self.null_set) + 1

    def diagonal(self, batch_index: int) -> np.ndarray:
        """Diagonal of ``A_j``."""
        d = np.ones(self.p)
        d[list(self.null_set)] = self.a_values[batch_index]
        return d

    def to_dict(self) -> dict:
        return {
            "schema": PLAN_SCHEMA,
            "p": self.p,
            "null_set": [k + 1 for k in self.null_set],
            "a_values": self.a_values.tolist(),
            "b": self.b.tolist(),
            "center": None if self.center is None else self.center.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
            "a_law": self.a_law,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HomogenizationPlan":
        if d.get("schema") != PLAN_SCHEMA:
            raise DomainError(f"unsupported plan schema {d.get('schema')!r}")
        return cls(d["p"], tuple(k - 1 for k in d["null_set"]),
                   np.reshape(d["a_values"], (-1, len(d["null_set"]))), d["b"],
                   d["center"], d["scale"], d["a_law"], d["seed"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "HomogenizationPlan":
        return cls.from_dict(json.loads(text))


def standardization(batch: RegressionDataset):
    """Column means and standard deviations (constant columns get scale 1)."""
    center = batch.x.mean(axis=0)
    scale = batch.x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return center, scale


def estimate_null_set(batch: RegressionDataset, threshold: float) -> tuple[int, ...]:
    """Coordinates whose absolute sample correlation with ``y`` is below ``threshold``.

    Columns and response are standardized internally. Constant columns have
    zero correlation by convention.
    """
    if not threshold > 0:
        raise DomainError(f"threshold must be positive, got {threshold}")
    xc = batch.x - batch.x.mean(axis=0)
    yc = batch.y - batch.y.mean()
    sx = np.sqrt(np.mean(xc**2, axis=0))
    sy = np.sqrt(np.mean(yc**2))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.mean(xc * yc[:, None], axis=0) / (sx * sy)
    corr = np.where((sx > 0) & (sy > 0), corr, 0.0)
    return tuple(int(k) for k in np.flatnonzero(np.abs(corr) < threshold))


def _check_law(a_law: dict):
    name = a_law.get("name")
    if name == "constant":
        if a_law["value"] == 0:
            raise DomainError("a-law support touches 0")
    elif name in ("uniform", "uniform_gap"):
        lo, hi = a_law["low"], a_law["high"]
        if not lo < hi:
            raise DomainError("a-law needs low < high")
        if lo <= 0 <= hi:
            raise DomainError("a-law support touches 0")
        if name == "uniform_gap":
            glo, ghi = a_law["gap_low"], a_law["gap_high"]
            if not lo <= glo < ghi <= hi or (glo == lo and ghi == hi):
                raise DomainError("excluded gap must lie strictly inside [low, high]")
    else:
        raise DomainError(f"unknown a-law {name!r}")


def _draw(a_law: dict, rng: np.random.Generator, size) -> np.ndarray:
    name = a_law["name"]
    if name == "constant":
        return np.full(size, float(a_law["value"]))
    if name == "uniform":
        return rng.uniform(a_law["low"], a_law["high"], size)
    lo, hi, glo, ghi = a_law["low"], a_law["high"], a_law["gap_low"], a_law["gap_high"]
    left = glo - lo
    u = rng.uniform(0.0, left + (hi - ghi), size)
    return np.where(u < left, lo + u, ghi + (u - left))


def build_plan(null_set, p: int, N: int, a_law: dict | None = None, seed: int = 0,
               shift: bool = True, center=None, scale=None) -> HomogenizationPlan:
    """Draw per-batch scale factors and the shift.

    Parameters
    ----------
    null_set : sequence of int
        0-based null coordinates.
    p : int
        Number of covariates.
    N : int
        Number of batches.
    a_law : dict, optional
        ``{"name": "uniform_gap", "low", "high", "gap_low", "gap_high"}``
        (default: uniform on [0.5, 1.5] without (0.9, 1.1)),
        ``{"name": "uniform", "low", "high"}`` or
        ``{"name": "constant", "value"}``.
    seed : int
    shift : bool
        If true and some coordinate is non-null, ``b`` is the unit vector on
        the first non-null coordinate; otherwise ``b = 0``.
    center, scale : array_like, optional
        Standardization to apply before the transform (see
        :func:`standardization`).

    Raises
    ------
    DomainError
        If the a-law support contains 0.
    """
    a_law = dict(DEFAULT_A_LAW if a_law is None else a_law)
    _check_law(a_law)
    if N < 1:
        raise DomainError("need N >= 1")
    null = tuple(sorted(int(k) for k in null_set))
    rng = np.random.default_rng(seed)
    a = _draw(a_law, rng, (N, len(null)))
    if a_law["name"] != "constant" and len(null):
        for _ in range(100):
            if len({tuple(row) for row in a}) == N:
                break
            a = _draw(a_law, rng, (N, len(null)))
        else:
            raise DomainError("could not draw distinct scale factors per batch")
    b = np.zeros(p)
    non_null = [k for k in range(p) if k not in null]
    if shift and non_null:
        b[non_null[0]] = 1.0
    return HomogenizationPlan(p, null, a, b, center, scale, a_law, seed)


def identity_plan(p: int, N: int) -> HomogenizationPlan:
    """Plan that leaves every batch untouched."""
    return HomogenizationPlan(p, (), np.ones((N, 0)), np.zeros(p), a_law={"name": "identity"})


def _transform_x(x, plan, j):
    if plan.center is not None:
        x = (x - plan.center) / plan.scale
    d = plan.diagonal(j)
    if np.any(d != 1):
        x = x * d
    if np.any(plan.b != 0):
        x = x + plan.b
    return x


def apply_transform(batch: RegressionDataset, plan: HomogenizationPlan,
                    batch_index: int) -> RegressionDataset:
    """Replace each row ``x_i`` of batch ``j`` by ``A_j x_i + b``; ``y`` is unchanged.

    Examples
    --------
    p = 2, null set {1}, a = 2, b = 0 maps the row (3, 5) to (3, 10).
    """
    if batch.p != plan.p:
        raise DimensionMismatchError(f"batch has p={batch.p}, plan expects p={plan.p}")
    if not 0 <= batch_index < plan.N:
        raise DomainError(f"batch index {batch_index} outside the plan's {plan.N} batches")
    return RegressionDataset(_transform_x(batch.x, plan, batch_index), batch.y, batch.names)


def invert_transform(batch: RegressionDataset, plan: HomogenizationPlan,
                     batch_index: int) -> RegressionDataset:
    """Inverse of :func:`apply_transform`."""
    if batch.p != plan.p:
        raise DimensionMismatchError(f"batch has p={batch.p}, plan expects p={plan.p}")
    x = (batch.x - plan.b) / plan.diagonal(batch_index)
    if plan.center is not None:
        x = x * plan.scale + plan.center
    return RegressionDataset(x, batch.y, batch.names)


@dataclass(frozen=True)
class EquivalenceReport:
    """Diagnostics comparing transformed-moment coefficients with the truth.

    ``eta_hat[j]`` solves the moment equations of the transformed batch ``j``;
    ``deviation = eta_hat - beta``. ``eigen_residual[j]`` is
    ``||(E - A_j E A_j) b - ||b||^2 b||`` with ``E`` the raw second-moment
    matrix of batch ``j``.
    """

    eta_hat: np.ndarray
    beta: np.ndarray
    deviation: np.ndarray
    null_set: tuple[int, ...]
    eigen_residual: np.ndarray

    @property
    def max_dev_non_null(self) -> float:
        keep = [k for k in range(self.beta.size) if k not in self.null_set]
        return float(np.max(np.abs(self.deviation[:, keep]), initial=0.0))

    @property
    def max_dev_null(self) -> float:
        return float(np.max(np.abs(self.deviation[:, list(self.null_set)]), initial=0.0))

    def to_dict(self) -> dict:
        return {
            "eta_hat": self.eta_hat.tolist(),
            "beta": self.beta.tolist(),
            "deviation": self.deviation.tolist(),
            "null_set": [k + 1 for k in self.null_set],
            "eigen_residual": self.eigen_residual.tolist(),
            "max_dev_non_null": self.max_dev_non_null,
            "max_dev_null": self.max_dev_null,
        }


def check_equivalence(dataset: RegressionDataset, plan: HomogenizationPlan,
                      beta_true, partition=None) -> EquivalenceReport:
    """Measure how well the transformed regressions reproduce ``beta_true``.

    Parameters
    ----------
    dataset : RegressionDataset
        Covariates on the scale the plan expects.
    plan : HomogenizationPlan
    beta_true : array_like, shape (p,)
    partition : BatchPartition, optional
        Defaults to ``plan.N`` contiguous blocks of ``dataset``.

    Raises
    ------
    SingularGramError
        If a transformed second-moment matrix is singular.
    """
    from .data_model import partition_contiguous

    beta = np.asarray(beta_true, dtype=float)
    if beta.shape != (plan.p,) or dataset.p != plan.p:
        raise DimensionMismatchError("beta, dataset and plan disagree on p")
    if partition is None:
        partition = partition_contiguous(dataset.n, plan.N, strict=False)
    etas, resid = [], []
    for j, batch in enumerate(dataset.batches(partition)):
        u = apply_transform(batch, plan, j).x
        m = u.shape[0]
        euu = u.T @ u / m
        if rcond(euu) < RCOND_CAP:
            raise SingularGramError(f"transformed moment matrix of batch {j + 1} is singular")
        etas.append(np.linalg.solve(euu, u.T @ batch.y / m))
        x = batch.x if plan.center is None else (batch.x - plan.center) / plan.scale
        exx = x.T @ x / m
        a = plan.diagonal(j)
        diff = exx - a[:, None] * exx * a[None, :]
        resid.append(np.linalg.norm(diff @ plan.b - (plan.b @ plan.b) * plan.b))
    eta = np.array(etas)
    return EquivalenceReport(eta, beta, eta - beta, plan.null_set, np.array(resid))
