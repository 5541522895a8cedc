"""Core containers, batch partitioning and dataset I/O.

Indices are 0-based everywhere in code. Human-facing outputs (CSV component
columns, CLI messages) use 1-based coordinates, and the conversion happens at
the serialization boundary only.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DatasetFormatError,
    DimensionMismatchError,
    DomainError,
    IndivisibleError,
)

SUPPORT_TOL = 1e-10
"""Coordinates with ``|theta_k|`` above this value count as nonzero."""

SYMMETRY_RTOL = 1e-12

LOCAL_FIT_SCHEMA = "gbcdc.local_fit/1"
COMPOSITION_SCHEMA = "gbcdc.composition/1"

ESTIMATOR_KINDS = ("ols", "ridge", "lasso", "mz")
METHODS = ("naive", "dc_expression", "bc_ge")


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionDataset:
    """Design matrix ``x`` (n x p) and response ``y`` (n,).

    Construction copies the inputs into read-only float64 arrays and rejects
    non-finite values, so a dataset can be shared freely between threads.

    Parameters
    ----------
    x : array_like, shape (n, p)
    y : array_like, shape (n,)
    names : sequence of str, optional
        Column names for the p covariates and the response (length p + 1).
    """

    x: np.ndarray
    y: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or y.ndim != 1:
            raise DimensionMismatchError("x must be 2-D and y 1-D")
        n, p = x.shape
        if n < 1 or p < 1:
            raise DomainError(f"dataset needs n >= 1 and p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise DimensionMismatchError(f"x has {n} rows but y has length {y.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError("dataset contains NaN or infinite values")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        if self.names is not None:
            names = tuple(str(s) for s in self.names)
            if len(names) != p + 1:
                raise DimensionMismatchError(f"expected {p + 1} column names, got {len(names)}")
            object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, index) -> "RegressionDataset":
        """Rows ``index`` as a new dataset."""
        index = np.asarray(index)
        return RegressionDataset(self.x[index], self.y[index], self.names)

    def batches(self, partition: "BatchPartition") -> Iterator["RegressionDataset"]:
        """Yield one dataset per block of ``partition``."""
        if partition.n != self.n:
            raise DimensionMismatchError(
                f"partition covers {partition.n} rows, dataset has {self.n}")
        for block in partition.blocks:
            yield self.subset(block)


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchPartition:
    """Disjoint index blocks covering ``range(n)``.

    Attributes
    ----------
    blocks : tuple of ndarray
        0-based row indices of each batch.
    n : int
        Total number of rows.
    m : int
        Nominal batch size ``n // N``. In lenient mode the last block may be
        larger; see :attr:`sizes`.
    strict : bool
        Whether all blocks have size exactly ``m``.
    """

    blocks: tuple[np.ndarray, ...]
    n: int
    m: int
    strict: bool = True

    def __post_init__(self):
        blocks = tuple(_frozen(b, dtype=np.intp) for b in self.blocks)
        if len(blocks) < 1:
            raise DomainError("a partition needs at least one block")
        allidx = np.concatenate(blocks)
        if allidx.size != self.n or not np.array_equal(np.sort(allidx), np.arange(self.n)):
            raise DomainError("blocks must be disjoint and cover range(n)")
        if self.strict and any(b.size != self.m for b in blocks):
            raise IndivisibleError("strict partition with unequal block sizes")
        object.__setattr__(self, "blocks", blocks)

    @property
    def N(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        """Per-batch sizes ``m_j``."""
        return tuple(int(b.size) for b in self.blocks)


def _check_counts(n: int, N: int, strict: bool) -> int:
    if N < 1:
        raise DomainError(f"N must be >= 1, got {N}")
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if N > n:
        raise DomainError(f"cannot split n={n} rows into N={N} batches")
    if strict and n % N:
        raise IndivisibleError(f"N={N} does not divide n={n}")
    return n // N


def _split(order: np.ndarray, N: int, m: int) -> list[np.ndarray]:
    blocks = [order[j * m:(j + 1) * m] for j in range(N - 1)]
    blocks.append(order[(N - 1) * m:])
    return blocks


def partition_contiguous(n: int, N: int, strict: bool = True) -> BatchPartition:
    """Split ``range(n)`` into ``N`` consecutive blocks.

    In lenient mode (``strict=False``) the remainder ``n mod N`` goes to the
    final block.

    Examples
    --------
    >>> [b.tolist() for b in partition_contiguous(6, 3).blocks]
    [[0, 1], [2, 3], [4, 5]]
    """
    m = _check_counts(n, N, strict)
    return BatchPartition(tuple(_split(np.arange(n), N, m)), n, m, strict=strict)


def partition_shuffled(n: int, N: int, seed: int, strict: bool = True) -> BatchPartition:
    """Split a seeded random permutation of ``range(n)`` into ``N`` blocks."""
    m = _check_counts(n, N, strict)
    order = np.random.default_rng(seed).permutation(n)
    return BatchPartition(tuple(_split(order, N, m)), n, m, strict=strict)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def read_dataset_csv(path) -> RegressionDataset:
    """Read a dataset from CSV.

    The file must have a header row; the last column is the response and the
    others are covariates. Errors name the offending line (1-based, header is
    line 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        return _parse_dataset(fh, str(path))


def parse_dataset_csv(text: str) -> RegressionDataset:
    """Parse CSV text with the same rules as :func:`read_dataset_csv`."""
    return _parse_dataset(io.StringIO(text), "<string>")


def _parse_dataset(fh, label: str) -> RegressionDataset:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError(f"{label}: empty file") from None
    header = [h.strip() for h in header]
    if len(header) < 2:
        raise DatasetFormatError(f"{label}:1: need at least one covariate and a response column")
    width = len(header)
    rows = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise DatasetFormatError(
                f"{label}:{line}: expected {width} fields, found {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise DatasetFormatError(f"{label}:{line}: non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise DatasetFormatError(f"{label}:{line}: non-finite value")
        rows.append(vals)
    if not rows:
        raise DatasetFormatError(f"{label}: no data rows")
    arr = np.array(rows)
    return RegressionDataset(arr[:, :-1], arr[:, -1], tuple(header))


def write_dataset_csv(dataset: RegressionDataset, path) -> None:
    """Write ``dataset`` as CSV with full float precision."""
    names = dataset.names or tuple(f"x{k + 1}" for k in range(dataset.p)) + ("y",)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for xi, yi in zip(dataset.x, dataset.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


# ---------------------------------------------------------------------------
# Local fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalFit:
    """Summary of one batch: estimate, Gram matrix and pro-forma covariates.

    Parameters
    ----------
    theta_hat : ndarray, shape (p,)
        Local estimate. For LASSO it is the full p-vector, zero off-support.
    gram : ndarray, shape (p, p)
        ``X_j^T X_j / m``.
    v_matrix : ndarray
        Covariate matrix of the closed-form representation. Its size is
        ``|support|`` for LASSO and ``p`` otherwise.
    support : tuple of int
        0-based indices of the nonzero coordinates.
    lam : float
        Penalty level (0 for OLS and Z-estimators).
    m : int
        Batch size.
    kind : {"ols", "ridge", "lasso", "mz"}
    """

    theta_hat: np.ndarray
    gram: np.ndarray
    v_matrix: np.ndarray
    support: tuple[int, ...]
    lam: float
    m: int
    kind: str

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        gram = np.atleast_2d(np.asarray(self.gram, dtype=float))
        v = np.asarray(self.v_matrix, dtype=float)
        if v.ndim != 2:
            v = v.reshape(len(self.support), len(self.support))
        p = theta.shape[0]
        if self.kind not in ESTIMATOR_KINDS:
            raise DomainError(f"unknown estimator kind {self.kind!r}")
        if gram.shape != (p, p):
            raise DimensionMismatchError(f"gram shape {gram.shape} does not match p={p}")
        scale = max(1.0, float(np.max(np.abs(gram)))) if gram.size else 1.0
        if np.max(np.abs(gram - gram.T), initial=0.0) > SYMMETRY_RTOL * scale:
            raise DomainError("gram matrix is not symmetric")
        support = tuple(int(k) for k in self.support)
        if any(k < 0 or k >= p for k in support) or len(set(support)) != len(support):
            raise DomainError("support must hold distinct indices in range(p)")
        if list(support) != sorted(support):
            raise DomainError("support must be sorted")
        q = len(support) if self.kind == "lasso" else p
        if v.shape != (q, q):
            raise DimensionMismatchError(f"v_matrix shape {v.shape}, expected ({q}, {q})")
        if self.kind == "lasso":
            off = np.ones(p, dtype=bool)
            off[list(support)] = False
            if np.any(theta[off] != 0.0):
                raise DomainError("lasso theta_hat must vanish off its support")
        if self.lam < 0 or not math.isfinite(self.lam):
            raise DomainError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.m < 1:
            raise DomainError("batch size must be positive")
        object.__setattr__(self, "theta_hat", _frozen(theta))
        object.__setattr__(self, "gram", _frozen(gram))
        object.__setattr__(self, "v_matrix", _frozen(v))
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "m", int(self.m))

    @property
    def p(self) -> int:
        return self.theta_hat.shape[0]

    def to_dict(self) -> dict:
        return {
            "schema": LOCAL_FIT_SCHEMA,
            "kind": self.kind,
            "m": self.m,
            "lambda": self.lam,
            "support": list(self.support),
            "theta_hat": self.theta_hat.tolist(),
            "gram": self.gram.tolist(),
            "v_matrix": self.v_matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LocalFit":
        if d.get("schema") != LOCAL_FIT_SCHEMA:
            raise DomainError(f"unsupported local-fit schema {d.get('schema')!r}")
        return cls(theta_hat=d["theta_hat"], gram=d["gram"], v_matrix=d["v_matrix"],
                   support=tuple(d["support"]), lam=d["lambda"], m=d["m"], kind=d["kind"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LocalFit":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        """Long-format CSV with columns ``field,row,col,value`` (0-based)."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["field", "row", "col", "value"])
        w.writerow(["kind", "", "", self.kind])
        w.writerow(["m", "", "", self.m])
        w.writerow(["lambda", "", "", repr(self.lam)])
        for k in self.support:
            w.writerow(["support", k, "", 1])
        for i, v in enumerate(self.theta_hat):
            w.writerow(["theta_hat", i, "", repr(float(v))])
        for name, mat in (("gram", self.gram), ("v_matrix", self.v_matrix)):
            for (i, j), v in np.ndenumerate(mat):
                w.writerow([name, i, j, repr(float(v))])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LocalFit":
        rows = list(csv.DictReader(io.StringIO(text)))
        scalars = {r["field"]: r["value"] for r in rows if r["row"] == ""}
        support = [int(r["row"]) for r in rows if r["field"] == "support"]
        theta = {int(r["row"]): float(r["value"]) for r in rows if r["field"] == "theta_hat"}
        p = len(theta)

        def mat(name):
            cells = [(int(r["row"]), int(r["col"]), float(r["value"]))
                     for r in rows if r["field"] == name]
            size = max((c[0] for c in cells), default=-1) + 1
            out = np.zeros((size, size))
            for i, j, v in cells:
                out[i, j] = v
            return out

        return cls(theta_hat=[theta[i] for i in range(p)], gram=mat("gram"),
                   v_matrix=mat("v_matrix"), support=tuple(support),
                   lam=float(scalars["lambda"]), m=int(scalars["m"]), kind=scalars["kind"])


# ---------------------------------------------------------------------------
# Composition results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompositionResult:
    """Global estimate produced by one of the aggregation methods.

    Attributes
    ----------
    theta_tilde : ndarray
        One entry per reported component.
    xi_tilde : tuple of ndarray
        Fitted nuisance slopes per component (empty vectors for the baselines).
    var_hat : ndarray
        Per-component variance estimates.
    sigma2_hat : ndarray
        Per-component noise-variance estimates. For BC-GE this is the residual
        variance of the pro-forma regression; for the baselines it is the
        between-batch spread, so that ``var_hat = sigma2_hat / N``.
    method : {"naive", "dc_expression", "bc_ge"}
    n_batches : int
    components : tuple of int
        0-based coordinates of the original parameter that each entry refers
        to (the majority-vote support for LASSO).
    """

    theta_tilde: np.ndarray
    xi_tilde: tuple[np.ndarray, ...]
    var_hat: np.ndarray
    sigma2_hat: np.ndarray
    method: str
    n_batches: int
    components: tuple[int, ...] = field(default=())

    def __post_init__(self):
        theta = _frozen(np.atleast_1d(self.theta_tilde))
        var = _frozen(np.atleast_1d(self.var_hat))
        s2 = _frozen(np.broadcast_to(np.asarray(self.sigma2_hat, dtype=float), theta.shape))
        if theta.shape != var.shape:
            raise DimensionMismatchError("theta_tilde and var_hat differ in length")
        if np.any(var < 0) or np.any(s2 < 0):
            raise DomainError("variance estimates must be nonnegative")
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}")
        xi = tuple(_frozen(np.atleast_1d(v)) for v in self.xi_tilde)
        if xi and len(xi) != theta.size:
            raise DimensionMismatchError("need one xi vector per component")
        comps = tuple(int(k) for k in self.components) or tuple(range(theta.size))
        if len(comps) != theta.size:
            raise DimensionMismatchError("components must label every entry of theta_tilde")
        object.__setattr__(self, "theta_tilde", theta)
        object.__setattr__(self, "var_hat", var)
        object.__setattr__(self, "sigma2_hat", s2)
        object.__setattr__(self, "xi_tilde", xi)
        object.__setattr__(self, "components", comps)

    def full_vector(self, p: int, fill: float = 0.0) -> np.ndarray:
        """Scatter ``theta_tilde`` into a length-``p`` vector."""
        out = np.full(p, fill)
        out[list(self.components)] = self.theta_tilde
        return out

    def to_dict(self) -> dict:
        return {
            "schema": COMPOSITION_SCHEMA,
            "method": self.method,
            "n_batches": self.n_batches,
            "components": [k + 1 for k in self.components],
            "theta_tilde": self.theta_tilde.tolist(),
            "var_hat": self.var_hat.tolist(),
            "sigma2_hat": self.sigma2_hat.tolist(),
            "xi_tilde": [v.tolist() for v in self.xi_tilde],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CompositionResult":
        if d.get("schema") != COMPOSITION_SCHEMA:
            raise DomainError(f"unsupported composition schema {d.get('schema')!r}")
        return cls(theta_tilde=d["theta_tilde"], xi_tilde=tuple(d["xi_tilde"]),
                   var_hat=d["var_hat"], sigma2_hat=d["sigma2_hat"], method=d["method"],
                   n_batches=d["n_batches"], components=tuple(k - 1 for k in d["components"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        """One row per component: ``k, theta_tilde, var_hat, sigma2_hat`` (k 1-based)."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["k", "theta_tilde", "var_hat", "sigma2_hat"])
        for k, t, v, s in zip(self.components, self.theta_tilde, self.var_hat, self.sigma2_hat):
            w.writerow([k + 1, repr(float(t)), repr(float(v)), repr(float(s))])
        return out.getvalue()


def stack_thetas(fits: Sequence[LocalFit]) -> np.ndarray:
    """Stack local estimates into an (N, p) array, checking dimensions."""
    if len(fits) == 0:
        raise DomainError("need at least one local fit")
    p = fits[0].p
    if any(f.p != p for f in fits):
        raise DimensionMismatchError("local fits differ in dimension")
    return np.vstack([f.theta_hat for f in fits])
