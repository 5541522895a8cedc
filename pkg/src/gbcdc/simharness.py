"""Data generators and Monte-Carlo drivers for bias / MSE / MISE studies.

Seeding rule
------------
Replicate ``r`` of an experiment with seed ``s`` draws its data from
``SeedSequence(s, spawn_key=(r,))``. Anything that depends on the number of
batches ``N`` as well (shuffled partitions, cross-validation folds) uses an
integer drawn from ``SeedSequence(s, spawn_key=(r, N))``. Replicates are
therefore independent of each other, of the thread count and of the order in
which they run.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import toeplitz

from .composition import bc_ge, dc_expression, majority_vote_support, naive_average
from .data_model import (
    RegressionDataset,
    partition_contiguous,
    partition_shuffled,
)
from .errors import ConfigError, GbcdcError
from .homogenization import apply_transform, build_plan, estimate_null_set
from .kernel_extension import KernelSpec, bc_ge_curve, kernel_fits, nw_estimate
from .local_estimators import (
    default_lambda_grid,
    fit_lasso,
    fit_ols,
    fit_ridge,
    select_lambda_cv,
)

GENERATORS = ("exp1_lasso", "exp2_ridge", "homogeneous", "nonparam")
METHODS = ("naive", "dc_expression", "bc_ge", "full_data")
METRICS_HEADER = ("experiment", "N", "method", "component", "bias", "mse", "var_hat",
                  "replicates", "seed", "note")

EXP1_BETA = np.array([3.0, 1.0, -1.0, -2.0] + [0.0] * 16)
EXP2_BETA = np.array([2.0, 0.5, -1.0, -2.0])


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _ar1_cholesky(p: int, rho: float) -> np.ndarray:
    return np.linalg.cholesky(toeplitz(rho ** np.arange(p)))


def _heterogeneous_linear(n, beta, rho, seed, heterogeneity, batch_size):
    rng = _rng(seed)
    p = beta.size
    if heterogeneity == "observation":
        mu = rng.standard_normal((n, p))
    elif heterogeneity == "batch":
        if not batch_size or n % batch_size:
            raise ConfigError("per-batch heterogeneity needs a batch size dividing n")
        mu = np.repeat(rng.standard_normal((n // batch_size, p)), batch_size, axis=0)
    else:
        raise ConfigError(f"unknown heterogeneity {heterogeneity!r}")
    x = mu + rng.standard_normal((n, p)) @ _ar1_cholesky(p, rho).T
    y = x @ beta + rng.standard_normal(n)
    return RegressionDataset(x, y), beta.copy()


def gen_experiment1(n: int, seed, heterogeneity: str = "observation", batch_size=None):
    """Sparse 20-dimensional design with heterogeneous means.

    ``X_i ~ N(mu_i, Sigma)`` with ``Sigma_ab = 0.5**|a-b|`` and
    ``mu_i ~ N(0, I)`` drawn per observation (or per contiguous batch of
    ``batch_size`` rows when ``heterogeneity="batch"``);
    ``y = X beta + eps`` with ``beta = (3, 1, -1, -2, 0, ..., 0)`` and standard
    normal noise.

    Returns
    -------
    dataset : RegressionDataset
    beta : ndarray
    """
    return _heterogeneous_linear(n, EXP1_BETA, 0.5, seed, heterogeneity, batch_size)


def gen_experiment2(n: int, seed, heterogeneity: str = "observation", batch_size=None):
    """Dense 4-dimensional design, ``beta = (2, 0.5, -1, -2)``, ``Sigma_ab = 0.95**|a-b|``."""
    return _heterogeneous_linear(n, EXP2_BETA, 0.95, seed, heterogeneity, batch_size)


def gen_homogeneous(n: int, p: int, beta, seed, design: str = "iid", batch_size=None):
    """Identically distributed rows with standard normal covariates.

    Parameters
    ----------
    design : {"iid", "replicated"}
        ``"iid"`` draws every row independently. ``"replicated"`` draws one
        block of ``batch_size`` rows and repeats it in every batch (fresh
        noise each time), so all batches share exactly the same design.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (p,):
        raise ConfigError(f"beta must have length p={p}")
    rng = _rng(seed)
    if design == "iid":
        x = rng.standard_normal((n, p))
    elif design == "replicated":
        if not batch_size or n % batch_size:
            raise ConfigError("replicated design needs a batch size dividing n")
        x = np.tile(rng.standard_normal((batch_size, p)), (n // batch_size, 1))
    else:
        raise ConfigError(f"unknown design {design!r}")
    y = x @ beta + rng.standard_normal(n)
    return RegressionDataset(x, y), beta.copy()


def regression_curve(x):
    """Test curve ``sin(2 pi x)``."""
    return np.sin(2.0 * np.pi * np.asarray(x))


def gen_nonparam(n: int, seed, design: str = "uniform", batch_size=None, noise_sd: float = 0.5):
    """Univariate regression ``y = sin(2 pi x) + eps`` with ``eps ~ N(0, noise_sd**2)``.

    ``design="uniform"`` draws ``x ~ U[0, 1]``. ``design="beta"`` draws each
    contiguous batch of ``batch_size`` rows from its own ``Beta(a_j, b_j)``
    law with ``a_j, b_j ~ U[0.6, 2]``.

    Returns
    -------
    x, y : ndarray
    """
    rng = _rng(seed)
    if design == "uniform":
        x = rng.uniform(0.0, 1.0, n)
    elif design == "beta":
        if not batch_size or n % batch_size:
            raise ConfigError("beta design needs a batch size dividing n")
        k = n // batch_size
        ab = rng.uniform(0.6, 2.0, (k, 2))
        x = np.concatenate([rng.beta(a, b, batch_size) for a, b in ab])
    else:
        raise ConfigError(f"unknown design {design!r}")
    y = regression_curve(x) + noise_sd * rng.standard_normal(n)
    return x, y


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of a Monte-Carlo sweep.

    Parameters
    ----------
    name : str
        Label written to the ``experiment`` column.
    generator : {"exp1_lasso", "exp2_ridge", "homogeneous", "nonparam"}
    n : int
        Total sample size; every entry of ``N_grid`` must divide it.
    N_grid : tuple of int
    replicates : int
    seed : int
    methods : tuple of str
        Subset of ``naive``, ``dc_expression``, ``bc_ge``, ``full_data``.
    estimator : {"auto", "lasso", "ridge", "ols"}
        ``auto`` means LASSO for ``exp1_lasso`` and ridge otherwise.
    lambda_rule : {"cv", "fixed"}
        ``cv`` picks one penalty per (replicate, N) by K-fold CV on the first
        batch and uses it in every batch; ``fixed`` uses ``lambda_value``.
    cv_rule : {"min", "1se"}
    """

    schema_version: int = 1
    name: str = "experiment"
    generator: str = "exp1_lasso"
    n: int = 2000
    N_grid: tuple[int, ...] = (10, 20, 50, 100)
    replicates: int = 100
    seed: int = 0
    methods: tuple[str, ...] = METHODS
    partition: str = "contiguous"
    heterogeneity: str = "observation"
    estimator: str = "auto"
    lambda_rule: str = "cv"
    lambda_value: float = 0.1
    cv_folds: int = 5
    cv_rule: str = "1se"
    cv_grid_size: int = 50
    cv_grid_ratio: float = 1e-3
    vote_threshold: float = 0.5
    # homogeneous generator
    p: int = 4
    beta: tuple[float, ...] = (2.0, -1.0, 0.0, 0.0)
    design: str = "iid"
    homogenize: bool = False
    homogenize_shift: bool = False
    null_threshold: float = 3.0
    # nonparametric generator
    kernel: str = "gaussian"
    bandwidth_c: float = 1.0
    varsigma: float = 1.0 / 3.0
    grid_size: int = 101
    centering: str = "pilot"
    noise_sd: float = 0.5
    x_design: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "N_grid", tuple(int(v) for v in self.N_grid))
        object.__setattr__(self, "methods", tuple(str(v) for v in self.methods))
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        self.validate()

    def validate(self):
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}")

        if self.schema_version != 1:
            bad("schema_version", f"unsupported version {self.schema_version}")
        if self.generator not in GENERATORS:
            bad("generator", f"must be one of {GENERATORS}")
        if self.n < 1:
            bad("n", "must be positive")
        if not self.N_grid:
            bad("N_grid", "must be nonempty")
        for N in self.N_grid:
            if N < 1 or self.n % N:
                bad("N_grid", f"N={N} does not divide n={self.n}")
        if self.replicates < 1:
            bad("replicates", "must be >= 1")
        for meth in self.methods:
            if meth not in METHODS:
                bad("methods", f"unknown method {meth!r}")
        checks = {
            "partition": ("contiguous", "shuffled"),
            "heterogeneity": ("observation", "batch"),
            "estimator": ("auto", "lasso", "ridge", "ols"),
            "lambda_rule": ("cv", "fixed"),
            "cv_rule": ("min", "1se"),
            "design": ("iid", "replicated"),
            "kernel": ("gaussian", "epanechnikov"),
            "centering": ("pilot", "local"),
            "x_design": ("uniform", "beta"),
        }
        for key, allowed in checks.items():
            if getattr(self, key) not in allowed:
                bad(key, f"must be one of {allowed}")
        if self.lambda_value < 0:
            bad("lambda_value", "must be >= 0")
        if self.cv_folds < 2:
            bad("cv_folds", "must be >= 2")
        if not 0 < self.vote_threshold <= 1:
            bad("vote_threshold", "must lie in (0, 1]")
        if len(self.beta) != self.p:
            bad("beta", f"length must equal p={self.p}")
        if not 0 < self.varsigma < 1:
            bad("varsigma", "must lie in (0, 1)")
        if self.grid_size < 2:
            bad("grid_size", "must be >= 2")

    @property
    def kind(self) -> str:
        if self.estimator != "auto":
            return self.estimator
        return "lasso" if self.generator == "exp1_lasso" else "ridge"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def config_fields() -> dict[str, Any]:
    """Field name to default value, used for schema validation."""
    return {f.name: (f.default if f.default is not dataclasses.MISSING else f.default_factory())
            for f in dataclasses.fields(ExperimentConfig)}


def config_from_mapping(data: dict) -> ExperimentConfig:
    """Build a config, rejecting unknown keys and checking value types."""
    known = config_fields()
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown configuration key")
    clean = {}
    for key, value in data.items():
        clean[key] = _coerce(key, value, known[key])
    return ExperimentConfig(**clean)


def _coerce(key, value, default):
    def fail():
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")

    if isinstance(default, bool):
        if not isinstance(value, bool):
            fail()
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            fail()
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail()
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            fail()
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            fail()
        inner = default[0] if default else None
        return tuple(_coerce(key, v, inner) if inner is not None else v for v in value)
    return value


# ---------------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------------


def replicate_seed(seed: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(replicate,))


def cell_seed(seed: int, replicate: int, N: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(replicate, N)).generate_state(1)[0])


def _select_lambda(cfg: ExperimentConfig, x, y, seed: int) -> float:
    if cfg.kind == "ols":
        return 0.0
    if cfg.lambda_rule == "fixed":
        return cfg.lambda_value
    grid = default_lambda_grid(x, y, cfg.cv_grid_size, cfg.cv_grid_ratio)
    return select_lambda_cv(x, y, cfg.kind, cfg.cv_folds, grid, seed, cfg.cv_rule)


def _fit(kind, x, y, lam):
    if kind == "lasso":
        return fit_lasso(x, y, lam)
    if kind == "ridge":
        return fit_ridge(x, y, lam)
    return fit_ols(x, y)


def _generate(cfg: ExperimentConfig, seed, batch_size=None):
    if cfg.generator == "exp1_lasso":
        return gen_experiment1(cfg.n, seed, cfg.heterogeneity, batch_size)
    if cfg.generator == "exp2_ridge":
        return gen_experiment2(cfg.n, seed, cfg.heterogeneity, batch_size)
    return gen_homogeneous(cfg.n, cfg.p, cfg.beta, seed, cfg.design, batch_size)


def _needs_batch_size(cfg):
    return ((cfg.generator in ("exp1_lasso", "exp2_ridge") and cfg.heterogeneity == "batch")
            or (cfg.generator == "homogeneous" and cfg.design == "replicated")
            or (cfg.generator == "nonparam" and cfg.x_design == "beta"))


def _partition(cfg, N, r):
    if cfg.partition == "shuffled":
        return partition_shuffled(cfg.n, N, cell_seed(cfg.seed, r, N))
    return partition_contiguous(cfg.n, N)


def fit_batches(cfg: ExperimentConfig, data: RegressionDataset, N: int, r: int):
    """Local fits of one (replicate, N) cell, with homogenization if configured."""
    part = _partition(cfg, N, r)
    batches = list(data.batches(part))
    if cfg.generator == "homogeneous" and cfg.homogenize:
        first = batches[0]
        null = estimate_null_set(first, cfg.null_threshold / math.sqrt(first.n))
        plan = build_plan(null, data.p, N, seed=cell_seed(cfg.seed, r, N),
                          shift=cfg.homogenize_shift)
        batches = [apply_transform(b, plan, j) for j, b in enumerate(batches)]
    lam = _select_lambda(cfg, batches[0].x, batches[0].y, cell_seed(cfg.seed, r, N))
    return [_fit(cfg.kind, b.x, b.y, lam) for b in batches], lam


def _compose(cfg, fits, p):
    """Estimates (p-vectors) and variance estimates of each method."""
    out = {}
    support = None
    if cfg.kind == "lasso":
        support = majority_vote_support(fits, cfg.vote_threshold)
    for meth in cfg.methods:
        if meth == "full_data":
            continue
        try:
            if meth == "naive":
                res = naive_average(fits)
            elif meth == "dc_expression":
                res = dc_expression(fits, support=support)
            else:
                res = bc_ge(fits, support=support)
            out[meth] = (res.full_vector(p), _var(res, p))
        except GbcdcError as err:
            out[meth] = f"{type(err).__name__}: {err}"
    return out


def _var(res, p):
    v = np.full(p, np.nan)
    v[list(res.components)] = res.var_hat
    return v


def run_replicate(cfg: ExperimentConfig, r: int) -> dict:
    """One replicate: ``{(N, method): (estimate, var_hat) or error string}``."""
    if cfg.generator == "nonparam":
        return _run_replicate_nonparam(cfg, r)
    batch_size = cfg.n // max(cfg.N_grid) if _needs_batch_size(cfg) else None
    data, beta = _generate(cfg, replicate_seed(cfg.seed, r), batch_size)
    out = {"beta": beta}
    if "full_data" in cfg.methods:
        try:
            lam = _select_lambda(cfg, data.x, data.y, cell_seed(cfg.seed, r, 0))
            full = _fit(cfg.kind, data.x, data.y, lam).theta_hat
            full = (full, np.full(data.p, np.nan))
        except GbcdcError as err:
            full = f"{type(err).__name__}: {err}"
        for N in cfg.N_grid:
            out[(N, "full_data")] = full
    for N in cfg.N_grid:
        try:
            fits, _ = fit_batches(cfg, data, N, r)
        except GbcdcError as err:
            for meth in cfg.methods:
                if meth != "full_data":
                    out[(N, meth)] = f"{type(err).__name__}: {err}"
            continue
        for meth, val in _compose(cfg, fits, data.p).items():
            out[(N, meth)] = val
    return out


def _kernel_spec(cfg):
    return KernelSpec(cfg.kernel, cfg.bandwidth_c, cfg.varsigma,
                      np.linspace(0.0, 1.0, cfg.grid_size))


def _run_replicate_nonparam(cfg, r):
    spec = _kernel_spec(cfg)
    batch_size = cfg.n // max(cfg.N_grid) if _needs_batch_size(cfg) else None
    x, y = gen_nonparam(cfg.n, replicate_seed(cfg.seed, r), cfg.x_design, batch_size,
                        cfg.noise_sd)
    truth = regression_curve(spec.grid)
    out = {"truth": truth, "grid": spec.grid}
    if "full_data" in cfg.methods:
        try:
            full = np.array([nw_estimate((x, y), g, spec) for g in spec.grid])
            full = (full, None)
        except GbcdcError as err:
            full = f"{type(err).__name__}: {err}"
        for N in cfg.N_grid:
            out[(N, "full_data")] = full
    for N in cfg.N_grid:
        part = _partition(cfg, N, r)
        batches = [(x[b], y[b]) for b in part.blocks]
        r_hat, phi = kernel_fits(batches, spec, cfg.centering)
        curve = bc_ge_curve(r_hat, phi, spec.grid)
        for meth in cfg.methods:
            if meth == "naive":
                out[(N, meth)] = (curve.naive_avg, None)
            elif meth == "bc_ge":
                failed = [e for e in curve.errors if e]
                out[(N, meth)] = (curve.r_tilde, None) if not failed else \
                    f"{len(failed)} grid points failed; first: {failed[0]}"
            elif meth == "dc_expression":
                out[(N, meth)] = "dc_expression is not defined for kernel fits"
    return out


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass
class MetricsTable:
    """Rows of the metrics CSV (see ``METRICS_HEADER``)."""

    rows: list[tuple] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return out.getvalue()

    def select(self, N=None, method=None, component=None) -> list[dict]:
        keep = []
        for row in self.rows:
            d = dict(zip(METRICS_HEADER, row))
            if ((N is None or d["N"] == N) and (method is None or d["method"] == method)
                    and (component is None or d["component"] == str(component))):
                keep.append(d)
        return keep

    def value(self, N, method, component, column):
        rows = self.select(N, method, component)
        if len(rows) != 1:
            raise KeyError((N, method, component))
        return rows[0][column]


def _fmt(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


class StrictModeError(GbcdcError):
    """Raised by :func:`run_experiment` in strict mode on the first failed cell."""


def run_experiment(cfg: ExperimentConfig, threads: int = 1, strict: bool = False) -> MetricsTable:
    """Run every replicate and summarize bias, MSE and variance estimates.

    Parametric generators give one row per (N, method, coordinate) plus a
    ``significant`` row averaging ``|bias|`` and MSE over the nonzero
    coordinates of the true parameter. The nonparametric generator gives one
    ``curve`` row per (N, method) whose ``bias`` is the integrated squared
    bias and ``mse`` the MISE (trapezoid rule over the grid).

    A cell whose method fails in some replicates is summarized over the
    successful ones and the failures are counted in ``note``; a cell failing
    in every replicate is written as NA. With ``strict=True`` the first
    failure raises :class:`StrictModeError` instead.
    """
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(lambda r: run_replicate(cfg, r), range(cfg.replicates)))
    else:
        reps = [run_replicate(cfg, r) for r in range(cfg.replicates)]
    if strict:
        for rep in reps:
            for key, val in rep.items():
                if isinstance(key, tuple) and isinstance(val, str):
                    raise StrictModeError(f"N={key[0]} method={key[1]}: {val}")
    table = MetricsTable()
    methods = [m for m in METHODS if m in cfg.methods]
    for N in cfg.N_grid:
        for meth in methods:
            vals = [rep[(N, meth)] for rep in reps]
            ok = [v for v in vals if not isinstance(v, str)]
            errs = [v for v in vals if isinstance(v, str)]
            note = ""
            if errs:
                note = f"{len(errs)}/{len(vals)} replicates failed: {errs[0]}"
            if cfg.generator == "nonparam":
                table.rows.extend(_curve_rows(cfg, N, meth, ok, reps[0], note))
            else:
                table.rows.extend(_param_rows(cfg, N, meth, ok, reps[0]["beta"], note))
    return table


def _param_rows(cfg, N, meth, ok, beta, note):
    p = beta.size
    base = (cfg.name, N, meth)
    if not ok:
        rows = [base + (str(k + 1), math.nan, math.nan, math.nan, 0, cfg.seed, note)
                for k in range(p)]
        rows.append(base + ("significant", math.nan, math.nan, math.nan, 0, cfg.seed, note))
        return rows
    est = np.array([v[0] for v in ok])
    var = np.array([v[1] for v in ok])
    err = est - beta
    bias = err.mean(axis=0)
    mse = (err**2).mean(axis=0)
    with np.errstate(invalid="ignore"):
        var_hat = np.array([np.nanmean(c) if np.any(np.isfinite(c)) else math.nan
                            for c in var.T])
    rows = [base + (str(k + 1), float(bias[k]), float(mse[k]), float(var_hat[k]), len(ok),
                    cfg.seed, note) for k in range(p)]
    sig = np.flatnonzero(beta != 0)
    rows.append(base + ("significant", float(np.mean(np.abs(bias[sig]))),
                        float(np.mean(mse[sig])), math.nan, len(ok), cfg.seed, note))
    return rows


def _curve_rows(cfg, N, meth, ok, rep0, note):
    base = (cfg.name, N, meth, "curve")
    if not ok:
        return [base + (math.nan, math.nan, math.nan, 0, cfg.seed, note)]
    grid, truth = rep0["grid"], rep0["truth"]
    curves = np.array([v[0] for v in ok])
    isb = float(np.trapezoid((curves.mean(axis=0) - truth) ** 2, grid))
    mise = float(np.mean([np.trapezoid((c - truth) ** 2, grid) for c in curves]))
    return [base + (isb, mise, math.nan, len(ok), cfg.seed, note)]
