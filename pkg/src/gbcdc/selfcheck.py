"""Fast identity checks run by ``gbcdc check``.

Each check compares two independent computations of the same quantity and
passes when they agree to its tolerance. A named fault can be injected to
confirm that a broken computation is caught.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .composition import ComponentRegression, bc_ge, bc_ge_component
from .local_estimators import (
    fit_lasso,
    fit_ridge,
    kkt_residuals,
    lambda_max,
    ridge_representation,
)
from .streaming import StreamState, stream_finalize, stream_init, stream_update

FAULTS = ("ridge", "stream", "kkt", "lsq")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float


def _ridge_identity(rng, fault):
    worst = 0.0
    for _ in range(20):
        m, p = rng.integers(10, 60), rng.integers(1, 8)
        x = rng.standard_normal((m, p)) * rng.uniform(0.5, 2, p)
        beta = rng.standard_normal(p)
        eps = rng.standard_normal(m)
        lam = rng.uniform(0.01, 2)
        fit = fit_ridge(x, x @ beta + eps, lam).theta_hat
        if fault == "ridge":
            fit = fit + 1e-6
        worst = max(worst, float(np.max(np.abs(fit - ridge_representation(x, beta, eps, lam)))))
    return worst


def _stream_equivalence(rng, fault):
    p, N, m = 3, 30, 40
    fits = []
    for _ in range(N):
        x = rng.standard_normal((m, p)) + rng.standard_normal(p)
        fits.append(fit_ridge(x, x @ np.array([1.0, -2.0, 0.5]) + rng.standard_normal(m), 0.3))
    state = stream_init(p, p)
    for j, f in enumerate(fits):
        state = stream_update(state, f)
        if j == N // 2:
            state = StreamState.from_json(state.to_json())
    streamed = stream_finalize(state).theta_tilde
    if fault == "stream":
        streamed = streamed + 1e-6
    return float(np.max(np.abs(streamed - bc_ge(fits).theta_tilde)))


def _kkt(rng, fault):
    worst = 0.0
    for _ in range(20):
        m, p = 50, 6
        x = rng.standard_normal((m, p))
        y = x @ np.array([2.0, -1.0, 0, 0, 0.5, 0]) + rng.standard_normal(m)
        lam = rng.uniform(0.02, 0.5)
        theta = fit_lasso(x, y, lam).theta_hat
        if fault == "kkt":
            theta = theta + 1e-6
        worst = max(worst, *kkt_residuals(x, y, theta, lam))
        zero = fit_lasso(x, y, lambda_max(x, y)).theta_hat
        worst = max(worst, float(np.max(np.abs(zero))))
    return worst


def _lsq_oracle(rng, fault):
    worst = 0.0
    for _ in range(20):
        N, q = rng.integers(8, 200), rng.integers(1, 5)
        v = rng.standard_normal((N, q))
        t = rng.standard_normal(N)
        theta, _, _ = bc_ge_component(ComponentRegression(t, v))
        if fault == "lsq":
            theta += 1e-6
        oracle = scipy.linalg.lstsq(np.column_stack([np.ones(N), v]), t)[0][0]
        worst = max(worst, abs(theta - oracle))
    return worst


CHECKS: dict[str, tuple[Callable, float]] = {
    "ridge representation identity": (_ridge_identity, 1e-10),
    "streaming vs batch composite": (_stream_equivalence, 1e-10),
    "lasso stationarity": (_kkt, 1e-7),
    "least-squares oracle": (_lsq_oracle, 1e-10),
}


def run_checks(seed: int = 0, fault: str | None = None) -> list[CheckResult]:
    """Run every check with a seeded generator; ``fault`` names one to corrupt."""
    out = []
    for name, (fn, tol) in CHECKS.items():
        worst = fn(np.random.default_rng(seed), fault)
        out.append(CheckResult(name, worst <= tol, worst, tol))
    return out
