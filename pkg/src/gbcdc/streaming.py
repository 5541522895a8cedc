"""Online form of the bias-corrected composite.

A :class:`StreamState` keeps, for each component, the batch count and an
upper-triangular factor ``R`` of the augmented rows ``(1, v_j', theta_j)``,
so that ``R'R`` is the matrix of raw sums. Absorbing a batch or merging two
states is a small QR re-factorization, which is an orthogonal update and does
not square the condition number the way accumulating the sums does. The raw
sums (``s_v``, ``s_vv``, ``s_theta``, ``s_vtheta``, ``s_theta2``) are
available as derived properties.

The state size depends on ``p`` and ``q`` only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import _lsq
from .composition import restricted_covariates
from .data_model import CompositionResult, LocalFit
from .errors import DimensionMismatchError, DomainError, GbcdcError, InsufficientBatchesError

SNAPSHOT_SCHEMA = "gbcdc.stream_state/2"


def _ro(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _refactor(stacked: np.ndarray) -> np.ndarray:
    """Triangular factor of each stacked block, with a nonnegative diagonal.

    ``stacked`` has shape (p, m, q + 2); the result has shape (p, q + 2, q + 2).
    Fixing the diagonal signs makes the factor unique for full-rank blocks.
    """
    p, m, d = stacked.shape
    r = np.linalg.qr(stacked, mode="r")
    if m < d:
        r = np.concatenate([r, np.zeros((p, d - m, d))], axis=1)
    sign = np.where(np.diagonal(r, axis1=1, axis2=2) < 0, -1.0, 1.0)
    return r * sign[:, :, None]


@dataclass(frozen=True)
class StreamState:
    """Running statistics for ``p`` components with ``q`` covariates each.

    Attributes
    ----------
    count : int
        Number of batches absorbed.
    r_factor : ndarray, shape (p, q + 2, q + 2)
        Upper-triangular ``R_k`` with ``R_k' R_k = sum_j a_j a_j'`` where
        ``a_j = (1, v_j', theta_j)`` for component ``k``.
    support : tuple of int
        Coordinates of the original parameter tracked by the state.
    """

    count: int
    r_factor: np.ndarray
    support: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "r_factor", _ro(self.r_factor))
        object.__setattr__(self, "support", tuple(int(k) for k in self.support))
        r = self.r_factor
        if r.ndim != 3 or r.shape[1] != r.shape[2] or r.shape[1] < 3:
            raise DimensionMismatchError("stream-state factor must have shape (p, q + 2, q + 2)")
        if len(self.support) != r.shape[0]:
            raise DimensionMismatchError("support must list one coordinate per component")

    @property
    def p(self) -> int:
        return self.r_factor.shape[0]

    @property
    def q(self) -> int:
        return self.r_factor.shape[1] - 2

    @property
    def N(self) -> int:
        return self.count

    @property
    def sums(self) -> np.ndarray:
        """``sum_j a_j a_j'`` per component, shape (p, q + 2, q + 2)."""
        r = self.r_factor
        return np.einsum("kia,kib->kab", r, r)

    @property
    def s_v(self) -> np.ndarray:
        """``sum_j v_j`` per component, shape (p, q)."""
        return self.sums[:, 0, 1:-1]

    @property
    def s_vv(self) -> np.ndarray:
        """``sum_j v_j v_j'`` per component, shape (p, q, q)."""
        return self.sums[:, 1:-1, 1:-1]

    @property
    def s_theta(self) -> np.ndarray:
        return self.sums[:, 0, -1]

    @property
    def s_vtheta(self) -> np.ndarray:
        return self.sums[:, 1:-1, -1]

    @property
    def s_theta2(self) -> np.ndarray:
        return self.sums[:, -1, -1]

    def to_dict(self) -> dict:
        return {
            "schema": SNAPSHOT_SCHEMA,
            "count": self.count,
            "support": list(self.support),
            "r_factor": self.r_factor.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamState":
        if d.get("schema") != SNAPSHOT_SCHEMA:
            raise DomainError(f"unsupported snapshot schema {d.get('schema')!r}")
        try:
            return cls(int(d["count"]), np.asarray(d["r_factor"], dtype=float),
                       tuple(d["support"]))
        except (KeyError, TypeError, ValueError) as err:
            raise DomainError(f"malformed snapshot: {err}") from None

    def to_json(self) -> str:
        """Snapshot as JSON. Python writes floats with round-trip precision."""
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "StreamState":
        return cls.from_dict(json.loads(text))


def stream_init(p: int, q: int, support=None) -> StreamState:
    """Empty state for ``p`` components with ``q`` covariates each.

    Parameters
    ----------
    p, q : int
        Both at least 1. For ridge fits ``q = p``; for LASSO ``p = q = |S|``.
    support : sequence of int, optional
        Original coordinates being tracked, default ``range(p)``. A LASSO
        stream restricts every fit to this support.
    """
    if p < 1 or q < 1:
        raise DomainError("p and q must be at least 1")
    support = tuple(range(p)) if support is None else tuple(support)
    if len(support) != p:
        raise DimensionMismatchError("support must list p coordinates")
    return StreamState(0, np.zeros((p, q + 2, q + 2)), support)


def fit_summary(state: StreamState, fit: LocalFit):
    """Responses ``(p,)`` and covariate rows ``(p, q)`` a fit contributes."""
    idx = list(state.support)
    if max(idx) >= fit.p:
        raise DimensionMismatchError("fit has fewer coordinates than the state tracks")
    if fit.kind == "lasso":
        v = fit.v_matrix if fit.support == state.support else restricted_covariates(fit, idx)
    else:
        v = fit.v_matrix[idx]
    if v.shape != (state.p, state.q):
        raise DimensionMismatchError(
            f"fit covariates have shape {v.shape}, state expects {(state.p, state.q)}")
    return fit.theta_hat[idx], v


def stream_update(state: StreamState, fit: LocalFit) -> StreamState:
    """Absorb one local fit. Cost is independent of the number of batches seen."""
    theta, v = fit_summary(state, fit)
    return update_raw(state, theta, v)


def update_raw(state: StreamState, theta, v) -> StreamState:
    """Absorb responses ``theta`` (p,) and covariate rows ``v`` (p, q)."""
    theta = np.asarray(theta, dtype=float)
    v = np.asarray(v, dtype=float)
    if theta.shape != (state.p,) or v.shape != (state.p, state.q):
        raise DimensionMismatchError("update does not match the state dimensions")
    row = np.concatenate([np.ones((state.p, 1)), v, theta[:, None]], axis=1)
    stacked = np.concatenate([state.r_factor, row[:, None, :]], axis=1)
    return StreamState(state.count + 1, _refactor(stacked), state.support)


def merge(a: StreamState, b: StreamState) -> StreamState:
    """Combine two states built from disjoint sets of batches."""
    if a.support != b.support or a.q != b.q:
        raise DimensionMismatchError("states track different components")
    if a.count == 0:
        return b
    if b.count == 0:
        return a
    stacked = np.concatenate([a.r_factor, b.r_factor], axis=1)
    return StreamState(a.count + b.count, _refactor(stacked), a.support)


def stream_finalize(state: StreamState) -> CompositionResult:
    """Bias-corrected composite of all batches absorbed so far.

    Raises
    ------
    InsufficientBatchesError
        If ``N <= q + 1``.
    RankDeficientError
        If the design ``(1, V)`` implied by the factor is numerically singular.
    """
    if state.count <= state.q + 1:
        raise InsufficientBatchesError(
            f"need more than q + 1 = {state.q + 1} batches, have {state.count}")
    theta, xi, var, s2 = [], [], [], []
    for i, k in enumerate(state.support):
        try:
            fit = _lsq.intercept_fit_from_factor(state.count, state.r_factor[i])
        except GbcdcError as err:
            raise type(err)(f"component {k + 1}: {err}") from err
        theta.append(fit.intercept)
        xi.append(fit.slopes)
        var.append(fit.var_hat)
        s2.append(fit.sigma2_hat)
    return CompositionResult(np.array(theta), tuple(xi), np.array(var), np.array(s2),
                             "bc_ge", state.count, state.support)
