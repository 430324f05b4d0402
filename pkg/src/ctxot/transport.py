"""Discrete transport between feature sets.

Three values are computed on the same cost matrix:

* the exact earth mover's distance under uniform marginals (small N only),
* the relaxed EM distance, the larger of the two one-sided relaxations,
* the contextual cost, the column-side relaxation alone, built on the tape
  so it can drive a generator.

For any cost matrix ``contextual <= relaxed <= exact``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

__all__ = [
    "CapacityError",
    "FeatureSet",
    "CostMatrix",
    "TransportPlan",
    "cost_matrix",
    "emd_exact",
    "rem_distance",
    "contextual_cost",
    "contextual_value",
    "EMD_MAX_N",
]

EMD_MAX_N = 8
UNIT_TOL = 1e-9


class CapacityError(ValueError):
    """Raised when the exact solver is asked for a problem larger than it handles."""


@dataclass(frozen=True)
class FeatureSet:
    """``N`` feature vectors of dimension ``D``, one per row.

    ``vectors`` is a :class:`Tensor` so a feature set produced by the encoder
    stays connected to the tape.  Rows must have unit norm within ``tol``;
    pass ``tol=None`` to skip the check (used for rows that were normalised
    with the zero guard and may be exactly zero).
    """

    vectors: Tensor
    tol: float | None = field(default=UNIT_TOL, compare=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.vectors, Tensor):
            object.__setattr__(self, "vectors", Tensor(self.vectors))
        if self.vectors.ndim != 2:
            raise DimensionError(f"feature set must be N x D, got shape {self.vectors.shape}")
        if self.count < 1 or self.dim < 1:
            raise DimensionError(f"feature set needs N >= 1 and D >= 1, got {self.vectors.shape}")
        if self.tol is not None and not self.is_unit(self.tol):
            raise ValueError(f"feature vectors are not unit length within {self.tol}")

    @classmethod
    def from_raw(cls, raw, eps: float = 1e-12) -> "FeatureSet":
        """Normalise each row of ``raw`` to unit length."""
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 2:
            raise DimensionError(f"feature set must be N x D, got shape {raw.shape}")
        norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
        return cls(Tensor(raw / (norms[:, None] + eps)), tol=None)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def array(self) -> np.ndarray:
        return self.vectors.data

    def is_unit(self, tol: float = UNIT_TOL) -> bool:
        norms = np.sqrt(np.einsum("ij,ij->i", self.array, self.array))
        return bool(np.all(np.abs(norms - 1.0) <= tol))


@dataclass(frozen=True)
class CostMatrix:
    """Square nonnegative cost matrix; ``kind`` is ``"sqeuclid"`` or ``"exp"``."""

    values: np.ndarray
    kind: str = "sqeuclid"
    h: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"cost matrix must be 2-D, got shape {values.shape}")
        if np.any(values < 0):
            raise ValueError("cost matrix entries must be nonnegative")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TransportPlan:
    """Flow matrix with uniform ``1/N`` row and column sums."""

    flows: np.ndarray

    def marginal_error(self) -> float:
        n = self.flows.shape[0]
        rows = np.abs(self.flows.sum(axis=1) - 1.0 / n)
        cols = np.abs(self.flows.sum(axis=0) - 1.0 / n)
        return float(max(rows.max(), cols.max()))

    @property
    def permutation(self) -> tuple[int, ...]:
        """Column matched to each row (valid for vertex plans)."""
        return tuple(int(j) for j in np.argmax(self.flows, axis=1))


def _values(c) -> np.ndarray:
    return c.values if isinstance(c, CostMatrix) else np.asarray(c, dtype=np.float64)


def _as_features(fs) -> Tensor:
    if isinstance(fs, FeatureSet):
        return fs.vectors
    if isinstance(fs, Tensor):
        return fs
    return Tensor(fs)


def cost_matrix(a, b, kind: str = "sqeuclid", h: float = 0.5) -> CostMatrix:
    """Pairwise costs with rows over ``a`` and columns over ``b``.

    ``sqeuclid`` gives ``||a_i - b_j||^2``; ``exp`` gives
    ``exp(||a_i - b_j||^2 / h)``.
    """
    va, vb = _as_features(a), _as_features(b)
    if va.shape[0] != vb.shape[0]:
        raise DimensionError(f"feature sets differ in count: {va.shape[0]} vs {vb.shape[0]}")
    if va.shape[1] != vb.shape[1]:
        raise DimensionError(f"feature sets differ in dimension: {va.shape[1]} vs {vb.shape[1]}")
    with ad.no_grad():
        d2 = ad.pairwise_sqdist(va, vb).data
    if kind == "sqeuclid":
        return CostMatrix(d2, "sqeuclid")
    if kind == "exp":
        if not h > 0:
            raise ValueError(f"bandwidth h must be positive, got {h}")
        return CostMatrix(np.exp(d2 / h), "exp", float(h))
    raise ValueError(f"unknown cost kind {kind!r}")


def _check_square(c: np.ndarray) -> None:
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError(f"cost matrix must be square, got shape {c.shape}")


def emd_exact(c) -> tuple[float, TransportPlan]:
    """Exact EMD with uniform marginals by enumerating permutations.

    With equal uniform marginals the feasible flows form a scaled Birkhoff
    polytope whose vertices are permutation matrices, so the best
    permutation is optimal.  Ties go to the lexicographically smallest
    permutation.
    """
    c = _values(c)
    _check_square(c)
    n = c.shape[0]
    if n > EMD_MAX_N:
        raise CapacityError(
            f"exact EMD enumerates {n}! permutations; N={n} exceeds {EMD_MAX_N}, use rem_distance instead"
        )
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    assert perms.shape[0] == factorial(n)
    totals = c[np.arange(n), perms].sum(axis=1)
    best = int(np.argmin(totals))
    flows = np.zeros((n, n))
    flows[np.arange(n), perms[best]] = 1.0 / n
    return _exact_mean(c[np.arange(n), perms[best]]), TransportPlan(flows)


def _exact_mean(values: np.ndarray) -> float:
    # correctly rounded, so the value does not depend on summation order and
    # the bounds between the relaxations survive in floating point
    return math.fsum(values.tolist()) / values.size


def rem_distance(c) -> float:
    """Relaxed EM distance: ``max(mean_i min_j C_ij, mean_j min_i C_ij)``."""
    c = _values(c)
    _check_square(c)
    return max(_exact_mean(c.min(axis=1)), _exact_mean(c.min(axis=0)))


def contextual_value(c) -> float:
    """Column-side relaxation ``mean_j min_i C_ij`` of a plain cost matrix."""
    c = _values(c)
    _check_square(c)
    return _exact_mean(c.min(axis=0))


def contextual_cost(y_feats, fy_feats, h: float = 0.5) -> Tensor:
    """Differentiable contextual transport cost between two feature sets.

    Builds ``C_ij = exp(||y_i - fy_j||^2 / h)`` with ``i`` over ``y_feats`` and
    ``j`` over ``fy_feats`` and returns ``(1/N) sum_j min_i C_ij`` as a
    scalar tensor.  The gradient reaches only the selected minimum of each
    column (lowest row index on ties).
    """
    y, fy = _as_features(y_feats), _as_features(fy_feats)
    if y.shape != fy.shape:
        raise DimensionError(f"feature sets must match in N and D: {y.shape} vs {fy.shape}")
    if not h > 0:
        raise ValueError(f"bandwidth h must be positive, got {h}")
    c = ad.exp(ad.div(ad.pairwise_sqdist(y, fy), float(h)))
    return ad.mean(ad.min_over_axis(c, 0))
