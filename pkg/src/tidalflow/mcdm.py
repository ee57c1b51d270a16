"""AHP and entropy weights, and the weighted performance index (lower is better)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateTableWarning,
    DimensionTooLarge,
    MissingScaler,
    NonPositiveEntry,
    NonReciprocal,
)

TRAFFIC_INDICATORS = ("D_s", "C_s", "D_a", "D")
EMISSION_INDICATORS = ("E_CO2", "E_NOx", "E_VOC", "E_f")

# Saaty's random consistency index
RANDOM_INDEX = {1: 0.0, 2: 0.0, 3: 0.58, 4: 0.90, 5: 1.12, 6: 1.24, 7: 1.32, 8: 1.41, 9: 1.45, 10: 1.49}
CR_THRESHOLD = 0.1
RECIPROCAL_TOL = 1e-9


@dataclass(frozen=True)
class ImportanceMatrix:
    a: np.ndarray
    labels: tuple[str, ...] = ()

    @classmethod
    def of(cls, rows: Sequence[Sequence[float]], labels: Sequence[str] = ()) -> "ImportanceMatrix":
        return cls(np.asarray(rows, dtype=float), tuple(labels))

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class WeightVector:
    weights: tuple[float, ...]
    labels: tuple[str, ...] = ()
    degenerate: bool = False

    def __getitem__(self, i: int) -> float:
        return self.weights[i]

    def __len__(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class IndicatorTable:
    """Rows are observations (intervals or candidate plans), columns are indicators."""

    values: np.ndarray
    directions: tuple[str, ...]  # "cost" or "benefit" per column
    labels: tuple[str, ...] = ()

    @classmethod
    def costs(cls, rows: Sequence[Sequence[float]], labels: Sequence[str] = ()) -> "IndicatorTable":
        values = np.asarray(rows, dtype=float)
        return cls(values, ("cost",) * values.shape[1], tuple(labels))


@dataclass(frozen=True)
class Scaler:
    """Reference value per indicator; each raw indicator is divided by its reference."""

    reference: Mapping[str, float] = field(default_factory=dict)

    def scale(self, name: str, value: float) -> float:
        if name not in self.reference:
            raise MissingScaler(f"no reference value for indicator {name!r}")
        ref = float(self.reference[name])
        # a zero reference carries no scale; fall back to the raw value
        return value / ref if ref > 0 else float(value)


@dataclass(frozen=True)
class IndexBreakdown:
    pi: float
    z_f: float
    z_n: float

    def __float__(self) -> float:
        return self.pi


def _check_matrix(m: ImportanceMatrix) -> np.ndarray:
    a = np.asarray(m.a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("importance matrix must be square")
    if np.any(~np.isfinite(a)) or np.any(a <= 0):
        raise NonPositiveEntry("importance matrix entries must be positive and finite")
    if np.any(np.abs(a * a.T - 1.0) > RECIPROCAL_TOL):
        raise NonReciprocal("importance matrix must satisfy a_ij * a_ji = 1")
    return a


def ahp_weights(m: ImportanceMatrix) -> WeightVector:
    """Normalized row geometric means of the pairwise importance matrix."""
    a = _check_matrix(m)
    n = a.shape[0]
    gm = np.exp(np.log(a).sum(axis=1) / n)
    w = gm / gm.sum()
    return WeightVector(tuple(float(x) for x in w), m.labels)


def principal_eigenvalue(a: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Perron eigenvalue of a positive matrix by power iteration."""
    n = a.shape[0]
    v = np.full(n, 1.0 / n)
    lam = 0.0
    for _ in range(max_iter):
        w = a @ v
        new_lam = float(w.sum())  # v sums to 1, so sum(Av) -> lambda
        v = w / w.sum()
        if abs(new_lam - lam) < tol:
            return new_lam
        lam = new_lam
    return lam


def consistency_ratio(m: ImportanceMatrix) -> float:
    a = _check_matrix(m)
    n = a.shape[0]
    if n > 10:
        raise DimensionTooLarge(f"random index is tabulated up to n=10, got {n}")
    if n <= 2:
        return 0.0
    lam = principal_eigenvalue(a)
    ci = (lam - n) / (n - 1)
    return ci / RANDOM_INDEX[n]


def entropy_weights(table: IndicatorTable) -> WeightVector:
    """Entropy weight method over min-max normalized columns.

    A constant column carries no information and gets weight 0. When every
    column is constant the result is uniform, flagged ``degenerate``, and a
    :class:`DegenerateTableWarning` is emitted.
    """
    x = np.asarray(table.values, dtype=float)
    n, m = x.shape
    if n < 2:
        raise ValueError("entropy weights need at least two rows")
    if not np.all(np.isfinite(x)):
        raise ValueError("indicator table contains non-finite values")
    d = np.zeros(m)
    for j in range(m):
        col = x[:, j]
        lo, hi = col.min(), col.max()
        if hi - lo <= 0:
            continue  # e_j = 1
        if table.directions[j] == "benefit":
            norm = (col - lo) / (hi - lo)
        else:
            norm = (hi - col) / (hi - lo)
        p = norm / norm.sum()
        nz = p[p > 0]
        e = -float(np.sum(nz * np.log(nz))) / math.log(n)
        d[j] = 1.0 - e
    labels = table.labels
    if d.sum() <= 0:
        warnings.warn("all indicator columns are constant; using uniform weights",
                      DegenerateTableWarning, stacklevel=2)
        return WeightVector(tuple([1.0 / m] * m), labels, degenerate=True)
    w = d / d.sum()
    return WeightVector(tuple(float(v) for v in w), labels)


def performance_index(metrics: Mapping[str, float], emissions: Mapping[str, float],
                      primary: WeightVector, sub_f: WeightVector, sub_n: WeightVector,
                      scaler: Scaler | None) -> IndexBreakdown:
    """PI = gamma_f * z_f + gamma_n * z_n on reference-scaled indicators."""
    if scaler is None:
        raise MissingScaler("performance index needs a scaler")
    if len(sub_f) != 4 or len(sub_n) != 4 or len(primary) != 2:
        raise ValueError("expected 2 primary and 4 + 4 sub-indicator weights")
    z_f = sum(w * scaler.scale(k, float(metrics[k])) for w, k in zip(sub_f.weights, TRAFFIC_INDICATORS))
    z_n = sum(w * scaler.scale(k, float(emissions[k])) for w, k in zip(sub_n.weights, EMISSION_INDICATORS))
    pi = primary[0] * z_f + primary[1] * z_n
    return IndexBreakdown(float(pi), float(z_f), float(z_n))


def improvement_pct(baseline: float, candidate: float) -> float:
    """Percentage reduction of a cost indicator relative to ``baseline``."""
    if baseline == 0:
        return 0.0 if candidate == 0 else -math.inf
    return (baseline - candidate) / baseline * 100.0
