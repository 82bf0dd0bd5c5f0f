"""Concentration thresholds and small estimation helpers for Monte-Carlo checks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as _st

from .errors import EmptyInput, InsufficientPoints, InvalidDelta, NonPositiveValue


@dataclass(frozen=True)
class MartingaleCheck:
    b: float
    T: int
    delta: float

    @property
    def threshold(self) -> float:
        return azuma_threshold(self.b, self.T, self.delta)


def azuma_threshold(b: float, T: int, delta: float) -> float:
    """sqrt(2 b^2 T ln(1/delta)): P[sum X_t >= threshold] <= delta when |X_t| <= b."""
    if not 0 < delta < 1:
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta!r}")
    if b < 0:
        raise ValueError("b must be >= 0")
    if T < 1:
        raise ValueError("T must be >= 1")
    return math.sqrt(2 * b * b * T * math.log(1 / delta))


def empirical_tail(trial_sums: Sequence[float], threshold: float) -> float:
    s = np.asarray(trial_sums, dtype=float)
    if s.size == 0:
        raise EmptyInput("no trial sums")
    return float(np.mean(s >= threshold))


def rademacher_walk_sums(n_walks: int, T: int, rng: np.random.Generator, b: float = 1.0) -> np.ndarray:
    """Endpoints of n_walks sums of T independent +-b signs (in blocks to bound memory)."""
    out = np.empty(n_walks)
    block = max(1, 2_000_000 // T)
    for s in range(0, n_walks, block):
        e = min(n_walks, s + block)
        steps = rng.integers(0, 2, size=(e - s, T), dtype=np.int8)
        out[s:e] = b * (2.0 * steps.sum(axis=1, dtype=np.int64) - T)
    return out


def fit_loglog_slope(points) -> float:
    """Least-squares slope of log(err) against log(n)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise InsufficientPoints("need at least two points")
    if np.any(pts <= 0):
        raise NonPositiveValue("all coordinates must be positive")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.unique(lx).size < 2:
        raise InsufficientPoints("need at least two distinct n values")
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)


def mean_ci(samples: Sequence[float], confidence: float = 0.95) -> tuple[float, float]:
    """Sample mean and normal-approximation halfwidth z * s / sqrt(n) (s with ddof=1)."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise InsufficientPoints("need at least two samples")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    z = _st.norm.ppf(0.5 + confidence / 2)
    return float(x.mean()), float(z * x.std(ddof=1) / math.sqrt(x.size))


def stderr(samples: Sequence[float]) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise InsufficientPoints("need at least two samples")
    return float(x.std(ddof=1) / math.sqrt(x.size))


@dataclass(frozen=True)
class FailureCheck:
    failures: int
    trials: int
    fraction: float
    critical: int
    ok: bool


def failure_rate_check(failures: int, trials: int, delta: float, level: float = 0.95) -> FailureCheck:
    """One-sided binomial test of H0: failure probability <= delta.

    Passes when the failure count does not exceed the ``level`` quantile of
    Binomial(trials, delta).
    """
    if trials < 1:
        raise EmptyInput("no trials")
    critical = int(_st.binom.ppf(level, trials, delta))
    return FailureCheck(failures, trials, failures / trials, critical, failures <= critical)
