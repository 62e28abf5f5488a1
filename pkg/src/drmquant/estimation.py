"""Fitted distribution functions and quantile estimators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LevelError
from .model import DrmFit, MultiSample

__all__ = [
    "FittedCdf",
    "QuantileEstimate",
    "check_level",
    "el_cdf",
    "el_quantile",
    "em_cdf",
    "em_quantile",
]

# slack for cumulative sums that should hit a level exactly (e.g. k/n)
_CUM_SLACK = 1e-12


def check_level(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise LevelError(f"level must lie in (0, 1), got {alpha!r}")
    return alpha


@dataclass(frozen=True, eq=False)
class FittedCdf:
    """Discrete distribution functions sharing one sorted support.

    Row r of ``mass`` holds the point masses of population r at the distinct
    values in ``support``; ``cum`` holds the running sums.
    """

    support: np.ndarray
    mass: np.ndarray
    cum: np.ndarray
    n: int

    @classmethod
    def from_fit(cls, fit: DrmFit) -> "FittedCdf":
        data = fit.data
        support, inv = np.unique(data.pooled, return_inverse=True)
        mass = np.empty((data.m + 1, support.size))
        for r in range(data.m + 1):
            mass[r] = np.bincount(inv, weights=fit.hk_values[:, r],
                                  minlength=support.size) / data.n_k[r]
        return cls(support, mass, np.cumsum(mass, axis=1), data.n)

    @classmethod
    def empirical(cls, sample) -> "FittedCdf":
        """Single-row FittedCdf of a sample's own empirical distribution."""
        x = np.asarray(sample, dtype=float).ravel()
        support, counts = np.unique(x, return_counts=True)
        mass = (counts / x.size)[None, :]
        return cls(support, mass, np.cumsum(mass, axis=1), x.size)

    @property
    def populations(self) -> int:
        return self.mass.shape[0]

    def _row(self, r: int) -> int:
        r = int(r)
        if not 0 <= r < self.populations:
            raise IndexError(f"population index {r} out of range 0..{self.populations - 1}")
        return r

    def cdf(self, r: int, x):
        """Right-continuous step function value(s) of population r at x."""
        r = self._row(r)
        idx = np.searchsorted(self.support, x, side="right") - 1
        out = np.where(idx >= 0, self.cum[r, np.maximum(idx, 0)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, r: int, alpha: float) -> float:
        """inf{x : G_r(x) >= alpha} over the support."""
        r = self._row(r)
        alpha = check_level(alpha)
        idx = np.searchsorted(self.cum[r], alpha - _CUM_SLACK, side="left")
        return float(self.support[min(idx, self.support.size - 1)])

    def mean_sd(self, r: int) -> tuple[float, float]:
        r = self._row(r)
        w = self.mass[r] / self.mass[r].sum()
        mu = float(w @ self.support)
        var = float(w @ (self.support - mu) ** 2)
        return mu, float(np.sqrt(max(var, 0.0)))


@dataclass(frozen=True)
class QuantileEstimate:
    population: int
    level: float
    value: float
    method: str  # "EL" or "EM"


def el_cdf(fit: DrmFit, data: MultiSample, r: int, x):
    """EL estimate of G_r(x): n_r^{-1} sum_{k,j} h_r(x_kj; theta_hat) I(x_kj <= x)."""
    _check_same(fit, data)
    return fit.cdf.cdf(r, x)


def el_quantile(fit: DrmFit, data: MultiSample, r: int, alpha: float) -> QuantileEstimate:
    _check_same(fit, data)
    return QuantileEstimate(int(r), float(alpha), fit.cdf.quantile(r, alpha), "EL")


def _check_same(fit: DrmFit, data: MultiSample) -> None:
    if data is not fit.data and not (
            data.n == fit.data.n and np.array_equal(data.pooled, fit.data.pooled)):
        raise ValueError("fit was not produced from this data")


def em_cdf(sample, x, shift: bool = True):
    """Single-sample empirical CDF, lowered by 1/(2n) when ``shift`` is set."""
    s = np.sort(np.asarray(sample, dtype=float).ravel())
    val = np.searchsorted(s, x, side="right") / s.size
    if shift:
        val = val - 0.5 / s.size
    return float(val) if np.ndim(val) == 0 else val


def em_quantile(sample, alpha: float, population: int = 0) -> QuantileEstimate:
    """Interpolated empirical quantile on the half-step shifted levels.

    Distinct sorted values v_j with cumulative counts N_j are placed at levels
    N_j/n - 1/(2n) and joined linearly; levels outside the first and last of
    these return the extreme order statistics.
    """
    alpha = check_level(alpha)
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    values, counts = np.unique(x, return_counts=True)
    levels = (np.cumsum(counts) - 0.5) / x.size
    return QuantileEstimate(int(population), alpha,
                            float(np.interp(alpha, levels, values)), "EM")
