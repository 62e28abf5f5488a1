"""Kernel density estimates, quantile variances and Wald intervals."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .asymptotics import CovarianceKernel, build_kernel
from .errors import DegenerateDistribution, DensityZero, SameTarget
from .estimation import FittedCdf, check_level, em_quantile
from .model import DrmFit

__all__ = [
    "KdeSpec",
    "IntervalEstimate",
    "silverman_rule",
    "silverman_bandwidth",
    "kde_density",
    "quantile_variance",
    "quantile_covariance",
    "normal_quantile",
    "ElInference",
    "ci_quantile",
    "ci_quantile_diff",
]


def _gauss(u):
    return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class KdeSpec:
    """Kernel (unit mass, symmetric) and bandwidth; ``"auto"`` uses the rule of thumb.

    ``n_rule`` fixes the n in the rule of thumb: ``"pooled"`` uses the number
    of observations behind the fitted CDF, an int overrides it.
    """

    kernel: Callable[[np.ndarray], np.ndarray] = _gauss
    bandwidth: float | str = "auto"
    n_rule: str | int = "pooled"

    def resolve(self, cdf: FittedCdf, r: int) -> float:
        if self.bandwidth == "auto":
            n = None if self.n_rule == "pooled" else int(self.n_rule)
            return silverman_bandwidth(cdf, r, n=n)
        b = float(self.bandwidth)
        if not b > 0:
            raise ValueError(f"bandwidth must be positive, got {b!r}")
        return b


@dataclass(frozen=True)
class IntervalEstimate:
    """Wald interval for a quantile ((r, alpha),) or a difference of two."""

    target: tuple
    point: float
    variance: float
    lo: float
    hi: float
    conf_level: float
    method: str = "EL"

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def normal_quantile(conf: float) -> float:
    """z such that P(|Z| <= z) = conf."""
    conf = check_level(conf)
    return float(norm.ppf(0.5 + 0.5 * conf))


def _wald(target, point, var, conf, method) -> IntervalEstimate:
    half = normal_quantile(conf) * np.sqrt(max(var, 0.0))
    return IntervalEstimate(target, float(point), float(var), float(point - half),
                            float(point + half), float(conf), method)


# --------------------------------------------------------------------------
# bandwidth and density
# --------------------------------------------------------------------------

def silverman_rule(sigma: float, iqr: float, n: int) -> float:
    """b = 1.06 n^(-1/5) min(sigma, iqr / 1.34); a zero IQR falls back to sigma."""
    spread = sigma if iqr <= 0 else min(sigma, iqr / 1.34)
    return 1.06 * float(n) ** -0.2 * spread


def silverman_bandwidth(cdf: FittedCdf, r: int, n: int | None = None) -> float:
    """Rule-of-thumb bandwidth for the discrete distribution in row r of ``cdf``.

    The standard deviation and interquartile range are those of the fitted
    distribution itself. ``n`` defaults to ``cdf.n``.
    """
    _, sd = cdf.mean_sd(r)
    if not sd > 0:
        raise DegenerateDistribution(f"fitted distribution {r} has zero spread")
    iqr = cdf.quantile(r, 0.75) - cdf.quantile(r, 0.25)
    return silverman_rule(sd, iqr, cdf.n if n is None else n)


def kde_density(cdf: FittedCdf, r: int, spec: KdeSpec, x):
    """sum over the support of K_b(x - y) * mass_r(y)."""
    b = spec.resolve(cdf, r)
    x = np.asarray(x, dtype=float)
    u = (x[..., None] - cdf.support) / b
    out = spec.kernel(u) @ cdf.mass[r] / b
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# variances
# --------------------------------------------------------------------------

def quantile_covariance(kernel: CovarianceKernel, targets: Sequence[tuple],
                        n: int | None = None) -> np.ndarray:
    """Plug-in covariance matrix of EL quantile estimators (not sqrt(n)-scaled).

    ``targets`` holds (r, alpha, xi_hat, g_hat) tuples. The G values at the
    estimated quantiles are replaced by their levels.
    """
    n = kernel.n if n is None else n
    if n is None:
        raise ValueError("sample size needed for a plug-in variance")
    rho = kernel.rho
    k = len(targets)
    g = np.array([t[3] for t in targets], dtype=float)
    for gi in g:
        if not gi > 0:
            raise DensityZero(f"density estimate {gi!r} is not positive")
    Bs = np.array([kernel.B(t[0], t[2]) for t in targets]).reshape(k, -1)
    quad = Bs @ kernel.solve(Bs.T)
    om = np.empty((k, k))
    for i, (r, ar, xr, _) in enumerate(targets):
        for j in range(i, k):
            s, as_, xs, _ = targets[j]
            sig = 0.0
            if r == s:
                a_min = ar if xr <= xs else as_
                sig = (a_min - ar * as_) / rho[r]
            a = kernel.a(r, s, min(xr, xs))
            om[i, j] = om[j, i] = sig - (a - quad[i, j]) / (rho[r] * rho[s])
    return om / (n * np.outer(g, g))


def quantile_variance(kernel: CovarianceKernel, cdf: FittedCdf | None, r: int,
                      alpha: float, xi_hat: float, g_hat: float,
                      n: int | None = None) -> float:
    """omega_rr(xi, xi) / (n g^2) with the plug-in omega."""
    if n is None:
        n = kernel.n if kernel.n is not None else (cdf.n if cdf is not None else None)
    return float(quantile_covariance(kernel, [(r, alpha, xi_hat, g_hat)], n)[0, 0])


# --------------------------------------------------------------------------
# intervals
# --------------------------------------------------------------------------

@dataclass(eq=False)
class ElInference:
    """Quantile point and interval estimates from one MELE fit.

    ``em_density`` selects the density used for the empirical-quantile
    baseline: ``"own"`` is a KDE on the sample alone with its own rule-of-thumb
    bandwidth, ``"pooled"`` reuses the EL density estimate.
    """

    fit: DrmFit
    kde: KdeSpec = field(default_factory=KdeSpec)
    em_density: str = "own"
    _bandwidths: dict = field(default_factory=dict, init=False, repr=False)

    @cached_property
    def cdf(self) -> FittedCdf:
        return self.fit.cdf

    @cached_property
    def kernel(self) -> CovarianceKernel:
        return build_kernel(self.fit)

    def bandwidth(self, r: int) -> float:
        if r not in self._bandwidths:
            self._bandwidths[r] = self.kde.resolve(self.cdf, r)
        return self._bandwidths[r]

    def quantile(self, r: int, alpha: float) -> float:
        return self.cdf.quantile(r, alpha)

    def density(self, r: int, x) -> float:
        spec = KdeSpec(self.kde.kernel, self.bandwidth(r))
        return kde_density(self.cdf, r, spec, x)

    def variance(self, r: int, alpha: float) -> float:
        xi = self.quantile(r, alpha)
        return quantile_variance(self.kernel, self.cdf, r, alpha, xi, self.density(r, xi))

    def ci(self, r: int, alpha: float, conf: float = 0.95) -> IntervalEstimate:
        xi = self.quantile(r, alpha)
        var = quantile_variance(self.kernel, self.cdf, r, alpha, xi, self.density(r, xi))
        return _wald(((r, alpha),), xi, var, conf, "EL")

    def ci_diff(self, first: tuple, second: tuple, conf: float = 0.95) -> IntervalEstimate:
        """Interval for xi_r(alpha_r) - xi_s(alpha_s); pairs are (r, alpha)."""
        (r, ar), (s, as_) = first, second
        if r == s and ar == as_:
            raise SameTarget("difference of a quantile with itself")
        xr, xs = self.quantile(r, ar), self.quantile(s, as_)
        cov = quantile_covariance(
            self.kernel,
            [(r, ar, xr, self.density(r, xr)), (s, as_, xs, self.density(s, xs))])
        var = cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1]
        return _wald((first, second), xr - xs, var, conf, "EL")

    # ---- empirical-quantile baseline ------------------------------------

    def em_quantile(self, r: int, alpha: float) -> float:
        return em_quantile(self.fit.data.samples[r], alpha, r).value

    def em_density_at(self, r: int, x) -> float:
        if self.em_density == "pooled":
            return self.density(r, x)
        own = FittedCdf.empirical(self.fit.data.samples[r])
        return kde_density(own, 0, KdeSpec(self.kde.kernel, "auto"), x)

    def em_variance(self, r: int, alpha: float, xi: float | None = None) -> float:
        xi = self.em_quantile(r, alpha) if xi is None else xi
        g = self.em_density_at(r, xi)
        if not g > 0:
            raise DensityZero(f"density estimate {g!r} is not positive")
        return alpha * (1 - alpha) / (self.fit.data.n_k[r] * g * g)

    def em_ci(self, r: int, alpha: float, conf: float = 0.95) -> IntervalEstimate:
        xi = self.em_quantile(r, alpha)
        return _wald(((r, alpha),), xi, self.em_variance(r, alpha, xi), conf, "EM")

    def em_ci_diff(self, first: tuple, second: tuple, conf: float = 0.95) -> IntervalEstimate:
        (r, ar), (s, as_) = first, second
        if r == s and ar == as_:
            raise SameTarget("difference of a quantile with itself")
        xr, xs = self.em_quantile(r, ar), self.em_quantile(s, as_)
        var = self.em_variance(r, ar, xr) + self.em_variance(s, as_, xs)
        if r == s:
            gr, gs = self.em_density_at(r, xr), self.em_density_at(s, xs)
            a_min = ar if xr <= xs else as_
            var -= 2.0 * (a_min - ar * as_) / (self.fit.data.n_k[r] * gr * gs)
        return _wald((first, second), xr - xs, var, conf, "EM")


def ci_quantile(fit: DrmFit, r: int, alpha: float, conf: float = 0.95,
                kde: KdeSpec | None = None) -> IntervalEstimate:
    return ElInference(fit, kde or KdeSpec()).ci(r, alpha, conf)


def ci_quantile_diff(fit: DrmFit, first: tuple, second: tuple, conf: float = 0.95,
                     kde: KdeSpec | None = None) -> IntervalEstimate:
    return ElInference(fit, kde or KdeSpec()).ci_diff(first, second, conf)
