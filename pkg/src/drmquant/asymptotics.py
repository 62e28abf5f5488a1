"""Asymptotic covariance machinery for the MELE, the fitted CDFs and EL quantiles.

Every quantity is an integral against the measure dGbar = h(x; theta) dG_0(x).
Two realizations are provided:

* plug-in (:func:`build_kernel`): the fitted masses put exactly 1/n on each
  observation, so integrals become data sums;
* oracle (:func:`build_kernel_oracle`): composite Gauss-Legendre quadrature
  against known densities, used to check population-level identities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .errors import DensityZero, QuadratureError, SingularW
from .model import BasisSpec, DrmFit, design_matrix, info_matrix

__all__ = [
    "WeightedMeasure",
    "QuadratureGrid",
    "KernelParts",
    "CovarianceKernel",
    "Target",
    "build_kernel",
    "build_kernel_oracle",
    "omega",
    "omega_matrix",
    "sigma_el",
    "sigma_em",
    "sigma_el_matrix",
    "sigma_em_matrix",
    "dominance_gap",
]


@dataclass(frozen=True, eq=False)
class WeightedMeasure:
    """Points with nonnegative weights, the h_k values there, and q there."""

    points: np.ndarray
    weights: np.ndarray
    hk: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("negative weights")


class KernelParts(NamedTuple):
    """Integrals over (-inf, x] for all populations at once.

    ``G[r]``, ``A[r, s]`` = a_rs(x), ``C[r, s]`` = c_rs(x), ``B[r]`` = B_r(x).
    """

    G: np.ndarray
    A: np.ndarray
    C: np.ndarray
    B: np.ndarray


def _parts_terms(hk, Q, w, rho):
    """Per-point contributions to (rho*G, C, Hq, T) for the kernel parts."""
    hw = hk * w[:, None]
    return hw, hw.T @ hk, hw.T @ Q, np.einsum("ir,is,ia->rsa", hw, hk[:, 1:], Q)


def _assemble(hsum, C, Hq, T, rho):
    m1 = rho.size
    d = Hq.shape[1]
    G = hsum / rho
    A = np.diag(hsum) - C
    B = -T.copy()
    for r in range(1, m1):
        B[r, r - 1] += Hq[r]
    return KernelParts(G, A, C, B.reshape(m1, (m1 - 1) * d))


class CovarianceKernel:
    """W, S and the cumulative functionals B_r(x), a_rs(x), c_rs(x), G_r(x).

    Instances are built by :func:`build_kernel` or :func:`build_kernel_oracle`
    and are immutable after construction.
    """

    def __init__(self, rho: np.ndarray, d: int, W: np.ndarray,
                 parts_at: Callable[[float], KernelParts], n: int | None = None,
                 kind: str = "plug-in"):
        self.rho = np.asarray(rho, dtype=float)
        self.m = self.rho.size - 1
        self.d = d
        self.n = n
        self.kind = kind
        self.W = W
        try:
            self._chol = scipy.linalg.cho_factor(W)
        except np.linalg.LinAlgError as exc:
            raise SingularW("W is not numerically positive definite") from exc
        self.W_inv = scipy.linalg.cho_solve(self._chol, np.eye(W.shape[0]))
        self.S = np.kron(np.diag(1.0 / self.rho[1:]) + 1.0 / self.rho[0],
                         np.diag(np.eye(d)[0]))
        self._parts_at = parts_at
        self._cache: dict[float, KernelParts] = {}

    def parts(self, x: float) -> KernelParts:
        key = float(x)
        if key not in self._cache:
            self._cache[key] = self._parts_at(key)
        return self._cache[key]

    def _idx(self, r):
        r = int(r)
        if not 0 <= r <= self.m:
            raise IndexError(f"population index {r} out of range 0..{self.m}")
        return r

    def G(self, r: int, x: float) -> float:
        return float(self.parts(x).G[self._idx(r)])

    def a(self, r: int, s: int, x: float) -> float:
        return float(self.parts(x).A[self._idx(r), self._idx(s)])

    def c(self, r: int, s: int, x: float) -> float:
        return float(self.parts(x).C[self._idx(r), self._idx(s)])

    def B(self, r: int, x: float) -> np.ndarray:
        return self.parts(x).B[self._idx(r)].copy()

    def B_inf(self, r: int) -> np.ndarray:
        return self.B(r, np.inf)

    def solve(self, v: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._chol, v)


# --------------------------------------------------------------------------
# plug-in kernel
# --------------------------------------------------------------------------

def build_kernel(fit: DrmFit, data=None, spec: BasisSpec | None = None) -> CovarianceKernel:
    """Plug-in kernel: every integral is (1/n) times a sum over observations."""
    data = fit.data if data is None else data
    spec = fit.basis if spec is None else spec
    Q = design_matrix(spec, data.pooled)
    n = data.n
    rho = data.rho
    order = np.argsort(data.pooled, kind="stable")
    xs = data.pooled[order]
    hk = fit.hk_values[order]
    Qs = Q[order]
    w = np.full(n, 1.0 / n)

    hw = hk * w[:, None]
    cum_h = np.cumsum(hw, axis=0)
    cum_C = np.cumsum(hw[:, :, None] * hk[:, None, :], axis=0)
    cum_Hq = np.cumsum(hw[:, :, None] * Qs[:, None, :], axis=0)
    cum_T = np.cumsum(hw[:, :, None, None] * hk[:, None, 1:, None] * Qs[:, None, None, :], axis=0)
    m1, d = rho.size, Q.shape[1]

    def parts_at(x: float) -> KernelParts:
        k = int(np.searchsorted(xs, x, side="right"))
        if k == 0:
            return _assemble(np.zeros(m1), np.zeros((m1, m1)), np.zeros((m1, d)),
                             np.zeros((m1, m1 - 1, d)), rho)
        return _assemble(cum_h[k - 1], cum_C[k - 1], cum_Hq[k - 1], cum_T[k - 1], rho)

    W = info_matrix(fit.hk_values, Q, np.full(n, 1.0 / n))
    return CovarianceKernel(rho, d, W, parts_at, n=n, kind="plug-in")


# --------------------------------------------------------------------------
# quadrature kernel
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureGrid:
    """Composite Gauss-Legendre rule on [lower, upper]; panels * order nodes."""

    lower: float
    upper: float
    panels: int = 128
    order: int = 16

    def nodes(self, hi: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        hi = self.upper if hi is None else min(hi, self.upper)
        if hi <= self.lower:
            return np.empty(0), np.empty(0)
        t, wt = np.polynomial.legendre.leggauss(self.order)
        edges = np.linspace(self.lower, hi, self.panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
        w = (half[:, None] * wt[None, :]).ravel()
        return x, w


def build_kernel_oracle(densities: Sequence[Callable], rho, spec: BasisSpec,
                        theta_star, grid: QuadratureGrid,
                        density_tol: float = 1e-6) -> CovarianceKernel:
    """Population-level kernel by quadrature against known densities.

    With ``theta_star`` given, h_k(x) = rho_k exp(theta_k' q(x)) / h(x) and
    dGbar = h(x; theta_star) g_0(x) dx. With ``theta_star=None`` the h_k are
    taken directly as rho_k g_k / sum_j rho_j g_j and dGbar = sum_k rho_k g_k dx,
    which coincides with the former whenever the model holds.
    """
    rho = np.asarray(rho, dtype=float)
    if len(densities) != rho.size:
        raise ValueError("need one density per population")
    x_all, w_all = grid.nodes()
    for k, g in enumerate(densities):
        mass = float(np.asarray(g(x_all), dtype=float) @ w_all)
        if abs(mass - 1.0) > density_tol:
            raise QuadratureError(f"density {k} integrates to {mass:.10f} on the grid")
    log_rho = np.log(rho)
    d = spec.d

    def measure(hi=None) -> WeightedMeasure:
        x, w = grid.nodes(hi)
        Q = design_matrix(spec, x)
        if theta_star is None:
            dens = np.column_stack([np.asarray(g(x), dtype=float) for g in densities])
            mix = dens @ rho
            with np.errstate(invalid="ignore", divide="ignore"):
                hk = np.where(mix[:, None] > 0, dens * rho / mix[:, None], rho)
            wt = w * mix
        else:
            th = np.vstack([np.zeros((1, d)), np.asarray(theta_star, float).reshape(-1, d)])
            z = Q @ th.T + log_rho
            lh = logsumexp(z, axis=1)
            hk = np.exp(z - lh[:, None])
            wt = w * np.exp(lh) * np.asarray(densities[0](x), dtype=float)
        return WeightedMeasure(x, wt, hk, Q)

    full = measure()

    def parts_at(x: float) -> KernelParts:
        mu = full if x >= grid.upper else measure(x)
        hw, C, Hq, T = _parts_terms(mu.hk, mu.Q, mu.weights, rho)
        return _assemble(hw.sum(axis=0), C, Hq, T, rho)

    W = info_matrix(full.hk, full.Q, full.weights)
    return CovarianceKernel(rho, d, W, parts_at, n=None, kind="oracle")


# --------------------------------------------------------------------------
# covariance formulas
# --------------------------------------------------------------------------

class Target(NamedTuple):
    """A point (population r, location x) with G_r(x) and the density g_r(x)."""

    r: int
    x: float
    G: float
    g: float = 1.0


def _sigma(rho, r, s, x, y, Gx, Gy) -> float:
    if r != s:
        return 0.0
    G_min = Gx if x <= y else Gy
    return (G_min - Gx * Gy) / rho[r]


def omega(kernel: CovarianceKernel, r: int, s: int, x: float, y: float,
          G_r_at_x: float, G_s_at_y: float) -> float:
    """omega_rs(x, y) = sigma_rs(x, y) - {a_rs(x^y) - B_r(x)' W^-1 B_s(y)} / (rho_r rho_s)."""
    rho = kernel.rho
    r, s = kernel._idx(r), kernel._idx(s)
    quad = kernel.B(r, x) @ kernel.solve(kernel.B(s, y))
    a = kernel.a(r, s, min(x, y))
    return _sigma(rho, r, s, x, y, G_r_at_x, G_s_at_y) - (a - quad) / (rho[r] * rho[s])


def omega_matrix(kernel: CovarianceKernel, targets: Sequence[Target]) -> np.ndarray:
    """Matrix of omega over any number of targets (G values taken from targets)."""
    k = len(targets)
    rho = kernel.rho
    Bs = np.array([kernel.B(t.r, t.x) for t in targets]).reshape(k, -1)
    WB = kernel.solve(Bs.T)
    quad = Bs @ WB
    out = np.empty((k, k))
    for i, ti in enumerate(targets):
        for j in range(i, k):
            tj = targets[j]
            a = kernel.a(ti.r, tj.r, min(ti.x, tj.x))
            v = _sigma(rho, ti.r, tj.r, ti.x, tj.x, ti.G, tj.G) \
                - (a - quad[i, j]) / (rho[ti.r] * rho[tj.r])
            out[i, j] = out[j, i] = v
    return out


def _check_density(*gs):
    for g in gs:
        if not g > 0:
            raise DensityZero(f"density value {g!r} is not positive")


def sigma_el_matrix(kernel: CovarianceKernel, targets: Sequence[Target]) -> np.ndarray:
    """Asymptotic covariance of sqrt(n)(xi_hat - xi) over the targets."""
    g = np.array([t.g for t in targets], dtype=float)
    _check_density(*g)
    return omega_matrix(kernel, targets) / np.outer(g, g)


def sigma_em_matrix(rho, targets: Sequence[Target]) -> np.ndarray:
    """Same for single-sample empirical quantiles (independent across samples)."""
    rho = np.asarray(rho, dtype=float)
    g = np.array([t.g for t in targets], dtype=float)
    _check_density(*g)
    k = len(targets)
    out = np.empty((k, k))
    for i, ti in enumerate(targets):
        for j in range(i, k):
            tj = targets[j]
            out[i, j] = out[j, i] = _sigma(rho, ti.r, tj.r, ti.x, tj.x, ti.G, tj.G)
    return out / np.outer(g, g)


def sigma_el(kernel: CovarianceKernel, r: int, s: int, xi_r: float, xi_s: float,
             g_r: float, g_s: float, G_r: float, G_s: float) -> np.ndarray:
    """2x2 asymptotic covariance of the EL quantile pair (xi_r, xi_s)."""
    return sigma_el_matrix(kernel, [Target(r, xi_r, G_r, g_r), Target(s, xi_s, G_s, g_s)])


def sigma_em(rho_r: float, rho_s: float, alpha_r: float, alpha_s: float,
             g_r: float, g_s: float, r: int, s: int,
             xi_r: float | None = None, xi_s: float | None = None) -> np.ndarray:
    """2x2 asymptotic covariance of the EM quantile pair.

    For r == s the cross term needs G_r(xi_r ^ xi_s); with quantile levels this
    is min(alpha_r, alpha_s), so the locations are optional.
    """
    _check_density(g_r, g_s)
    if r == s and abs(rho_r - rho_s) > 0:
        raise ValueError("same population must carry the same fraction")
    diag = np.array([alpha_r * (1 - alpha_r) / (rho_r * g_r ** 2),
                     alpha_s * (1 - alpha_s) / (rho_s * g_s ** 2)])
    off = 0.0
    if r == s:
        if xi_r is not None and xi_s is not None:
            a_min = alpha_r if xi_r <= xi_s else alpha_s
        else:
            a_min = min(alpha_r, alpha_s)
        off = (a_min - alpha_r * alpha_s) / (rho_r * g_r * g_s)
    return np.array([[diag[0], off], [off, diag[1]]])


def dominance_gap(kernel: CovarianceKernel, targets: Sequence[Target]) -> float:
    """Smallest eigenvalue of Sigma_EM - Sigma_EL over the targets."""
    diff = sigma_em_matrix(kernel.rho, targets) - sigma_el_matrix(kernel, targets)
    return float(np.linalg.eigvalsh(0.5 * (diff + diff.T)).min())
