"""Density ratio model: data containers, dual profile log-EL and the MELE solver.

Populations 0..m are linked through

    log g_k(x) / g_0(x) = theta_k' q(x),    theta_0 = 0,

and the parameters are estimated by maximizing the dual profile empirical
log-likelihood

    l(theta) = -sum_{k,j} log sum_r rho_r exp(theta_r' q(x_kj))
               + sum_{k,j} theta_k' q(x_kj).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .errors import DomainError, NoConvergence, RankDeficient

__all__ = [
    "BasisComponent",
    "BasisSpec",
    "MultiSample",
    "SolverOptions",
    "DrmFit",
    "eval_basis",
    "design_matrix",
    "membership",
    "log_profile_el",
    "score",
    "hessian",
    "info_matrix",
    "check_rank",
    "fit_mele",
]


# --------------------------------------------------------------------------
# basis functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisComponent:
    """A named scalar function of one real, vectorized over arrays.

    ``domain`` returns a boolean mask of the points where the function is
    defined; ``None`` means the whole real line.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    domain: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.domain is not None:
            ok = self.domain(x)
            if not np.all(ok):
                bad = np.atleast_1d(x)[~np.atleast_1d(ok)][0]
                raise DomainError(f"basis component {self.name!r} undefined at x={bad!r}")
        with np.errstate(all="ignore"):
            return np.asarray(self.func(x), dtype=float)


def _positive(x):
    return x > 0


def _nonnegative(x):
    return x >= 0


_BUILTIN = {
    "1": BasisComponent("1", lambda x: np.ones_like(x)),
    "x": BasisComponent("x", lambda x: x),
    "x2": BasisComponent("x2", lambda x: x * x),
    "log": BasisComponent("log", np.log, _positive),
    "log1p_abs": BasisComponent("log1p_abs", lambda x: np.log1p(np.abs(x))),
    "sqrt_abs": BasisComponent("sqrt_abs", lambda x: np.sqrt(np.abs(x))),
    "x1.5": BasisComponent("x1.5", lambda x: x ** 1.5, _nonnegative),
}

_ALIASES = {
    "const": "1",
    "x^2": "x2",
    "x**2": "x2",
    "logx": "log",
    "log(x)": "log",
    "log(1+|x|)": "log1p_abs",
    "sqrt(|x|)": "sqrt_abs",
    "x^1.5": "x1.5",
    "x**1.5": "x1.5",
}


@dataclass(frozen=True)
class BasisSpec:
    """The vector function q(x); the first component must be the constant 1."""

    components: tuple[BasisComponent, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("basis needs at least one component")
        object.__setattr__(self, "components", tuple(self.components))
        probe = np.array([0.5, 1.0, 2.0])
        if not np.array_equal(self.components[0](probe), np.ones(3)):
            raise ValueError("first basis component must be the constant 1")

    @property
    def d(self) -> int:
        return len(self.components)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.components)

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "BasisSpec":
        comps = []
        for raw in names:
            key = raw.strip()
            key = _ALIASES.get(key, key)
            if key not in _BUILTIN:
                raise ValueError(
                    f"unknown basis component {raw!r}; choose from {sorted(_BUILTIN)}")
            comps.append(_BUILTIN[key])
        return cls(tuple(comps))

    @classmethod
    def parse(cls, text: str) -> "BasisSpec":
        """Build from a comma separated list such as ``"1,x,log1p_abs,sqrt_abs"``."""
        return cls.from_names([t for t in text.split(",") if t.strip()])

    def __str__(self):
        return ",".join(self.names)


BASIS_COMPONENTS = tuple(_BUILTIN)


def eval_basis(spec: BasisSpec, x: float) -> np.ndarray:
    """Return q(x) as a length-d vector."""
    return design_matrix(spec, np.array([x], dtype=float))[0]


def design_matrix(spec: BasisSpec, x) -> np.ndarray:
    """Stack q(x_i) row by row into an (n, d) matrix."""
    x = np.asarray(x, dtype=float).ravel()
    cols = [np.broadcast_to(c(x), x.shape) for c in spec.components]
    Q = np.column_stack(cols) if cols else np.empty((x.size, 0))
    if not np.all(np.isfinite(Q)):
        raise DomainError("basis evaluates to a non-finite value on the data")
    return Q


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

class MultiSample:
    """The m+1 independent samples, plus a pooled view.

    Pooled arrays list sample 0 first, then sample 1, and so on; ``labels``
    holds the sample index of every pooled observation.
    """

    def __init__(self, samples: Sequence[Sequence[float]]):
        arrs = tuple(np.asarray(s, dtype=float).ravel() for s in samples)
        if len(arrs) < 2:
            raise ValueError("need at least two samples (m >= 1)")
        for k, a in enumerate(arrs):
            if a.size == 0:
                raise ValueError(f"sample {k} is empty")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"sample {k} has non-finite values")
        self.samples = arrs

    @property
    def m(self) -> int:
        return len(self.samples) - 1

    @cached_property
    def n_k(self) -> np.ndarray:
        return np.array([a.size for a in self.samples])

    @property
    def n(self) -> int:
        return int(self.n_k.sum())

    @cached_property
    def rho(self) -> np.ndarray:
        return self.n_k / self.n

    @cached_property
    def pooled(self) -> np.ndarray:
        return np.concatenate(self.samples)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.m + 1), self.n_k)

    def __len__(self):
        return len(self.samples)

    def __repr__(self):
        return f"MultiSample(m={self.m}, n_k={self.n_k.tolist()})"


def membership(data: MultiSample) -> np.ndarray:
    """(n, m+1) indicator matrix of sample membership."""
    Y = np.zeros((data.n, data.m + 1))
    Y[np.arange(data.n), data.labels] = 1.0
    return Y


# --------------------------------------------------------------------------
# likelihood and derivatives
# --------------------------------------------------------------------------

def _theta_full(theta, m: int, d: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(m, d)
    return np.vstack([np.zeros((1, d)), theta])


def _weights(theta, Q: np.ndarray, log_rho: np.ndarray):
    """Return (eta, log h, h_k) for the pooled design matrix Q."""
    m = log_rho.size - 1
    eta = Q @ _theta_full(theta, m, Q.shape[1]).T
    z = eta + log_rho
    log_h = logsumexp(z, axis=1)
    hk = np.exp(z - log_h[:, None])
    return eta, log_h, hk


def _loglik(eta, log_h, labels) -> float:
    return float(-log_h.sum() + eta[np.arange(labels.size), labels].sum())


def _score(hk, Q, Y) -> np.ndarray:
    return (Q.T @ (Y - hk))[:, 1:].T.ravel()


def info_matrix(hk: np.ndarray, Q: np.ndarray, w=None) -> np.ndarray:
    """sum_i w_i H[-1,-1](x_i) kron q(x_i) q(x_i)'; blocks r, s = 1..m.

    H(x) = diag(h(x)) - h(x) h(x)'. Unit weights give the negated Hessian of l.
    """
    m = hk.shape[1] - 1
    d = Q.shape[1]
    w = np.ones(Q.shape[0]) if w is None else np.asarray(w, dtype=float)
    out = np.empty((m * d, m * d))
    for r in range(1, m + 1):
        for s in range(r, m + 1):
            c = -hk[:, r] * hk[:, s]
            if r == s:
                c = c + hk[:, r]
            block = (Q.T * (w * c)) @ Q
            if r == s:
                block = 0.5 * (block + block.T)  # exact symmetry despite BLAS ordering
            out[(r - 1) * d:r * d, (s - 1) * d:s * d] = block
            out[(s - 1) * d:s * d, (r - 1) * d:r * d] = block.T
    return out


def _hessian(hk, Q) -> np.ndarray:
    return -info_matrix(hk, Q)


def log_profile_el(theta, data: MultiSample, spec: BasisSpec) -> float:
    """Dual profile log-EL at ``theta`` (an m x d array, or its flattening)."""
    Q = design_matrix(spec, data.pooled)
    eta, log_h, _ = _weights(theta, Q, np.log(data.rho))
    return _loglik(eta, log_h, data.labels)


def score(theta, data: MultiSample, spec: BasisSpec) -> np.ndarray:
    """Gradient of :func:`log_profile_el`, segments r = 1..m each of length d."""
    Q = design_matrix(spec, data.pooled)
    _, _, hk = _weights(theta, Q, np.log(data.rho))
    return _score(hk, Q, membership(data))


def hessian(theta, data: MultiSample, spec: BasisSpec) -> np.ndarray:
    """Exact (md, md) Hessian of :func:`log_profile_el`; symmetric, NSD."""
    Q = design_matrix(spec, data.pooled)
    _, _, hk = _weights(theta, Q, np.log(data.rho))
    return _hessian(hk, Q)


# --------------------------------------------------------------------------
# MELE
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverOptions:
    grad_tol: float = 1e-8
    max_iter: int = 200
    armijo: float = 1e-4
    min_step: float = 2.0 ** -40
    rank_tol: float = 1e-10


@dataclass(frozen=True, eq=False)
class DrmFit:
    """MELE together with the per-observation quantities it induces.

    All per-observation arrays follow the pooled order of ``data``.
    """

    theta_hat: np.ndarray
    h_values: np.ndarray
    hk_values: np.ndarray
    p_hat: np.ndarray
    loglik: float
    iterations: int
    grad_norm: float
    data: MultiSample
    basis: BasisSpec
    loglik_path: tuple[float, ...] = field(default=(), repr=False)

    @property
    def m(self) -> int:
        return self.data.m

    @property
    def d(self) -> int:
        return self.basis.d

    @cached_property
    def design(self) -> np.ndarray:
        return design_matrix(self.basis, self.data.pooled)

    @cached_property
    def cdf(self):
        from .estimation import FittedCdf
        return FittedCdf.from_fit(self)


def check_rank(Q: np.ndarray, tol: float = 1e-10) -> None:
    """Raise RankDeficient unless Q has full column rank."""
    if Q.shape[0] < Q.shape[1]:
        raise RankDeficient(f"{Q.shape[0]} observations for {Q.shape[1]} basis columns")
    R, _ = scipy.linalg.qr(Q, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    scale = np.linalg.norm(Q, axis=0).max()
    if diag.size and diag.min() <= tol * scale:
        raise RankDeficient(
            "basis columns are linearly dependent on the pooled data "
            f"(|R_dd| = {diag.min():.3g}, column scale {scale:.3g})")


def _newton_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    A = -H
    jitter = 1e-10 * max(np.trace(A) / A.shape[0], np.finfo(float).tiny)
    for _ in range(8):
        try:
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), g)
        except np.linalg.LinAlgError:
            A = A + jitter * np.eye(A.shape[0])
            jitter *= 100.0
    raise NoConvergence("Newton system is singular")


def fit_mele(data: MultiSample, spec: BasisSpec,
             opts: SolverOptions | None = None) -> DrmFit:
    """Maximize the dual profile log-EL by damped Newton iteration from theta = 0.

    Raises
    ------
    RankDeficient
        Basis columns are collinear on the pooled data.
    NoConvergence
        The score did not reach ``opts.grad_tol`` within ``opts.max_iter``
        iterations (for example when the samples are separated and the
        supremum is not attained).
    """
    opts = opts or SolverOptions()
    m, d = data.m, spec.d
    Q = design_matrix(spec, data.pooled)
    check_rank(Q, opts.rank_tol)
    Y = membership(data)
    labels = data.labels
    log_rho = np.log(data.rho)

    theta = np.zeros(m * d)
    eta, log_h, hk = _weights(theta, Q, log_rho)
    ll = _loglik(eta, log_h, labels)
    g = _score(hk, Q, Y)
    path = [ll]
    it = 0
    while np.max(np.abs(g)) > opts.grad_tol:
        if it >= opts.max_iter:
            raise NoConvergence(
                f"no convergence after {it} iterations (|score|_inf = {np.max(np.abs(g)):.3g})")
        it += 1
        step = _newton_direction(_hessian(hk, Q), g)
        slope = float(g @ step)
        # predicted gain below the rounding level of l: Armijo is meaningless
        noise = 1e-12 * (1.0 + np.abs(log_h).sum())
        t = 1.0
        while True:
            cand = theta + t * step
            eta_c, log_h_c, hk_c = _weights(cand, Q, log_rho)
            ll_c = _loglik(eta_c, log_h_c, labels)
            if ll_c >= ll + opts.armijo * t * slope or (t == 1.0 and slope < noise):
                break
            t *= 0.5
            if t < opts.min_step:
                raise NoConvergence(
                    f"line search failed at iteration {it} "
                    f"(|score|_inf = {np.max(np.abs(g)):.3g})")
        theta, ll, hk = cand, ll_c, hk_c
        log_h = log_h_c
        g = _score(hk, Q, Y)
        path.append(ll)

    with np.errstate(over="ignore"):
        h = np.exp(log_h)
    return DrmFit(
        theta_hat=theta.reshape(m, d),
        h_values=h,
        hk_values=hk,
        p_hat=np.exp(-np.log(data.n) - log_h),
        loglik=ll,
        iterations=it,
        grad_norm=float(np.max(np.abs(g))),
        data=data,
        basis=spec,
        loglik_path=tuple(path),
    )
