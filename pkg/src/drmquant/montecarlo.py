"""Replicated simulation comparing EL and empirical (EM) quantile inference.

Each replicate draws one sample per population, fits the MELE and records
CDF values at the true quantiles, EL and EM quantiles, their variance
estimates and 95% (configurable) Wald intervals, including intervals for the
differences between population 0 and every other population. Replicates use
independent counter-based streams keyed by (seed, replicate index), so results
do not depend on how replicates are scheduled across workers.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import lgamma, log
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .asymptotics import QuadratureGrid, Target, build_kernel_oracle, omega, sigma_el_matrix
from .errors import DrmError, LevelError, ParamError
from .estimation import em_cdf
from .inference import ElInference
from .model import BasisSpec, MultiSample, SolverOptions, fit_mele

log_ = logging.getLogger(__name__)

__all__ = [
    "PopulationSpec",
    "ExperimentConfig",
    "MetricsTable",
    "DESIGNS",
    "sample",
    "true_quantile",
    "drm_theta_star",
    "run_experiment",
    "misspecification_study",
    "load_design",
]

FAMILIES = ("gamma", "normal", "weibull")


@dataclass(frozen=True)
class PopulationSpec:
    """Gamma(shape, scale), Normal(mean, variance) or Weibull(shape, scale)."""

    family: str
    a: float
    b: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParamError(f"unknown family {self.family!r}")
        if self.family == "normal":
            if not self.b > 0:
                raise ParamError("normal variance must be positive")
        elif not (self.a > 0 and self.b > 0):
            raise ParamError(f"{self.family} parameters must be positive")

    @property
    def label(self) -> str:
        tag = {"gamma": "Gamma", "normal": "N", "weibull": "W"}[self.family]
        return f"{tag}({self.a:g},{self.b:g})"

    @property
    def dist(self):
        if self.family == "gamma":
            return stats.gamma(self.a, scale=self.b)
        if self.family == "normal":
            return stats.norm(self.a, np.sqrt(self.b))
        return stats.weibull_min(self.a, scale=self.b)

    def cdf(self, x):
        return self.dist.cdf(x)

    def pdf(self, x):
        return self.dist.pdf(x)

    def quantile(self, alpha: float) -> float:
        return true_quantile(self, alpha)


def sample(spec: PopulationSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. draws; Weibull by inversion, Gamma and Normal by numpy's samplers."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if spec.family == "gamma":
        return spec.b * rng.standard_gamma(spec.a, size=n)
    if spec.family == "normal":
        return spec.a + np.sqrt(spec.b) * rng.standard_normal(n)
    u = 1.0 - rng.random(n)  # in (0, 1]
    return spec.b * (-np.log(u)) ** (1.0 / spec.a)


@lru_cache(maxsize=None)
def true_quantile(spec: PopulationSpec, alpha: float) -> float:
    """Root of F(x) = alpha by Brent's method on a bracketing interval."""
    if not 0.0 < alpha < 1.0:
        raise LevelError(f"level must lie in (0, 1), got {alpha!r}")
    d = spec.dist
    mu, sd = float(d.mean()), float(d.std())
    lo, hi = mu - sd, mu + sd
    while d.cdf(lo) > alpha:
        lo = lo - 2 * sd if spec.family == "normal" else lo / 2 if lo > 0 else sd * 1e-3
    while d.cdf(hi) < alpha:
        hi += 2 * sd
    lo = max(lo, 0.0) if spec.family != "normal" else lo
    return float(optimize.brentq(lambda x: d.cdf(x) - alpha, lo, hi, xtol=1e-12, rtol=1e-14))


def drm_theta_star(populations: Sequence[PopulationSpec], basis: BasisSpec):
    """Exact log density ratio coefficients against population 0, or None.

    Available for all-Gamma populations with basis (1, x, log) and all-Normal
    populations with basis (1, x, x2).
    """
    fams = {p.family for p in populations}
    p0 = populations[0]
    if fams == {"gamma"} and basis.names == ("1", "x", "log"):
        return np.array([[lgamma(p0.a) + p0.a * log(p0.b) - lgamma(p.a) - p.a * log(p.b),
                          1 / p0.b - 1 / p.b, p.a - p0.a] for p in populations[1:]])
    if fams == {"normal"} and basis.names == ("1", "x", "x2"):
        m0, v0 = p0.a, p0.b
        return np.array([[0.5 * log(v0 / p.b) - p.a ** 2 / (2 * p.b) + m0 ** 2 / (2 * v0),
                          p.a / p.b - m0 / v0, 1 / (2 * v0) - 1 / (2 * p.b)]
                         for p in populations[1:]])
    return None


def _grid(populations: Sequence[PopulationSpec], tail: float = 1e-9) -> QuadratureGrid:
    lo = min(p.dist.ppf(tail) for p in populations)
    hi = max(p.dist.isf(tail) for p in populations)
    return QuadratureGrid(float(lo), float(hi))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Simulation design; ``basis`` is a comma separated list of basis names.

    ``variance_scale`` multiplies variances and mean squared errors in the
    report (default: the total sample size, i.e. units of var(sqrt(n) * est)).
    ``cdf_bias_scale`` selects how CDF biases are normalized: ``"sqrt"``
    divides by sqrt(alpha (1 - alpha)), ``"level"`` by alpha.
    """

    populations: tuple[PopulationSpec, ...]
    basis: str
    n_k: int = 50
    reps: int = 2000
    levels: tuple[float, ...] = (0.05, 0.10, 0.50, 0.90, 0.95)
    seed: int = 2013
    conf_level: float = 0.95
    em_density: str = "own"
    variance_scale: float | None = None
    cdf_bias_scale: str = "sqrt"
    workers: int = 1
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "populations", tuple(self.populations))
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if len(self.populations) < 2:
            raise ValueError("need at least two populations")
        for a in self.levels:
            if not 0 < a < 1:
                raise LevelError(f"level {a!r} outside (0, 1)")

    @property
    def basis_spec(self) -> BasisSpec:
        return BasisSpec.parse(self.basis)

    @property
    def n_total(self) -> int:
        return self.n_k * len(self.populations)

    @property
    def scale(self) -> float:
        return float(self.n_total if self.variance_scale is None else self.variance_scale)


_GAMMA = ((6, 1.5), (6, 1.4), (7, 1.3), (7, 1.2), (8, 1.1), (8, 1.0))
_NORMAL = ((18, 4), (18, 9), (20, 6), (20, 9), (22, 8), (22, 10))
_MISSPEC = (("gamma", 16, 0.6), ("gamma", 19, 0.5), ("normal", 9, 5),
            ("normal", 9.6, 5.6), ("weibull", 10, 4.5), ("weibull", 11, 5))

DESIGNS = {
    "gamma50": ExperimentConfig(
        tuple(PopulationSpec("gamma", a, b) for a, b in _GAMMA), "1,x,log", name="gamma50"),
    "normal50": ExperimentConfig(
        tuple(PopulationSpec("normal", a, b) for a, b in _NORMAL), "1,x,x2", name="normal50"),
    "misspec50": ExperimentConfig(
        tuple(PopulationSpec(*p) for p in _MISSPEC), "1,x,log1p_abs,sqrt_abs",
        name="misspec50"),
}


def load_design(name_or_path: str, **overrides) -> ExperimentConfig:
    """A named design or a JSON file.

    JSON keys: ``populations`` (list of [family, a, b]), ``basis`` and
    optionally any other :class:`ExperimentConfig` field.
    """
    if name_or_path in DESIGNS:
        cfg = DESIGNS[name_or_path]
    else:
        with open(name_or_path, encoding="utf-8") as fh:
            raw = json.load(fh)
        raw["populations"] = tuple(PopulationSpec(*p) for p in raw["populations"])
        raw.setdefault("name", "custom")
        if "levels" in raw:
            raw["levels"] = tuple(raw["levels"])
        cfg = ExperimentConfig(**raw)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


# --------------------------------------------------------------------------
# one replicate
# --------------------------------------------------------------------------

_FIELDS = ("G_el", "G_em", "G_el_var", "xi_el", "xi_em", "v_el", "v_em",
           "el_lo", "el_hi", "em_lo", "em_hi")
_DIFF_FIELDS = ("d_el", "d_em", "d_el_lo", "d_el_hi", "d_em_lo", "d_em_hi")


def _rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, rep])))


def _replicate(config: ExperimentConfig, rep: int):
    rng = _rng(config.seed, rep)
    samples = [sample(p, config.n_k, rng) for p in config.populations]
    P, L = len(samples), len(config.levels)
    try:
        fit = fit_mele(MultiSample(samples), config.basis_spec, SolverOptions())
        inf = ElInference(fit, em_density=config.em_density)
        cdf, kernel = inf.cdf, inf.kernel
        out = {f: np.empty((P, L)) for f in _FIELDS}
        out.update({f: np.empty((P - 1, L)) for f in _DIFF_FIELDS})
        for r, pop in enumerate(config.populations):
            for j, alpha in enumerate(config.levels):
                xi = true_quantile(pop, alpha)
                G = cdf.cdf(r, xi)
                out["G_el"][r, j] = G
                out["G_em"][r, j] = em_cdf(samples[r], xi)
                out["G_el_var"][r, j] = omega(kernel, r, r, xi, xi, G, G) / fit.data.n
                el, em = inf.ci(r, alpha, config.conf_level), inf.em_ci(r, alpha, config.conf_level)
                out["xi_el"][r, j], out["v_el"][r, j] = el.point, el.variance
                out["xi_em"][r, j], out["v_em"][r, j] = em.point, em.variance
                out["el_lo"][r, j], out["el_hi"][r, j] = el.lo, el.hi
                out["em_lo"][r, j], out["em_hi"][r, j] = em.lo, em.hi
        for r in range(1, P):
            for j, alpha in enumerate(config.levels):
                el = inf.ci_diff((0, alpha), (r, alpha), config.conf_level)
                em = inf.em_ci_diff((0, alpha), (r, alpha), config.conf_level)
                i = r - 1
                out["d_el"][i, j], out["d_em"][i, j] = el.point, em.point
                out["d_el_lo"][i, j], out["d_el_hi"][i, j] = el.lo, el.hi
                out["d_em_lo"][i, j], out["d_em_hi"][i, j] = em.lo, em.hi
    except DrmError as exc:
        return rep, f"{type(exc).__name__}: {exc}"
    return rep, out


def _run_chunk(args):
    config, reps = args
    return [_replicate(config, rep) for rep in reps]


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------

@dataclass
class MetricsTable:
    """Aggregated simulation metrics.

    ``cells`` maps (population index, level) to a dict of metrics; ``diff_cells``
    maps (pair index, level), pair i meaning population 0 minus population i+1.
    Variances and mean squared errors are multiplied by ``scale``; biases and
    coverages are percentages.
    """

    config: ExperimentConfig
    cells: dict = field(default_factory=dict, repr=False)
    diff_cells: dict = field(default_factory=dict, repr=False)
    n_success: int = 0
    failures: list = field(default_factory=list, repr=False)

    @property
    def scale(self) -> float:
        return self.config.scale

    def value(self, population: int, level: float, metric: str) -> float:
        return self.cells[(population, float(level))][metric]

    def diff_value(self, pair: int, level: float, metric: str) -> float:
        return self.diff_cells[(pair, float(level))][metric]

    def records(self) -> list[dict]:
        """Flat records, one per (population, level, metric)."""
        pops = self.config.populations
        out = []
        for (r, a), metrics in self.cells.items():
            for k, v in metrics.items():
                out.append({"section": "single", "population": pops[r].label,
                            "level": a, "metric": k, "value": v})
        for (i, a), metrics in self.diff_cells.items():
            label = f"{pops[0].label}-{pops[i + 1].label}"
            for k, v in metrics.items():
                out.append({"section": "difference", "population": label,
                            "level": a, "metric": k, "value": v})
        return out


def _var(x):
    return float(np.var(x, ddof=1)) if x.size > 1 else 0.0


def _rel_bias(est, truth) -> float:
    """Mean error as a percentage of the target; undefined for a zero target."""
    return 100 * float(np.mean(est - truth)) / truth if truth != 0 else float("nan")


def _ratio(a, b):
    return float(a / b) if b > 0 else float("nan")


def _asymptotics(config: ExperimentConfig):
    """Population-level variances of G_hat and xi_hat when the model holds exactly."""
    basis = config.basis_spec
    theta = drm_theta_star(config.populations, basis)
    if theta is None:
        return None
    P = len(config.populations)
    rho = np.full(P, 1.0 / P)
    kernel = build_kernel_oracle([p.pdf for p in config.populations], rho, basis, theta,
                                 _grid(config.populations))
    out = {}
    for r, pop in enumerate(config.populations):
        for a in config.levels:
            xi = true_quantile(pop, a)
            g = float(pop.pdf(xi))
            out[(r, a)] = (omega(kernel, r, r, xi, xi, a, a),
                           float(sigma_el_matrix(kernel, [Target(r, xi, a, g)])[0, 0]),
                           a * (1 - a) / (rho[r] * g * g))
    return out


def _aggregate(config: ExperimentConfig, results) -> MetricsTable:
    table = MetricsTable(config)
    good = [out for _, out in results if isinstance(out, dict)]
    table.failures = [(rep, msg) for rep, msg in results if not isinstance(msg, dict)]
    table.n_success = len(good)
    if not good:
        return table
    stack = {f: np.stack([o[f] for o in good]) for f in _FIELDS + _DIFF_FIELDS}
    asym = _asymptotics(config)
    sc = config.scale
    P = len(config.populations)
    rho = 1.0 / P
    for r, pop in enumerate(config.populations):
        for j, a in enumerate(config.levels):
            xi = true_quantile(pop, a)
            G_el, G_em = stack["G_el"][:, r, j], stack["G_em"][:, r, j]
            x_el, x_em = stack["xi_el"][:, r, j], stack["xi_em"][:, r, j]
            norm_G = np.sqrt(a * (1 - a)) if config.cdf_bias_scale == "sqrt" else a
            var_G_el, var_G_em = _var(G_el), _var(G_em)
            var_el, var_em = _var(x_el), _var(x_em)
            mse_el = float(np.mean((x_el - xi) ** 2))
            mse_em = float(np.mean((x_em - xi) ** 2))
            el_cov = (stack["el_lo"][:, r, j] <= xi) & (xi <= stack["el_hi"][:, r, j])
            em_cov = (stack["em_lo"][:, r, j] <= xi) & (xi <= stack["em_hi"][:, r, j])
            cell = {
                "xi": xi,
                "cdf_var_el": sc * var_G_el,
                "cdf_var_em": sc * var_G_em,
                "cdf_var_ratio": _ratio(var_G_em, var_G_el),
                "cdf_est_ratio": _ratio(float(np.mean(stack["G_el_var"][:, r, j])), var_G_el),
                "cdf_bias_el": 100 * float(np.mean(G_el - a)) / norm_G,
                "cdf_bias_em": 100 * float(np.mean(G_em - a)) / norm_G,
                "var_el": sc * var_el,
                "var_em": sc * var_em,
                "est_var_el": sc * float(np.mean(stack["v_el"][:, r, j])),
                "est_var_em": sc * float(np.mean(stack["v_em"][:, r, j])),
                "var_ratio": _ratio(var_em, var_el),
                "bias_el": _rel_bias(x_el, xi),
                "bias_em": _rel_bias(x_em, xi),
                "mse_el": sc * mse_el,
                "mse_em": sc * mse_em,
                "mse_ratio": _ratio(mse_em, mse_el),
                "est_mse_ratio": _ratio(float(np.mean(stack["v_el"][:, r, j])), mse_el),
                "el_length": float(np.mean(stack["el_hi"][:, r, j] - stack["el_lo"][:, r, j])),
                "el_coverage": 100 * float(np.mean(el_cov)),
                "em_length": float(np.mean(stack["em_hi"][:, r, j] - stack["em_lo"][:, r, j])),
                "em_coverage": 100 * float(np.mean(em_cov)),
            }
            if asym is not None:
                om, s_el, s_em = asym[(r, a)]
                cell["cdf_asym_var_el"] = om
                cell["cdf_asym_ratio"] = a * (1 - a) / rho / om
                cell["asym_var_el"] = s_el
                cell["asym_ratio"] = s_em / s_el
            table.cells[(r, a)] = cell
    for i in range(P - 1):
        for j, a in enumerate(config.levels):
            target = true_quantile(config.populations[0], a) - \
                true_quantile(config.populations[i + 1], a)
            lo_el, hi_el = stack["d_el_lo"][:, i, j], stack["d_el_hi"][:, i, j]
            lo_em, hi_em = stack["d_em_lo"][:, i, j], stack["d_em_hi"][:, i, j]
            table.diff_cells[(i, a)] = {
                "target": target,
                "el_length": float(np.mean(hi_el - lo_el)),
                "el_coverage": 100 * float(np.mean((lo_el <= target) & (target <= hi_el))),
                "em_length": float(np.mean(hi_em - lo_em)),
                "em_coverage": 100 * float(np.mean((lo_em <= target) & (target <= hi_em))),
            }
    return table


def run_experiment(config: ExperimentConfig) -> MetricsTable:
    """Run all replicates (in parallel when ``config.workers > 1``) and aggregate."""
    reps = list(range(config.reps))
    if config.workers > 1:
        chunks = [reps[i::config.workers] for i in range(config.workers)]
        with ProcessPoolExecutor(config.workers) as pool:
            results = [res for part in pool.map(_run_chunk, [(config, c) for c in chunks])
                       for res in part]
    else:
        results = _run_chunk((config, reps))
    results.sort(key=lambda t: t[0])
    table = _aggregate(config, results)
    if table.failures:
        log_.warning("%d of %d replicates failed", len(table.failures), config.reps)
    return table


def misspecification_study(config: ExperimentConfig | None = None) -> MetricsTable:
    """Run a design with the four-term basis (1, x, log(1+|x|), sqrt|x|)."""
    config = config or DESIGNS["misspec50"]
    return run_experiment(replace(config, basis="1,x,log1p_abs,sqrt_abs"))
