import numpy as np
import pytest
from scipy.stats import gamma, norm

from drmquant import (BasisSpec, MultiSample, QuadratureGrid, build_kernel, build_kernel_oracle,
                      fit_mele, hessian, omega, sigma_el, sigma_em)
from drmquant.asymptotics import Target, dominance_gap, sigma_el_matrix, sigma_em_matrix
from drmquant.errors import DensityZero, QuadratureError
from drmquant.montecarlo import DESIGNS, _grid, drm_theta_star, true_quantile

QUAD = BasisSpec.parse("1,x,x2")


@pytest.fixture(scope="module")
def normal_oracle():
    dens = [norm(0, 1).pdf, norm(1, 1).pdf]
    return build_kernel_oracle(dens, [0.5, 0.5], QUAD, [[-0.5, 1.0, 0.0]],
                               QuadratureGrid(-12.0, 13.0))


@pytest.fixture(scope="module")
def plug_in():
    rng = np.random.default_rng(5)
    data = MultiSample([rng.gamma(6, 1.5, 40), rng.gamma(7, 1.3, 50), rng.gamma(8, 1.0, 30)])
    fit = fit_mele(data, BasisSpec.parse("1,x,log"))
    return fit, build_kernel(fit)


# ---- plug-in -----------------------------------------------------------------

def test_plug_in_W_is_negated_hessian_over_n(plug_in):
    fit, k = plug_in
    H = hessian(fit.theta_hat, fit.data, fit.basis)
    np.testing.assert_allclose(k.W, -H / fit.data.n, rtol=0, atol=1e-10)
    np.testing.assert_array_equal(k.W, k.W.T)
    assert np.linalg.eigvalsh(k.W).min() > 0


def test_plug_in_B_identities(plug_in):
    fit, k = plug_in
    m, d = k.m, k.d
    Binf = np.array([k.B_inf(r) for r in range(m + 1)])
    # zero sums over r, at every x
    for x in (np.inf, np.median(fit.data.pooled), fit.data.pooled.min()):
        np.testing.assert_allclose(k.parts(x).B.sum(axis=0), 0.0, atol=1e-8)
    # B_r(inf) segment s equals B_s(inf) segment r for r, s >= 1
    for r in range(1, m + 1):
        for s in range(1, m + 1):
            np.testing.assert_allclose(Binf[r, (s - 1) * d:s * d], Binf[s, (r - 1) * d:r * d],
                                       atol=1e-8)
    assert np.all(k.parts(-1e9).B == 0) and k.G(0, -1e9) == 0.0


def test_plug_in_total_mass_and_a_c_relation(plug_in):
    _, k = plug_in
    x = 9.0
    p = k.parts(x)
    np.testing.assert_allclose(k.parts(np.inf).G, 1.0, atol=1e-10)
    np.testing.assert_allclose(p.C + p.A, np.diag(k.rho * p.G), atol=1e-12)


def test_plug_in_S_and_moments_for_equal_samples():
    rng = np.random.default_rng(8)
    x = rng.normal(size=400)
    data = MultiSample([x[:200], x[200:]])
    fit = fit_mele(data, BasisSpec.parse("1,x"))
    k = build_kernel(fit)
    np.testing.assert_allclose(k.S, np.diag([4.0, 0.0]))
    Q = np.column_stack([np.ones(400), x])
    approx = 0.25 * Q.T @ Q / 400
    np.testing.assert_allclose(k.W, approx, atol=0.02)


# ---- oracle --------------------------------------------------------------------

@pytest.mark.parametrize("x", [-1.0, 0.0, 1.0])
def test_oracle_identities(normal_oracle, x):
    k = normal_oracle
    rho = k.rho
    for r in range(2):
        for kk in range(2):
            lhs = k.c(r, kk, x) + k.B(r, x) @ k.solve(k.B_inf(kk))
            assert lhs == pytest.approx(rho[r] * (r == kk) * k.G(r, x), abs=1e-5)
            assert k.c(r, kk, x) == pytest.approx(rho[r] * (r == kk) * k.G(r, x) - k.a(r, kk, x),
                                                  abs=1e-12)
    # c_r0 + B_r' W^-1 B_0 vanishes for r >= 1
    assert k.c(1, 0, x) + k.B(1, x) @ k.solve(k.B_inf(0)) == pytest.approx(0.0, abs=1e-5)
    # G from the oracle matches the true CDFs
    assert k.G(0, x) == pytest.approx(norm.cdf(x), abs=1e-8)
    assert k.G(1, x) == pytest.approx(norm.cdf(x - 1), abs=1e-8)


def test_oracle_S_identity(normal_oracle):
    k = normal_oracle
    total = sum(k.solve(np.outer(k.B_inf(j), k.B_inf(j))) @ k.W_inv / k.rho[j]
                for j in range(2))
    np.testing.assert_allclose(total, k.S, atol=1e-5)


def test_oracle_theta_star_matches_density_mixture():
    pops = DESIGNS["gamma50"].populations[:3]
    spec = BasisSpec.parse("1,x,log")
    dens = [p.pdf for p in pops]
    grid = _grid(pops)
    a = build_kernel_oracle(dens, [1 / 3] * 3, spec, drm_theta_star(pops, spec), grid)
    b = build_kernel_oracle(dens, [1 / 3] * 3, spec, None, grid)
    np.testing.assert_allclose(a.W, b.W, rtol=1e-8)
    np.testing.assert_allclose(a.parts(8.0).B, b.parts(8.0).B, atol=1e-9)


def test_oracle_collapse_for_identical_densities():
    g = norm(0, 1).pdf
    rho = np.array([0.2, 0.3, 0.5])
    k = build_kernel_oracle([g, g, g], rho, BasisSpec.parse("1,x"), np.zeros((2, 2)),
                            QuadratureGrid(-12, 12))
    for x in (-0.5, 0.7):
        G = norm.cdf(x)
        for r in range(3):
            for s in range(3):
                assert k.a(r, s, x) == pytest.approx(rho[r] * (r == s) * G - rho[r] * rho[s] * G,
                                                     abs=1e-10)


def test_oracle_rejects_bad_density():
    with pytest.raises(QuadratureError):
        build_kernel_oracle([norm(0, 1).pdf, lambda x: 2 * norm(0, 1).pdf(x)], [0.5, 0.5],
                            BasisSpec.parse("1,x"), None, QuadratureGrid(-10, 10))


def test_omega_symmetry_and_pointwise_dominance(normal_oracle):
    k = normal_oracle
    for r, s, x, y in [(0, 1, -0.3, 0.8), (1, 1, 0.2, 1.5), (0, 0, -1.0, -1.0)]:
        Gx, Gy = k.G(r, x), k.G(s, y)
        assert omega(k, r, s, x, y, Gx, Gy) == pytest.approx(omega(k, s, r, y, x, Gy, Gx),
                                                            abs=1e-12)
    for r in range(2):
        for x in (-1.5, 0.0, 2.0):
            G = k.G(r, x)
            assert omega(k, r, r, x, x, G, G) <= G * (1 - G) / k.rho[r] + 1e-10
    assert omega(k, 0, 1, -40.0, -40.0, 0.0, 0.0) == 0.0


def test_sigma_el_duplicate_target_has_rank_one(normal_oracle):
    k = normal_oracle
    xi = norm.ppf(0.3)
    m = sigma_el(k, 0, 0, xi, xi, norm.pdf(xi), norm.pdf(xi), 0.3, 0.3)
    assert m[0, 0] == pytest.approx(m[0, 1]) and m[1, 1] == pytest.approx(m[1, 0])
    assert abs(np.linalg.det(m)) < 1e-10 * m[0, 0] ** 2


def test_sigma_em_examples():
    m = sigma_em(0.5, 0.5, 0.5, 0.5, norm.pdf(0), norm.pdf(0), 0, 0)
    assert m[0, 0] == pytest.approx(np.pi, rel=1e-12)
    assert sigma_em(0.5, 0.3, 0.5, 0.2, 1.0, 1.0, 0, 1)[0, 1] == 0.0
    xi = true_quantile(DESIGNS["gamma50"].populations[0], 0.05)
    g = gamma(6, scale=1.5).pdf(xi)
    v = sigma_em(1 / 6, 1 / 6, 0.05, 0.05, g, g, 0, 1)[0, 0]
    assert v == pytest.approx(115.77, abs=0.05)
    doubled = sigma_em(2 / 6, 2 / 6, 0.05, 0.05, g, g, 0, 1)[0, 0]
    assert doubled == pytest.approx(v / 2, rel=1e-14)
    with pytest.raises(DensityZero):
        sigma_em(0.5, 0.5, 0.5, 0.5, 0.0, 1.0, 0, 1)


def test_gamma_oracle_quantile_variance():
    # asymptotic EL variance for the first Gamma population at the 5% level
    cfg = DESIGNS["gamma50"]
    pops = cfg.populations
    k = build_kernel_oracle([p.pdf for p in pops], np.full(6, 1 / 6), cfg.basis_spec,
                            drm_theta_star(pops, cfg.basis_spec), _grid(pops))
    xi = true_quantile(pops[0], 0.05)
    v = sigma_el_matrix(k, [Target(0, xi, 0.05, pops[0].pdf(xi))])[0, 0]
    assert v == pytest.approx(71.34, abs=0.05)


@pytest.mark.parametrize("seed", range(5))
def test_dominance_on_random_oracles(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 4))
    mus = rng.uniform(-1, 1, m + 1)
    sds = rng.uniform(0.7, 1.5, m + 1)
    pops = [norm(mu, sd) for mu, sd in zip(mus, sds)]
    rho = rng.dirichlet(np.full(m + 1, 3.0))
    k = build_kernel_oracle([p.pdf for p in pops], rho, QUAD, None,
                            QuadratureGrid(-15, 15, panels=96))
    targets = []
    for _ in range(4):
        r = int(rng.integers(0, m + 1))
        a = float(rng.uniform(0.05, 0.95))
        xi = pops[r].ppf(a)
        targets.append(Target(r, xi, a, pops[r].pdf(xi)))
    assert dominance_gap(k, targets) >= -1e-8
    diff = sigma_em_matrix(k.rho, targets) - sigma_el_matrix(k, targets)
    np.testing.assert_allclose(diff, diff.T, atol=1e-12)
