import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from recast.distributions import (CauchyParams, MvCauchyParams, cauchy_cdf, cauchy_logpdf,
                                  cauchy_quantile, cauchy_sample, cauchy_to_normal_scores,
                                  gaussian_copula_logdensity, inverse_gamma_logpdf,
                                  inverse_wishart_logpdf, inverse_wishart_sample, mv_cauchy_logpdf,
                                  mv_cauchy_sample, mv_normal_logpdf, mv_normal_sample, mv_t_logpdf,
                                  normal_scores_to_cauchy, std_normal_cdf, std_normal_quantile)
from recast.errors import DomainError, InvalidParameterError

from conftest import random_corr, random_spd

finite = st.floats(-50, 50, allow_nan=False)
scale = st.floats(0.05, 20)


# --- univariate Cauchy --------------------------------------------------------

def test_cauchy_cdf_closed_forms():
    assert cauchy_cdf(0.0, CauchyParams(0, 1)) == 0.5
    assert cauchy_cdf(1.0, CauchyParams(0, 1)) == pytest.approx(0.75, abs=1e-15)


def test_cauchy_cdf_against_integrated_density():
    # mpmath quad of the density from -inf to 2.3 (30 digits)
    frozen = 0.722782819701179078
    assert cauchy_cdf(2.3, CauchyParams(0.7, 1.9)) == pytest.approx(frozen, abs=1e-13)
    val, _ = integrate.quad(lambda t: np.exp(cauchy_logpdf(t, delta=0.7, gamma=1.9)), -np.inf, 2.3)
    assert val == pytest.approx(frozen, abs=1e-8)


def test_cauchy_quantile_values():
    assert cauchy_quantile(0.5, CauchyParams(0, 1)) == 0.0
    assert cauchy_quantile(0.75, CauchyParams(0, 1)) == pytest.approx(1.0, abs=1e-14)
    # mpmath bisection on the cdf
    assert cauchy_quantile(0.9, CauchyParams(2, 3)) == pytest.approx(11.2330506115257602, abs=1e-11)


@given(finite, finite, scale)
def test_cauchy_quantile_inverts_cdf(x, delta, gamma):
    q = cauchy_cdf(x, delta=delta, gamma=gamma)
    if 1e-12 < q < 1 - 1e-12:
        back = cauchy_quantile(q, delta=delta, gamma=gamma)
        assert back == pytest.approx(x, abs=1e-10 * max(1.0, abs(x), gamma) * max(1.0, 1 / (q * (1 - q))) ** 0.5)


@given(st.floats(1e-6, 1 - 1e-6), finite, scale)
def test_cauchy_cdf_inverts_quantile(q, delta, gamma):
    assert cauchy_cdf(cauchy_quantile(q, delta=delta, gamma=gamma), delta=delta, gamma=gamma) == \
        pytest.approx(q, abs=1e-10)


@given(st.lists(finite, min_size=2, max_size=20))
def test_cauchy_cdf_monotone(xs):
    xs = np.sort(xs)
    assert np.all(np.diff(cauchy_cdf(xs, delta=0.3, gamma=1.7)) >= 0)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_cauchy_rejects_nonpositive_scale(bad):
    with pytest.raises(InvalidParameterError):
        cauchy_cdf(0.0, delta=0.0, gamma=bad)
    with pytest.raises(InvalidParameterError):
        cauchy_logpdf(0.0, delta=0.0, gamma=bad)


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5])
def test_cauchy_quantile_domain(q):
    with pytest.raises(DomainError):
        cauchy_quantile(q, CauchyParams(0, 1))


def test_degenerate_cauchy_is_point_mass_only():
    p = CauchyParams(1.5, 0.0)
    assert p.is_degenerate
    with pytest.raises(InvalidParameterError):
        cauchy_logpdf(1.5, p)
    with pytest.raises(InvalidParameterError):
        CauchyParams(0.0, -1.0)


def test_cauchy_logpdf_matches_scipy(rng):
    x = rng.standard_cauchy(200) * 3
    np.testing.assert_allclose(cauchy_logpdf(x, delta=0.4, gamma=2.5),
                               stats.cauchy(0.4, 2.5).logpdf(x), rtol=1e-13, atol=1e-13)


def test_cauchy_sampler_ks(rng):
    p = CauchyParams(-1.0, 0.7)
    x = cauchy_sample(p, rng, 100_000)
    assert stats.kstest(x, lambda t: cauchy_cdf(t, p)).pvalue > 0.01


def test_probability_integral_transform(rng):
    x = cauchy_sample(CauchyParams(2.0, 3.0), rng, 100_000)
    u = cauchy_cdf(x, delta=2.0, gamma=3.0)
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_normal_score_round_trip_in_far_tails():
    x = np.array([-1e12, -1e6, -30.0, 0.0, 2.0, 1e6, 1e12])
    z, n_clamped = cauchy_to_normal_scores(x, 0.5, 2.0)
    assert n_clamped == 0
    np.testing.assert_allclose(normal_scores_to_cauchy(z, 0.5, 2.0), x, rtol=1e-9, atol=1e-12)
    z, n_clamped = cauchy_to_normal_scores(np.array([1e300]), 0.0, 1.0)
    assert n_clamped == 1 and np.isfinite(z[0])


# --- standard normal ----------------------------------------------------------

def test_std_normal_values():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_quantile(0.5) == 0.0
    # 30-digit mpmath erf
    assert std_normal_cdf(1.96) == pytest.approx(0.97500210485177956586, abs=1e-15)


def test_std_normal_round_trip_grid():
    x = np.linspace(-8, 8, 2001)
    back = std_normal_quantile(std_normal_cdf(x))
    lower = x <= 5
    np.testing.assert_allclose(back[lower], x[lower], atol=1e-9)
    # above 5 the cdf sits within 3e-7 of one and its float spacing (1.1e-16)
    # bounds how well x can be recovered: |dx| <= ulp / phi(x)
    upper = ~lower
    bound = 1e-9 + np.spacing(1.0) / stats.norm.pdf(x[upper])
    assert np.all(np.abs(back[upper] - x[upper]) <= bound)
    # through the lower tail the upper half round-trips too
    pos = x[x >= 0]
    np.testing.assert_allclose(-std_normal_quantile(std_normal_cdf(-pos)), pos, atol=1e-9)


@pytest.mark.parametrize("q", [0.0, 1.0])
def test_std_normal_quantile_domain(q):
    with pytest.raises(DomainError):
        std_normal_quantile(q)


@given(st.floats(-37, 8))
def test_std_normal_cdf_against_mpmath(x):
    with mp.workdps(40):
        ref = float(mp.erfc(-mp.mpf(x) / mp.sqrt(2)) / 2)
    assert std_normal_cdf(x) == pytest.approx(ref, rel=1e-12, abs=1e-300)


# --- multivariate Cauchy / t --------------------------------------------------

def test_mv_cauchy_logpdf_at_center():
    assert mv_cauchy_logpdf([0.3], MvCauchyParams([0.3], [[1.0]])) == pytest.approx(-np.log(np.pi), abs=1e-14)
    assert mv_cauchy_logpdf([1.0, 2.0], MvCauchyParams([1.0, 2.0], np.eye(2))) == \
        pytest.approx(-np.log(2 * np.pi), abs=1e-14)


def test_mv_cauchy_logpdf_random_point():
    # mpmath evaluation of the nu = 1 multivariate t formula
    p = MvCauchyParams([1.0, -0.5], [[2.0, 0.6], [0.6, 1.5]])
    assert mv_cauchy_logpdf([0.3, -1.2], p) == pytest.approx(-2.85651654231597669, abs=1e-13)


def test_mv_cauchy_is_multivariate_t_one_df(rng):
    for m in (1, 2, 3):
        G = random_spd(rng, m)
        d = rng.standard_normal(m)
        x = rng.standard_cauchy((50, m))
        ref = stats.multivariate_t(loc=d, shape=G, df=1).logpdf(x)
        np.testing.assert_allclose(mv_cauchy_logpdf(x, MvCauchyParams(d, G)), ref, rtol=1e-11)
        np.testing.assert_allclose(mv_t_logpdf(x, d, G, 4.5),
                                   stats.multivariate_t(loc=d, shape=G, df=4.5).logpdf(x), rtol=1e-11)


def test_mv_cauchy_m1_is_univariate(rng):
    x = rng.standard_cauchy(30)
    np.testing.assert_allclose(mv_cauchy_logpdf(x[:, None], MvCauchyParams([0.2], [[1.7 ** 2]])),
                               cauchy_logpdf(x, delta=0.2, gamma=1.7), rtol=1e-12)


def test_mv_cauchy_rejects_non_pd():
    with pytest.raises(InvalidParameterError):
        MvCauchyParams([0, 0], [[1.0, 2.0], [2.0, 1.0]])


def test_mv_cauchy_sampler_margins(rng):
    p = MvCauchyParams([0.5, -2.0], np.eye(2))
    x = mv_cauchy_sample(p, rng, 100_000)
    assert stats.kstest(x[:, 0], stats.cauchy(0.5, 1).cdf).pvalue > 0.01
    np.testing.assert_allclose(np.median(x, axis=0), p.delta, atol=0.05)


def test_mv_cauchy_sampler_linear_combination(rng):
    G = np.array([[2.0, 0.7], [0.7, 1.0]])
    p = MvCauchyParams([1.0, 3.0], G)
    a = np.array([0.6, -1.3])
    x = mv_cauchy_sample(p, rng, 100_000) @ a
    scale = np.sqrt(a @ G @ a)
    assert stats.kstest(x, stats.cauchy(a @ p.delta, scale).cdf).pvalue > 0.01


def test_mv_cauchy_sampler_m1():
    rng = np.random.default_rng(101)
    x = mv_cauchy_sample(MvCauchyParams([0.0], [[4.0]]), rng, 100_000)[:, 0]
    assert stats.kstest(x, lambda t: cauchy_cdf(t, delta=0.0, gamma=2.0)).pvalue > 0.01


# --- multivariate normal ------------------------------------------------------

def test_mv_normal_values():
    assert mv_normal_logpdf([0.0], [0.0], [[1.0]]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)
    assert mv_normal_logpdf([1.0, 1.0], [1.0, 1.0], np.eye(2)) == pytest.approx(-np.log(2 * np.pi), abs=1e-15)
    # mpmath quadratic-form evaluation
    cov = [[2.0, 0.6], [0.6, 1.5]]
    assert mv_normal_logpdf([0.3, -1.2], [1.0, -0.5], cov) == pytest.approx(-2.53671349468542757, abs=1e-13)


def test_mv_normal_at_mean_and_sampler(rng):
    cov = random_spd(rng, 3)
    mean = rng.standard_normal(3)
    _, logdet = np.linalg.slogdet(2 * np.pi * cov)
    assert mv_normal_logpdf(mean, mean, cov) == pytest.approx(-0.5 * logdet, abs=1e-12)
    x = mv_normal_sample(mean, cov, rng, 100_000)
    np.testing.assert_allclose(x.mean(axis=0), mean, atol=4 * np.sqrt(np.diag(cov).max() / 1e5) * 3)
    np.testing.assert_allclose(mv_normal_logpdf(x[:20], mean, cov),
                               stats.multivariate_normal(mean, cov).logpdf(x[:20]), rtol=1e-11)
    z = (x[:, 1] - mean[1]) / np.sqrt(cov[1, 1])
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_mv_normal_rejects_non_pd():
    with pytest.raises(InvalidParameterError):
        mv_normal_logpdf([0, 0], [0, 0], [[1.0, 1.5], [1.5, 1.0]])


# --- inverse gamma / Wishart --------------------------------------------------

def test_inverse_gamma_matches_scipy():
    x = np.linspace(0.05, 10, 50)
    np.testing.assert_allclose(inverse_gamma_logpdf(x, 2.5, 1.3), stats.invgamma(2.5, scale=1.3).logpdf(x),
                               rtol=1e-12)
    assert inverse_gamma_logpdf(-1.0, 2.0, 1.0) == -np.inf


def test_inverse_wishart_m1_is_inverse_gamma():
    for w in (0.1, 0.7, 3.0):
        assert inverse_wishart_logpdf([[w]], [[2.4]], 5.0) == \
            pytest.approx(float(inverse_gamma_logpdf(w, 2.5, 1.2)), abs=1e-10)


def test_inverse_wishart_logpdf_matches_scipy(rng):
    Psi = random_spd(rng, 3)
    W = stats.invwishart(df=6, scale=Psi).rvs(random_state=1)
    assert inverse_wishart_logpdf(W, Psi, 6.0) == pytest.approx(stats.invwishart(df=6, scale=Psi).logpdf(W),
                                                                rel=1e-11)


def test_inverse_wishart_sampler_mean_and_pd(rng):
    m = 2
    draws = inverse_wishart_sample(np.eye(m), m + 3, rng, 100_000)
    np.testing.assert_allclose(draws.mean(axis=0), np.eye(m) / 2, atol=0.02)
    assert np.all(np.linalg.eigvalsh(draws) > 0)


def test_inverse_wishart_sampler_distribution(rng):
    # the (1,1) entry of IW(Psi, nu) is IG((nu - m + 1)/2, Psi_11/2)
    Psi = np.array([[2.0, 0.5], [0.5, 1.0]])
    draws = inverse_wishart_sample(Psi, 6.0, rng, 50_000)
    ref = stats.invgamma(0.5 * (6.0 - 2 + 1), scale=Psi[0, 0] / 2)
    assert stats.kstest(draws[:, 0, 0], ref.cdf).pvalue > 0.01


def test_inverse_wishart_rejects_small_df():
    with pytest.raises(InvalidParameterError):
        inverse_wishart_logpdf(np.eye(3), np.eye(3), 1.5)
    with pytest.raises(InvalidParameterError):
        inverse_wishart_sample(np.eye(3), 2.0, np.random.default_rng(0))


# --- Gaussian copula ------------------------------------------------------------

@given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=3, max_size=3))
def test_copula_independence_is_zero(u):
    assert gaussian_copula_logdensity(u, np.eye(3)) == 0.0


def test_copula_at_medians(rng):
    R = random_corr(rng, 3)
    assert gaussian_copula_logdensity([0.5, 0.5, 0.5], R) == pytest.approx(-0.5 * np.linalg.slogdet(R)[1],
                                                                           abs=1e-13)


def test_copula_value():
    # mpmath with erfinv as the independent normal quantile
    R = [[1.0, 0.5], [0.5, 1.0]]
    assert gaussian_copula_logdensity([0.3, 0.8], R) == pytest.approx(-0.31427706779005782, abs=1e-12)


def test_copula_permutation_symmetry(rng):
    R = random_corr(rng, 3)
    u = rng.uniform(size=3)
    perm = [2, 0, 1]
    assert gaussian_copula_logdensity(u[perm], R[np.ix_(perm, perm)]) == \
        pytest.approx(gaussian_copula_logdensity(u, R), abs=1e-12)


def test_copula_matches_scipy_ratio(rng):
    R = random_corr(rng, 3)
    u = rng.uniform(size=(20, 3))
    z = stats.norm.ppf(u)
    ref = stats.multivariate_normal(np.zeros(3), R).logpdf(z) - stats.norm.logpdf(z).sum(axis=1)
    np.testing.assert_allclose(gaussian_copula_logdensity(u, R), ref, rtol=1e-10, atol=1e-12)


def test_copula_integrates_to_one(rng):
    R = np.array([[1.0, 0.5], [0.5, 1.0]])
    u = rng.uniform(size=(400_000, 2))
    mass = np.exp(gaussian_copula_logdensity(u, R)).mean()
    assert mass == pytest.approx(1.0, abs=0.01)


def test_copula_errors():
    with pytest.raises(DomainError):
        gaussian_copula_logdensity([0.0, 0.5], np.eye(2))
    with pytest.raises(InvalidParameterError):
        gaussian_copula_logdensity([0.2, 0.5], [[1.1, 0.2], [0.2, 1.0]])
