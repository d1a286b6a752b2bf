import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from recast.core import MvCauchyParamsSet, Parameterization, PriorSpec, log_prior
from recast.errors import ConfigurationError, DeserializationError, DomainError, ShapeError, StateError
from recast.online import (AlphaPrior, OnlinePrior, PosteriorSummary, analytic_alpha_mean,
                           analytic_alpha_mean_multi, as_weights, build_posterior_summary,
                           logit_log_jacobian, logits_from_weights, online_log_prior,
                           summarize_phi_draws, weights_from_logits)
from recast.samplers import PosteriorChain, SamplerConfig, mcse_mean, rw_metropolis

from conftest import random_spd


def _summary(rng, kind="mv_cauchy", m=2, n=2000, kde=False):
    d = Parameterization(kind, m).dim
    A = rng.normal(size=(d, d)) * 0.1
    phi = rng.normal(size=d) + rng.standard_normal((n, d)) @ A.T
    return summarize_phi_draws(kind, m, phi, kde=kde, rng=rng)


# --- summaries --------------------------------------------------------------------

def test_summary_moments(rng):
    phi = rng.standard_normal((3000, 8)) * 0.3 + 1.0
    s = summarize_phi_draws("mv_cauchy", 2, phi)
    assert np.allclose(s.mean, phi.mean(axis=0))
    assert np.allclose(s.cov, np.cov(phi, rowvar=False), atol=1e-9)


def test_summary_density_is_gaussian(rng):
    s = _summary(rng)
    x = s.mean + 0.1 * rng.normal(size=s.dim)
    assert s.logpdf_phi(x) == pytest.approx(stats.multivariate_normal(s.mean, s.cov).logpdf(x), rel=1e-10)
    assert s.logpdf_omega(x) == pytest.approx(s.logpdf_phi(x) - s.param.log_jacobian(x), rel=1e-12)


@pytest.mark.parametrize("kde", [False, True])
def test_summary_round_trip(tmp_path, rng, kde):
    s = _summary(rng, "copula", 2, kde=kde)
    s.save(tmp_path / "s.json")
    back = PosteriorSummary.load(tmp_path / "s.json")
    assert back.kind == "copula" and back.m == 2 and back.use_kde == kde
    assert np.array_equal(back.mean, s.mean) and np.array_equal(back.cov, s.cov)
    x = s.sample_phi(rng, 1)[0]
    assert back.logpdf_phi(x) == s.logpdf_phi(x)


def test_summary_rejects_bad_artifacts(tmp_path, rng):
    doc = _summary(rng).to_dict()
    with pytest.raises(DeserializationError, match="version 7"):
        PosteriorSummary.from_dict({**doc, "version": 7})
    with pytest.raises(DeserializationError):
        PosteriorSummary.from_dict({**doc, "format": "other"})
    with pytest.raises(DeserializationError):
        PosteriorSummary.from_dict({k: v for k, v in doc.items() if k != "mean"})
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(DeserializationError):
        PosteriorSummary.load(tmp_path / "bad.json")
    with pytest.raises(ShapeError):
        PosteriorSummary("mv_cauchy", 2, np.zeros(3), np.eye(3), 10)


def test_summary_needs_enough_draws(rng):
    with pytest.raises(StateError):
        summarize_phi_draws("mv_cauchy", 2, rng.normal(size=(999, 8)))
    chain = PosteriorChain("mv_cauchy", 2, rng.normal(size=(1500, 8)))
    assert build_posterior_summary(chain).n_draws == 1500


# --- weight priors and transforms ---------------------------------------------------

def test_alpha_prior_validation():
    with pytest.raises(ConfigurationError):
        AlphaPrior("beta", (1.0,))
    with pytest.raises(ConfigurationError):
        AlphaPrior("dirichlet", (1.0, -1.0))
    with pytest.raises(ConfigurationError):
        AlphaPrior("gamma")
    with pytest.raises(ShapeError):
        AlphaPrior("dirichlet", (1.0, 2.0)).concentration(3)


@pytest.mark.parametrize("prior", [AlphaPrior(), AlphaPrior("beta", (2.0, 5.0)),
                                   AlphaPrior("dirichlet", (1.5, 2.5))])
def test_alpha_prior_logpdf_matches_beta(prior):
    a, b = prior.concentration(2)
    for w in (0.1, 0.5, 0.93):
        assert prior.logpdf([w, 1 - w]) == pytest.approx(stats.beta(a, b).logpdf(w), rel=1e-12)


def test_alpha_prior_moments():
    mean, cov = AlphaPrior("dirichlet", (1.0, 2.0, 3.0)).moments(3)
    draws = stats.dirichlet([1.0, 2.0, 3.0])
    assert np.allclose(mean, draws.mean())
    assert np.allclose(np.diag(cov), draws.var())


@given(st.lists(st.floats(-8, 8), min_size=1, max_size=4))
def test_logit_round_trip(eta):
    w = weights_from_logits(eta)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(logits_from_weights(w), eta, atol=1e-9)


def test_logit_jacobian_matches_finite_differences(rng):
    eta = rng.normal(size=2)
    h = 1e-6
    J = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        J[:, k] = (weights_from_logits(eta + e)[:2] - weights_from_logits(eta - e)[:2]) / (2 * h)
    assert logit_log_jacobian(weights_from_logits(eta)) == pytest.approx(np.log(np.linalg.det(J)), abs=1e-7)


def test_as_weights():
    assert np.array_equal(as_weights(0.25, 2), [0.25, 0.75])
    with pytest.raises(DomainError):
        as_weights(1.5, 2)
    with pytest.raises(ShapeError):
        as_weights([0.5, 0.5], 3)
    with pytest.raises(DomainError):
        as_weights([0.5, 0.6], 2)


# --- mixture prior --------------------------------------------------------------------

def test_online_log_prior_matches_explicit_mixture(rng):
    comps = [_summary(rng), _summary(rng)]
    base = PriorSpec(2)
    prior = OnlinePrior(comps, base, AlphaPrior("dirichlet", (2.0, 1.0, 3.0)))
    p = MvCauchyParamsSet([0.9, 1.1], random_spd(rng, 2, 0.3), random_spd(rng, 2))
    phi = comps[0].param.to_vector(p)
    w = np.array([0.2, 0.5, 0.3])
    lj = comps[0].param.log_jacobian(phi)
    dens = [stats.multivariate_normal(c.mean, c.cov).pdf(phi) * np.exp(-lj) for c in comps]
    dens.append(np.exp(log_prior(p, base)))
    expected = stats.dirichlet([2.0, 1.0, 3.0]).logpdf(w) + np.log(np.dot(w, dens))
    assert online_log_prior(p, w, prior) == pytest.approx(expected, rel=1e-10)


def test_online_prior_rejects_mixed_components(rng):
    with pytest.raises(ConfigurationError):
        OnlinePrior([], PriorSpec(2))
    with pytest.raises(ConfigurationError):
        OnlinePrior([_summary(rng), _summary(rng, "copula")], PriorSpec(2))
    with pytest.raises(ShapeError):
        OnlinePrior([_summary(rng)], PriorSpec(2), AlphaPrior("dirichlet", (1.0, 1.0, 1.0)))


# --- analytic posterior means of the weights -------------------------------------------

def test_alpha_extremes():
    assert analytic_alpha_mean(1.0, 0.0) == pytest.approx(2 / 3, abs=1e-15)
    assert analytic_alpha_mean(0.0, 1.0) == pytest.approx(1 / 3, abs=1e-15)
    assert analytic_alpha_mean(2.5, 2.5) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DomainError):
        analytic_alpha_mean(0.0, 0.0)
    with pytest.raises(DomainError):
        analytic_alpha_mean(-1.0, 1.0)


def _quadrature_means(k, a):
    """Posterior weight means under pi(w) * sum_k w_k k_k by simplex quadrature."""
    a = [float(v) for v in a]
    k = [float(v) for v in k]
    log_norm = math.lgamma(sum(a)) - sum(math.lgamma(v) for v in a)

    def dens(w):
        # plain floats: scipy's frozen dirichlet is too slow inside dblquad
        lp = log_norm + sum((ai - 1) * math.log(wi) for ai, wi in zip(a, w) if ai != 1)
        return math.exp(lp) * sum(wi * ki for wi, ki in zip(w, k))

    if len(k) == 2:
        num, _ = integrate.quad(lambda x: x * dens([x, 1 - x]), 0, 1, epsabs=1e-13, epsrel=1e-12)
        den, _ = integrate.quad(lambda x: dens([x, 1 - x]), 0, 1, epsabs=1e-13, epsrel=1e-12)
        return np.array([num / den, 1 - num / den])

    def integral(f):
        return integrate.dblquad(lambda y, x: f(x, y) * dens([x, y, max(1 - x - y, 0.0)]),
                                 0, 1, 0, lambda x: 1 - x, epsabs=1e-13, epsrel=1e-12)[0]

    den = integral(lambda x, y: 1.0)
    m1, m2 = integral(lambda x, y: x) / den, integral(lambda x, y: y) / den
    return np.array([m1, m2, 1 - m1 - m2])


def test_multi_alpha_matches_simplex_quadrature():
    rng = np.random.default_rng(8)
    for trial in range(10):
        ell = 2 if trial < 4 else 3
        k = rng.uniform(0.05, 3.0, ell)
        a = rng.uniform(1.0, 4.0, ell)
        got = analytic_alpha_mean_multi(k, AlphaPrior("dirichlet", a))
        assert np.allclose(got, _quadrature_means(k, a), atol=1e-6, rtol=0)


@given(st.floats(0, 50), st.floats(0, 50))
def test_dirichlet_reduces_to_two_component_formula(k1, k2):
    if k1 + k2 == 0:
        return
    multi = analytic_alpha_mean_multi([k1, k2], AlphaPrior("dirichlet", (1.0, 1.0)))
    assert multi[0] == pytest.approx(analytic_alpha_mean(k1, k2), abs=1e-12)


def test_two_component_formula_with_beta_prior():
    prior = AlphaPrior("beta", (2.0, 3.0))
    k1, k2 = 1.7, 0.4
    got = analytic_alpha_mean(k1, k2, prior)
    assert got == pytest.approx(_quadrature_means(np.array([k1, k2]), np.array([2.0, 3.0]))[0], abs=1e-9)


def test_sampled_alpha_matches_analytic_mean_with_omega_fixed(rng):
    # with Omega and B pinned, alpha's posterior is pi(alpha)(alpha k1 + (1 - alpha) k2)
    n = 10
    F = rng.uniform(0.5, 2.0, (n, 2))
    Y = F + 0.3 * rng.standard_normal((n, 2))
    comp = _summary(rng)
    p = MvCauchyParamsSet([1.0, 1.0], 0.05 * np.eye(2), 0.1 * np.eye(2))
    phi = comp.param.to_vector(p)
    # centre the summary so that both mixture densities are of similar size
    comp = PosteriorSummary("mv_cauchy", 2, phi + 0.5, comp.cov * 4, comp.n_draws)
    base = PriorSpec(2)
    k1 = np.exp(comp.logpdf_omega(phi))
    k2 = np.exp(log_prior(p, base))
    cfg = SamplerConfig(n_iterations=42000, n_burnin=2000, thin=4, seed=3)
    ch = rw_metropolis("mv_cauchy", Y, f_vals=F, online_prior=OnlinePrior([comp], base), config=cfg,
                       fixed={"delta": p.delta, "Gamma": p.Gamma, "Sigma": p.Sigma,
                              "B": np.ones((n, 2))})
    expected = analytic_alpha_mean(k1, k2)
    assert abs(ch.alpha.mean() - expected) < 4 * mcse_mean(ch.alpha)
