"""Posterior-predictive sampling, point predictions and elliptical credible sets.

Random stream protocol of :func:`sample_predictive` (fixed so that a direct
re-simulation with the same generator reproduces the draws): for each of the
``n_post`` outer steps, draw one chain index with ``rng.integers``, then the
``n_beta`` effect vectors, then ``standard_normal((n_beta, n_Y, m))`` for the
outcome noise. The mv-Cauchy effects use ``standard_normal((n_beta, m))``
followed by ``chisquare(1, n_beta)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .distributions import normal_scores_to_cauchy
from .errors import (ConfigurationError, DomainError, InvalidParameterError, ShapeError,
                     SingularSystemError, StateError)

log = logging.getLogger(__name__)

COPULA_MODES = ("coupled", "printed")
COVERAGE_RULES = ("solid", "shell")
MIN_COVERAGE_SAMPLE = 1000
MAX_CONDITION = 1e12


@dataclass
class PredictiveConfig:
    n_post: int = 50
    n_beta: int = 50
    n_Y: int = 20
    copula_mode: str = "coupled"

    def __post_init__(self):
        for name in ("n_post", "n_beta", "n_Y"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.copula_mode not in COPULA_MODES:
            raise ConfigurationError(f"copula_mode must be one of {COPULA_MODES}")

    @property
    def total(self) -> int:
        return self.n_post * self.n_beta * self.n_Y


@dataclass
class PredictiveSample:
    samples: np.ndarray
    point_id: int | str | None = None

    def __len__(self) -> int:
        return self.samples.shape[0]


def _chain_arrays(chain) -> dict:
    """Natural-scale arrays with Cholesky factors, cached on the chain."""
    cached = getattr(chain, "_predictive_cache", None)
    if cached is not None:
        return cached
    arr = chain.constrained()
    out = {"delta": arr["delta"], "LS": np.linalg.cholesky(arr["Sigma"])}
    if chain.kind == "mv_cauchy":
        out["LG"] = np.linalg.cholesky(arr["Gamma"])
    else:
        out["gamma"] = arr["gamma"]
        out["LR"] = np.linalg.cholesky(arr["R"])
    chain._predictive_cache = out
    return out


def _effects_draw(kind, arr, k, n_beta, m, rng, copula_mode):
    delta = arr["delta"][k]
    if kind == "mv_cauchy":
        z = rng.standard_normal((n_beta, m))
        w = rng.chisquare(1.0, size=n_beta)
        return delta + (z @ arr["LG"][k].T) / np.sqrt(w)[:, None]
    gamma = arr["gamma"][k]
    if copula_mode == "printed":
        return delta + gamma * rng.standard_cauchy((n_beta, m))
    z = rng.standard_normal((n_beta, m)) @ arr["LR"][k].T
    return normal_scores_to_cauchy(z, delta, gamma)


def sample_predictive(model_kind, chain, x_tilde, source_model=None, config: PredictiveConfig | None = None,
                      rng=None, f_val=None, point_id=None) -> PredictiveSample:
    """Draw the nested posterior-predictive sample for one feature vector.

    Rows are ordered posterior draw, then effect draw, then outcome draw.
    """
    config = PredictiveConfig() if config is None else config
    rng = np.random.default_rng() if rng is None else rng
    if chain is None or len(chain) == 0:
        raise StateError("cannot sample the predictive from an empty chain")
    if model_kind != chain.kind:
        raise ConfigurationError(f"chain holds {chain.kind} draws, {model_kind} requested")
    if f_val is None:
        if source_model is None:
            raise ConfigurationError("need a source model or f_val")
        f_val = source_model.predict(np.asarray(x_tilde, dtype=float))
    f_val = np.asarray(f_val, dtype=float).reshape(-1)
    m = chain.m
    if f_val.shape != (m,):
        raise ShapeError(f"source prediction has {f_val.size} outcomes, chain has m={m}")
    arr = _chain_arrays(chain)
    nb, ny = config.n_beta, config.n_Y
    out = np.empty((config.n_post, nb, ny, m))
    for j in range(config.n_post):
        k = int(rng.integers(len(chain)))
        beta = _effects_draw(model_kind, arr, k, nb, m, rng, config.copula_mode)
        noise = rng.standard_normal((nb, ny, m)) @ arr["LS"][k].T
        out[j] = (beta * f_val)[:, None, :] + noise
    return PredictiveSample(out.reshape(-1, m), point_id)


def point_prediction(sample) -> np.ndarray:
    """Coordinatewise median of the predictive draws."""
    s = sample.samples if isinstance(sample, PredictiveSample) else np.asarray(sample, dtype=float)
    if s.shape[0] == 0:
        raise StateError("empty predictive sample")
    return np.median(s, axis=0)


def _cov_factor(S, name="S") -> la.PDFactor:
    S = la.as_square(S, name)
    try:
        fac = la.PDFactor(S, name=name)
    except InvalidParameterError as exc:
        raise SingularSystemError(f"{name} is not positive definite "
                                  f"(condition number {np.linalg.cond(S):.3g})") from exc
    d = np.diag(fac.L)
    if (d.max() / d.min()) ** 2 > MAX_CONDITION:
        raise SingularSystemError(
            f"{name} is numerically singular (condition number {np.linalg.cond(S):.3g})")
    return fac


def mahalanobis(y, y_hat, S) -> np.ndarray | float:
    """``sqrt((y - y_hat)' S^{-1} (y - y_hat))``, row-wise for matrices."""
    fac = S if isinstance(S, la.PDFactor) else _cov_factor(S)
    d = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    if d.shape[-1] != fac.m:
        raise ShapeError("vector and covariance are not conformable")
    out = np.sqrt(fac.quad(d))
    return out if np.ndim(out) else float(out)


@dataclass
class CoverageResult:
    covered: bool
    distance: float
    threshold: tuple


def _sample_geometry(s):
    center = s.mean(axis=0)
    S = np.atleast_2d(np.cov(s, rowvar=False))
    try:
        fac = _cov_factor(S, "predictive covariance")
    except SingularSystemError:
        log.warning("degenerate predictive covariance; adding 1e-10 I")
        fac = la.PDFactor(S + 1e-10 * np.eye(S.shape[0]), name="predictive covariance")
    return center, fac


def coverage_thresholds(dists, alpha: float, rule: str = "solid") -> tuple:
    if rule == "solid":
        return (0.0, float(np.quantile(dists, 1.0 - alpha)))
    if rule == "shell":
        lo, hi = np.quantile(dists, [alpha / 2.0, 1.0 - alpha / 2.0])
        return (float(lo), float(hi))
    raise ConfigurationError(f"coverage rule must be one of {COVERAGE_RULES}")


def elliptical_coverage(sample, y_true, alpha: float = 0.05, rule: str = "solid") -> CoverageResult:
    """Is ``y_true`` inside the Mahalanobis credible set of the predictive sample?

    ``solid`` covers distances up to the ``1 - alpha`` quantile of the draws'
    own distances to their mean; ``shell`` uses the central
    ``[alpha/2, 1 - alpha/2]`` quantile band.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    s = sample.samples if isinstance(sample, PredictiveSample) else np.asarray(sample, dtype=float)
    if s.shape[0] < MIN_COVERAGE_SAMPLE:
        raise ConfigurationError(f"coverage needs at least {MIN_COVERAGE_SAMPLE} draws, got {s.shape[0]}")
    center, fac = _sample_geometry(s)
    dists = np.sqrt(fac.quad(s - center))
    lo, hi = coverage_thresholds(dists, alpha, rule)
    d = float(np.sqrt(fac.quad(np.asarray(y_true, dtype=float) - center)))
    return CoverageResult(bool(lo <= d <= hi), d, (lo, hi))


def self_coverage(sample, alpha: float = 0.05, rule: str = "solid") -> float:
    """Fraction of the sample's own rows inside its credible set."""
    s = sample.samples if isinstance(sample, PredictiveSample) else np.asarray(sample, dtype=float)
    center, fac = _sample_geometry(s)
    dists = np.sqrt(fac.quad(s - center))
    lo, hi = coverage_thresholds(dists, alpha, rule)
    return float(np.mean((dists >= lo) & (dists <= hi)))


@dataclass
class TestSetEvaluation:
    predictions: np.ndarray
    distances: np.ndarray
    covered: np.ndarray

    @property
    def mean_distance(self) -> float:
        return float(np.mean(self.distances))

    @property
    def coverage(self) -> float:
        return float(100.0 * np.mean(self.covered))


def evaluate_test_set(model_kind, chain, X_test, Y_test, source_model=None,
                      config: PredictiveConfig | None = None, rng=None, alpha: float = 0.05,
                      rule: str = "solid", S=None, f_vals=None) -> TestSetEvaluation:
    """Point predictions, Mahalanobis distances and coverage over a test set.

    ``S`` defaults to the empirical covariance of ``Y_test``.
    """
    Y_test = np.atleast_2d(np.asarray(Y_test, dtype=float))
    if Y_test.shape[0] == 0:
        raise StateError("empty test set")
    if f_vals is None:
        f_vals = source_model.predict(np.asarray(X_test, dtype=float))
    f_vals = np.asarray(f_vals, dtype=float).reshape(Y_test.shape)
    rng = np.random.default_rng() if rng is None else rng
    S = np.cov(Y_test, rowvar=False) if S is None else S
    Sf = _cov_factor(np.atleast_2d(S))
    preds = np.empty_like(Y_test)
    covered = np.empty(Y_test.shape[0], dtype=bool)
    for i in range(Y_test.shape[0]):
        samp = sample_predictive(model_kind, chain, None, config=config, rng=rng, f_val=f_vals[i],
                                 point_id=i)
        preds[i] = point_prediction(samp)
        covered[i] = elliptical_coverage(samp, Y_test[i], alpha, rule).covered
    return TestSetEvaluation(preds, np.asarray(mahalanobis(Y_test, preds, Sf)).reshape(-1), covered)


def empirical_coverage(model_kind, chain, X_test, Y_test, source_model=None,
                       config: PredictiveConfig | None = None, alpha: float = 0.05, rng=None,
                       rule: str = "solid") -> float:
    """Percentage of test outcomes inside their elliptical credible sets."""
    return evaluate_test_set(model_kind, chain, X_test, Y_test, source_model, config, rng,
                             alpha, rule).coverage


__all__ = [
    "PredictiveConfig", "PredictiveSample", "sample_predictive", "point_prediction",
    "mahalanobis", "elliptical_coverage", "self_coverage", "coverage_thresholds",
    "CoverageResult", "evaluate_test_set", "TestSetEvaluation", "empirical_coverage",
]
