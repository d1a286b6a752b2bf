"""Online RECaST: shared posterior summaries and mixture priors over targets.

A previous target shares only a :class:`PosteriorSummary`, a Gaussian (or
optionally kernel) approximation of its posterior over the unconstrained
parameter vector ``phi``. A new target then uses the prior

    pi(w) * [ sum_k w_k p_k(Omega) + w_base pi(Omega) ]

with mixture weights ``w`` on the simplex. With one previous target this is
the two-component mixture with ``alpha = w_0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import _linalg as la
from .core import Parameterization, PriorSpec, check_kind, log_prior
from .errors import (ConfigurationError, DeserializationError, DomainError,
                     InvalidParameterError, ShapeError, StateError)

SUMMARY_FORMAT = "recast-posterior-summary"
SUMMARY_VERSION = 1
MIN_SUMMARY_DRAWS = 1000


# --- posterior summaries ------------------------------------------------------

@dataclass
class PosteriorSummary:
    """Gaussian approximation of a target posterior in unconstrained space."""

    kind: str
    m: int
    mean: np.ndarray
    cov: np.ndarray
    n_draws: int
    kde_points: np.ndarray | None = None
    kde_bandwidth: np.ndarray | None = None
    use_kde: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        check_kind(self.kind)
        self.param = Parameterization(self.kind, self.m)
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = la.as_square(self.cov, "summary covariance")
        if self.mean.shape != (self.param.dim,) or self.cov.shape[0] != self.param.dim:
            raise ShapeError(f"summary of dimension {self.mean.shape} does not match "
                             f"{self.kind} with m={self.m} (dim {self.param.dim})")
        self._fac = la.PDFactor(self.cov, name="summary covariance")
        if self.use_kde and self.kde_points is None:
            raise ConfigurationError("use_kde requires a retained KDE subsample")

    @property
    def dim(self) -> int:
        return self.param.dim

    def logpdf_phi(self, phi) -> float:
        """Density of the summary in ``phi`` space."""
        phi = np.asarray(phi, dtype=float)
        if self.use_kde:
            d = (phi - self.kde_points) / self.kde_bandwidth
            k = -0.5 * np.sum(d * d, axis=-1) - 0.5 * self.dim * np.log(2 * np.pi) \
                - np.sum(np.log(self.kde_bandwidth))
            return float(special.logsumexp(k) - np.log(len(self.kde_points)))
        w = self._fac.whiten(phi - self.mean)
        return float(-0.5 * (self.dim * np.log(2 * np.pi) + self._fac.logdet + w @ w))

    def logpdf_omega(self, phi) -> float:
        """Density in the natural parameter space, evaluated through ``phi``."""
        return self.logpdf_phi(phi) - self.param.log_jacobian(phi)

    def sample_phi(self, rng, size: int) -> np.ndarray:
        if self.use_kde:
            idx = rng.integers(0, len(self.kde_points), size=size)
            return self.kde_points[idx] + self.kde_bandwidth * rng.standard_normal((size, self.dim))
        return self.mean + rng.standard_normal((size, self.dim)) @ self._fac.L.T

    def mean_params(self):
        return self.param.to_params(self.mean)

    def to_dict(self) -> dict:
        doc = {
            "format": SUMMARY_FORMAT,
            "version": SUMMARY_VERSION,
            "model_kind": self.kind,
            "m": self.m,
            "transform": self.param.descriptor(),
            "mean": self.mean.tolist(),
            "covariance": self.cov.ravel().tolist(),
            "n_draws": int(self.n_draws),
            "use_kde": bool(self.use_kde),
            "metadata": self.metadata,
        }
        if self.kde_points is not None:
            doc["kde"] = {"bandwidth": self.kde_bandwidth.tolist(),
                          "n_points": int(len(self.kde_points)),
                          "points": self.kde_points.ravel().tolist()}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PosteriorSummary":
        if not isinstance(doc, dict) or doc.get("format") != SUMMARY_FORMAT:
            raise DeserializationError("not a posterior-summary artifact")
        if doc.get("version") != SUMMARY_VERSION:
            raise DeserializationError(
                f"posterior-summary version {doc.get('version')} is not supported "
                f"(this build reads version {SUMMARY_VERSION})")
        try:
            mean = np.array(doc["mean"], dtype=float)
            d = mean.size
            kde = doc.get("kde")
            pts = bw = None
            if kde is not None:
                bw = np.array(kde["bandwidth"], dtype=float)
                pts = np.array(kde["points"], dtype=float).reshape(int(kde["n_points"]), d)
            return cls(doc["model_kind"], int(doc["m"]), mean,
                       np.array(doc["covariance"], dtype=float).reshape(d, d),
                       int(doc["n_draws"]), pts, bw, bool(doc.get("use_kde", False)),
                       dict(doc.get("metadata", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise DeserializationError(f"malformed posterior summary ({exc})") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "PosteriorSummary":
        try:
            doc = json.loads(Path(path).read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise DeserializationError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc)


def summarize_phi_draws(kind: str, m: int, phi, kde: bool = False, kde_points: int = 500,
                        rng=None, metadata=None) -> PosteriorSummary:
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    n, d = phi.shape
    if n < MIN_SUMMARY_DRAWS:
        raise StateError(f"posterior summary needs at least {MIN_SUMMARY_DRAWS} draws, got {n}")
    mean = phi.mean(axis=0)
    cov = np.cov(phi, rowvar=False).reshape(d, d)
    cov = cov + 1e-10 * max(1.0, float(np.trace(cov)) / d) * np.eye(d)
    pts = bw = None
    if kde:
        rng = np.random.default_rng(0) if rng is None else rng
        k = min(kde_points, n)
        pts = phi[np.sort(rng.choice(n, size=k, replace=False))]
        # Scott's rule on each coordinate
        bw = np.sqrt(np.diag(cov)) * k ** (-1.0 / (d + 4))
    return PosteriorSummary(kind, m, mean, cov, n, pts, bw, kde, dict(metadata or {}))


def build_posterior_summary(chain, kde: bool = False, kde_points: int = 500) -> PosteriorSummary:
    """Gaussian approximation of a chain's Omega draws in unconstrained space."""
    meta = {"source": "rw_metropolis", "n_iterations": chain.config.get("n_iterations")}
    return summarize_phi_draws(chain.kind, chain.m, chain.phi, kde=kde, kde_points=kde_points,
                               metadata=meta)


# --- priors on the mixture weights --------------------------------------------

@dataclass
class AlphaPrior:
    """Prior on mixture weights: ``uniform``, ``beta`` (a, b) or ``dirichlet``."""

    kind: str = "uniform"
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("uniform", "beta", "dirichlet"):
            raise ConfigurationError(f"unknown alpha prior {self.kind!r}")
        self.params = tuple(float(v) for v in self.params)
        if self.kind == "beta" and (len(self.params) != 2 or min(self.params) <= 0):
            raise ConfigurationError("beta prior needs two positive parameters")
        if self.kind == "dirichlet" and (len(self.params) < 2 or min(self.params) <= 0):
            raise ConfigurationError("dirichlet prior needs a positive concentration vector")
        if self.kind == "uniform" and self.params:
            raise ConfigurationError("uniform prior takes no parameters")

    @property
    def n_components(self) -> int | None:
        return len(self.params) if self.kind == "dirichlet" else 2

    def concentration(self, n_components: int) -> np.ndarray:
        if self.kind == "uniform":
            if n_components != 2:
                return np.ones(n_components)
            return np.ones(2)
        if self.kind == "beta":
            if n_components != 2:
                raise ShapeError("beta prior only applies to two components")
            return np.array(self.params)
        if len(self.params) != n_components:
            raise ShapeError(f"dirichlet has {len(self.params)} components, mixture has {n_components}")
        return np.array(self.params)

    def logpdf(self, w) -> float:
        """Density of the weight vector w.r.t. Lebesgue measure on its first ``l-1`` entries."""
        w = np.asarray(w, dtype=float)
        a = self.concentration(len(w))
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(a == 1.0, 0.0, (a - 1.0) * np.log(w))
        return float(special.gammaln(a.sum()) - special.gammaln(a).sum() + terms.sum())

    def moments(self, n_components: int = 2):
        """Prior mean vector and covariance matrix of the weights."""
        a = self.concentration(n_components)
        a0 = a.sum()
        mean = a / a0
        cov = (np.diag(mean) - np.outer(mean, mean)) / (a0 + 1.0)
        return mean, cov

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}


def _check_simplex(w, tol=1e-12) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if np.any(w < -tol) or abs(w.sum() - 1.0) > tol:
        raise DomainError(f"weights {w} are not on the simplex")
    return np.clip(w, 0.0, 1.0)


def as_weights(weights, n_components: int) -> np.ndarray:
    """Accept a scalar alpha (two components) or a full weight vector."""
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    if w.size == 1 and n_components == 2:
        a = float(w[0])
        if not (-1e-12 <= a <= 1 + 1e-12):
            raise DomainError(f"alpha={a} outside [0, 1]")
        w = np.array([a, 1.0 - a])
    if w.size != n_components:
        raise ShapeError(f"expected {n_components} weights, got {w.size}")
    return _check_simplex(w)


@dataclass
class OnlinePrior:
    """Summaries of previous targets, the uninformed base prior, and pi(alpha).

    ``base`` is normally a :class:`PriorSpec`; a :class:`PosteriorSummary` is
    also accepted.
    """

    components: list
    base: object
    alpha_prior: AlphaPrior = field(default_factory=AlphaPrior)

    def __post_init__(self):
        if not self.components:
            raise ConfigurationError("online prior needs at least one posterior summary")
        kinds = {(c.kind, c.m) for c in self.components}
        if len(kinds) != 1:
            raise ConfigurationError("all summaries must share model kind and m")
        self.alpha_prior.concentration(self.n_components)

    @property
    def kind(self) -> str:
        return self.components[0].kind

    @property
    def m(self) -> int:
        return self.components[0].m

    @property
    def n_components(self) -> int:
        return len(self.components) + 1


def log_sum_exp(a) -> float:
    """Log of a sum of exponentials for short vectors (cheaper than scipy's for a few terms)."""
    a = np.asarray(a, dtype=float)
    top = a.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(a - top).sum()))


def base_log_density(base, params, phi=None, param: Parameterization | None = None) -> float:
    """log pi(Omega) for a PriorSpec or a PosteriorSummary used as a prior."""
    if isinstance(base, PriorSpec):
        return log_prior(params, base)
    if isinstance(base, PosteriorSummary):
        if phi is None:
            phi = base.param.to_vector(params)
        return base.logpdf_omega(phi)
    raise ConfigurationError(f"unsupported prior type {type(base).__name__}")


def online_log_prior(omega, weights, prior: OnlinePrior, phi=None) -> float:
    """log pi(w) + log[sum_k w_k p_k(Omega) + w_base pi(Omega)] (log-sum-exp)."""
    w = as_weights(weights, prior.n_components)
    param = prior.components[0].param
    if phi is None:
        phi = param.to_vector(omega)
    logs = [c.logpdf_omega(phi) for c in prior.components]
    logs.append(base_log_density(prior.base, omega, phi, param))
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    return prior.alpha_prior.logpdf(w) + log_sum_exp(np.asarray(logs) + lw)


# --- weight transforms used by the sampler ------------------------------------

def weights_from_logits(eta) -> np.ndarray:
    """Additive-logistic map: ``l-1`` free logits, the base weight's logit fixed at 0."""
    z = np.append(np.asarray(eta, dtype=float), 0.0)
    return np.exp(z - log_sum_exp(z))


def logits_from_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.log(w[:-1]) - np.log(w[-1])


def logit_log_jacobian(w) -> float:
    """log |dw_{1..l-1} / d eta| = sum_k log w_k over all l weights."""
    return float(np.sum(np.log(w)))


# --- analytic posterior means of the weights ----------------------------------

def analytic_alpha_mean(k1: float, k2: float, prior: AlphaPrior | None = None) -> float:
    """Posterior mean of alpha given the marginal likelihoods ``k1`` (summary) and ``k2`` (base)."""
    prior = AlphaPrior() if prior is None else prior
    if k1 < 0 or k2 < 0:
        raise DomainError("k1 and k2 must be nonnegative")
    if k1 == 0 and k2 == 0:
        raise DomainError("k1 and k2 cannot both be zero")
    a, b = (float(v) for v in prior.concentration(2))
    # scale-free, so normalise to keep tiny or huge k away from 0/0 and overflow
    top = max(k1, k2)
    k1, k2 = k1 / top, k2 / top
    return a * (k1 * (a + 1.0) + k2 * b) / ((a + b + 1.0) * (k1 * a + k2 * b))


def analytic_alpha_mean_multi(k, prior: AlphaPrior) -> np.ndarray:
    """Posterior means of all weights; ``k[-1]`` belongs to the base prior.

    For ``j < l``::

        E(a_j) = c [ k_l E_j + (k_j - k_l)(E_j^2 + V_j)
                     + sum_{i != j, i < l} (k_i - k_l)(C_ij + E_i E_j) ]

    with ``c = 1 / (k_l + sum_{i<l} (k_i - k_l) E_i)``; the base weight is
    ``1 - sum_{j<l} E(a_j)``.
    """
    k = np.asarray(k, dtype=float)
    if k.ndim != 1 or k.size < 2:
        raise ShapeError("k must be a vector with at least two entries")
    if np.any(k < 0) or not np.any(k > 0):
        raise DomainError("k must be nonnegative and not all zero")
    k = k / k.max()
    E, C = prior.moments(k.size)
    l = k.size - 1
    kl = k[l]
    c = 1.0 / (kl + np.sum((k[:l] - kl) * E[:l]))
    means = np.empty(k.size)
    for j in range(l):
        s = kl * E[j] + (k[j] - kl) * (E[j] ** 2 + C[j, j])
        for i in range(l):
            if i != j:
                s += (k[i] - kl) * (C[i, j] + E[i] * E[j])
        means[j] = c * s
    means[l] = 1.0 - means[:l].sum()
    return means


def fit_online(model_kind, data_T2, source_model, online_prior: OnlinePrior, config, rng=None,
               prior: PriorSpec | None = None, **kwargs):
    """Sample ``(Omega, B, alpha)`` for a new target under the mixture prior."""
    from .samplers import rw_metropolis

    if online_prior.kind != model_kind:
        raise ConfigurationError(f"summaries are for {online_prior.kind}, fit requested {model_kind}")
    return rw_metropolis(model_kind, data_T2, source_model, prior, online_prior, config, rng, **kwargs)


__all__ = [
    "PosteriorSummary", "AlphaPrior", "OnlinePrior", "build_posterior_summary",
    "summarize_phi_draws", "online_log_prior", "base_log_density", "analytic_alpha_mean",
    "analytic_alpha_mean_multi", "fit_online", "weights_from_logits", "logits_from_weights",
    "logit_log_jacobian",
]
