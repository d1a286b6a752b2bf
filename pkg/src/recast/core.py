"""RECaST model definitions: parameter sets, priors, likelihoods and log-joints.

Two random-effect families are supported for the per-observation calibration
vector ``beta_i`` (one ratio per outcome):

* ``mv_cauchy`` -- ``beta_i ~ Cauchy_m(delta, Gamma)``, parameters
  ``{delta, Gamma, Sigma}``;
* ``copula`` -- Cauchy(delta_j, gamma_j) marginals joined by a Gaussian copula
  with correlation ``R``, parameters ``{delta, gamma, R, Sigma}``.

In both, ``y_i = diag(beta_i) f_i + U_i`` with ``U_i ~ N_m(0, Sigma)`` and
``f_i`` the source-model prediction at ``x_i``. The latent rows ``B`` are kept
as explicit variables, so every log-joint here is the augmented one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

from . import _linalg as la
from ._linalg import PDFactor
from .distributions import (LOG_2PI, LOG_PI, CauchyParams, cauchy_cdf, cauchy_logpdf,
                            cauchy_quantile, cauchy_to_normal_scores, check_correlation,
                            gaussian_copula_logdensity_z)
from .errors import DomainError, InvalidParameterError, ShapeError

MODEL_KINDS = ("mv_cauchy", "copula")


def check_kind(kind: str) -> str:
    if kind not in MODEL_KINDS:
        raise InvalidParameterError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    return kind


# --- canonical parameters -----------------------------------------------------

def canonical_beta_params(theta_S, theta_T) -> CauchyParams:
    """Cauchy law of ``x'theta_T / x'theta_S`` for ``x ~ N(0, I)``."""
    theta_S = np.asarray(theta_S, dtype=float)
    theta_T = np.asarray(theta_T, dtype=float)
    if theta_S.shape != theta_T.shape:
        raise ShapeError(f"theta_S {theta_S.shape} and theta_T {theta_T.shape} differ")
    ss = float(theta_S @ theta_S)
    if ss == 0.0:
        raise ZeroDivisionError("theta_S must be nonzero")
    ts = float(theta_T @ theta_S)
    tt = float(theta_T @ theta_T)
    radicand = ss * tt - ts * ts
    scale = max(1.0, ss * tt)
    if radicand < -1e-12 * scale:
        raise ArithmeticError(f"negative radicand {radicand}")
    return CauchyParams(ts / ss, np.sqrt(max(radicand, 0.0)) / ss)


# --- parameter sets -----------------------------------------------------------

@dataclass(frozen=True)
class MvCauchyParamsSet:
    delta: np.ndarray
    Gamma: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", np.atleast_1d(np.asarray(self.delta, dtype=float)))
        object.__setattr__(self, "Gamma", la.as_square(self.Gamma, "Gamma"))
        object.__setattr__(self, "Sigma", la.as_square(self.Sigma, "Sigma"))
        m = self.delta.shape[0]
        if self.Gamma.shape[0] != m or self.Sigma.shape[0] != m:
            raise ShapeError("delta, Gamma and Sigma must share dimension m")

    kind = "mv_cauchy"

    @property
    def m(self) -> int:
        return self.delta.shape[0]

    @cached_property
    def Gamma_f(self) -> PDFactor:
        return PDFactor(self.Gamma, name="Gamma")

    @cached_property
    def Sigma_f(self) -> PDFactor:
        return PDFactor(self.Sigma, name="Sigma")


@dataclass(frozen=True)
class CopulaParamsSet:
    """Copula-model parameters; ``R_raw`` is the covariance ``R`` was normalised from.

    The inverse-Wishart prior is evaluated on ``R_raw`` when present.
    """

    delta: np.ndarray
    gamma: np.ndarray
    R: np.ndarray
    Sigma: np.ndarray
    R_raw: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "delta", np.atleast_1d(np.asarray(self.delta, dtype=float)))
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))
        object.__setattr__(self, "R", la.as_square(self.R, "R"))
        object.__setattr__(self, "Sigma", la.as_square(self.Sigma, "Sigma"))
        m = self.delta.shape[0]
        if self.gamma.shape[0] != m or self.R.shape[0] != m or self.Sigma.shape[0] != m:
            raise ShapeError("delta, gamma, R and Sigma must share dimension m")
        if np.any(~(self.gamma > 0)):
            raise InvalidParameterError("marginal scales gamma must be positive")
        if np.max(np.abs(np.diag(self.R) - 1.0)) > 1e-12:
            raise InvalidParameterError("R must have unit diagonal")

    kind = "copula"

    @classmethod
    def from_raw(cls, delta, gamma, R_raw, Sigma) -> "CopulaParamsSet":
        R_raw = la.as_square(R_raw, "R_raw")
        return cls(delta, gamma, la.cov_to_corr(R_raw), Sigma, R_raw)

    @property
    def m(self) -> int:
        return self.delta.shape[0]

    @cached_property
    def R_f(self) -> PDFactor:
        return PDFactor(self.R, name="R")

    @cached_property
    def Sigma_f(self) -> PDFactor:
        return PDFactor(self.Sigma, name="Sigma")

    @cached_property
    def R_raw_f(self) -> PDFactor:
        return PDFactor(self.R if self.R_raw is None else self.R_raw, name="R_raw")


def _vec(v, m, default):
    if v is None:
        return np.full(m, float(default))
    v = np.asarray(v, dtype=float)
    return np.full(m, float(v)) if v.ndim == 0 else v.copy()


def _mat(M, m, default_scale):
    if M is None:
        return default_scale * np.eye(m)
    M = np.asarray(M, dtype=float)
    return M * np.eye(m) if M.ndim == 0 else M.copy()


@dataclass
class PriorSpec:
    """Hyperparameters for both model variants.

    Defaults are diffuse artifact choices: ``Sigma_delta = 25 I``,
    ``mu_delta = 1``, ``sigma2_delta = 25``, all inverse-Wishart scales ``I``
    with ``nu = m + 2``, and ``IG(2, 1)`` on each marginal Cauchy scale.
    """

    m: int
    delta_mean: np.ndarray = None
    Sigma_delta: np.ndarray = None
    mu_delta: np.ndarray = None
    sigma2_delta: np.ndarray = None
    Psi_Gamma: np.ndarray = None
    nu_Gamma: float = None
    a_gamma: np.ndarray = None
    b_gamma: np.ndarray = None
    Psi_R: np.ndarray = None
    nu_R: float = None
    Psi_Sigma: np.ndarray = None
    nu_Sigma: float = None
    _consts: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        m = self.m
        self.delta_mean = _vec(self.delta_mean, m, 1.0)
        self.Sigma_delta = _mat(self.Sigma_delta, m, 25.0)
        self.mu_delta = _vec(self.mu_delta, m, 1.0)
        self.sigma2_delta = _vec(self.sigma2_delta, m, 25.0)
        self.Psi_Gamma = _mat(self.Psi_Gamma, m, 1.0)
        self.a_gamma = _vec(self.a_gamma, m, 2.0)
        self.b_gamma = _vec(self.b_gamma, m, 1.0)
        self.Psi_R = _mat(self.Psi_R, m, 1.0)
        self.Psi_Sigma = _mat(self.Psi_Sigma, m, 1.0)
        for name in ("nu_Gamma", "nu_R", "nu_Sigma"):
            if getattr(self, name) is None:
                setattr(self, name, float(m + 2))
        self.validate()

    def validate(self):
        m = self.m
        for name in ("delta_mean", "mu_delta", "sigma2_delta", "a_gamma", "b_gamma"):
            if getattr(self, name).shape != (m,):
                raise ShapeError(f"{name} must have length {m}")
        for name in ("Sigma_delta", "Psi_Gamma", "Psi_R", "Psi_Sigma"):
            M = getattr(self, name)
            if M.shape != (m, m):
                raise ShapeError(f"{name} must be {m}x{m}")
            la.cholesky(M, name)
        for name in ("nu_Gamma", "nu_R", "nu_Sigma"):
            if not getattr(self, name) > m - 1:
                raise InvalidParameterError(f"{name} must exceed m - 1")
        if np.any(self.sigma2_delta <= 0) or np.any(self.a_gamma <= 0) or np.any(self.b_gamma <= 0):
            raise InvalidParameterError("scalar prior scales must be positive")
        self._consts = None

    def _iw_const(self, which: str) -> float:
        if self._consts is None:
            self._consts = {}
        if which not in self._consts:
            Psi, nu = getattr(self, f"Psi_{which}"), getattr(self, f"nu_{which}")
            m = self.m
            self._consts[which] = (0.5 * nu * la.logdet_from_chol(la.cholesky(Psi))
                                   - 0.5 * nu * m * np.log(2.0) - special.multigammaln(0.5 * nu, m))
        return self._consts[which]

    def iw_logpdf(self, which: str, fac: PDFactor) -> float:
        Psi, nu = getattr(self, f"Psi_{which}"), getattr(self, f"nu_{which}")
        return (self._iw_const(which) - 0.5 * (nu + self.m + 1.0) * fac.logdet
                - 0.5 * fac.trace_inv(Psi))

    @cached_property
    def Sigma_delta_f(self) -> PDFactor:
        return PDFactor(self.Sigma_delta, name="Sigma_delta")

    def to_dict(self) -> dict:
        out = {"m": self.m}
        for k in ("delta_mean", "Sigma_delta", "mu_delta", "sigma2_delta", "Psi_Gamma",
                  "a_gamma", "b_gamma", "Psi_R", "Psi_Sigma"):
            out[k] = getattr(self, k).tolist()
        for k in ("nu_Gamma", "nu_R", "nu_Sigma"):
            out[k] = getattr(self, k)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        d = dict(d)
        m = int(d.pop("m"))
        return cls(m, **{k: v for k, v in d.items()})


# --- per-observation pieces ---------------------------------------------------

def _factor(M, name):
    return M if isinstance(M, PDFactor) else PDFactor(M, name=name)


def loglik_obs(y, beta, f_val, Sigma):
    """log N_m(y | diag(beta) f, Sigma); row-wise when given matrices."""
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    f_val = np.asarray(f_val, dtype=float)
    if not (y.shape == beta.shape == f_val.shape):
        raise ShapeError(f"shape mismatch: y {y.shape}, beta {beta.shape}, f {f_val.shape}")
    fac = _factor(Sigma, "Sigma")
    if y.shape[-1] != fac.m:
        raise ShapeError("outcome dimension does not match Sigma")
    out = -0.5 * (fac.m * LOG_2PI + fac.logdet + fac.quad(y - beta * f_val))
    return out if np.ndim(out) else float(out)


def mv_cauchy_effects_logdensity(B, params: MvCauchyParamsSet):
    B = np.asarray(B, dtype=float)
    m = params.m
    fac = params.Gamma_f
    q = fac.quad(B - params.delta)
    const = special.gammaln(0.5 * (1 + m)) - special.gammaln(0.5) - 0.5 * m * LOG_PI
    out = const - 0.5 * fac.logdet - 0.5 * (1 + m) * np.log1p(q)
    return out if np.ndim(out) else float(out)


def copula_effects_logdensity(beta, params: CopulaParamsSet, return_clamped: bool = False):
    """Cauchy marginals plus Gaussian-copula log-density, row-wise over ``beta``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape[-1] != params.m:
        raise ShapeError("beta dimension does not match the copula parameters")
    marg = np.sum(cauchy_logpdf(beta, delta=params.delta, gamma=params.gamma), axis=-1)
    if params.m == 1:
        out, n_clamped = marg, 0
    else:
        z, n_clamped = cauchy_to_normal_scores(beta, params.delta, params.gamma)
        out = marg + gaussian_copula_logdensity_z(z, params.R_f)
    out = out if np.ndim(out) else float(out)
    return (out, n_clamped) if return_clamped else out


def effects_logdensity(B, params):
    if params.kind == "mv_cauchy":
        return mv_cauchy_effects_logdensity(B, params)
    return copula_effects_logdensity(B, params)


def log_prior(params, prior: PriorSpec) -> float:
    """log pi(Omega) under the canonical product prior of each variant."""
    if params.m != prior.m:
        raise ShapeError("prior and parameters disagree on m")
    lp = prior.iw_logpdf("Sigma", params.Sigma_f)
    if params.kind == "mv_cauchy":
        fd = prior.Sigma_delta_f
        d = params.delta - prior.delta_mean
        lp += -0.5 * (prior.m * LOG_2PI + fd.logdet + float(fd.quad(d)))
        lp += prior.iw_logpdf("Gamma", params.Gamma_f)
    else:
        d = params.delta - prior.mu_delta
        lp += float(np.sum(-0.5 * (LOG_2PI + np.log(prior.sigma2_delta)) - 0.5 * d * d / prior.sigma2_delta))
        g = params.gamma
        lp += float(np.sum(prior.a_gamma * np.log(prior.b_gamma) - special.gammaln(prior.a_gamma)
                           - (prior.a_gamma + 1.0) * np.log(g) - prior.b_gamma / g))
        lp += prior.iw_logpdf("R", params.R_raw_f)
    return float(lp)


def _outcomes(data) -> np.ndarray:
    Y = getattr(data, "Y", data)
    Y = np.asarray(Y, dtype=float)
    return Y.reshape(-1, 1) if Y.ndim == 1 else Y


def _check_joint_shapes(Y, B, f_vals, m):
    if Y.shape[0] == 0:
        return
    if B.shape != Y.shape or f_vals.shape != Y.shape or Y.shape[1] != m:
        raise ShapeError(f"inconsistent shapes: Y {Y.shape}, B {B.shape}, f {f_vals.shape}, m={m}")


def _log_joint(params, B, data, f_vals, prior, log_prior_fn=None):
    Y = _outcomes(data)
    B = np.asarray(B, dtype=float).reshape(-1, params.m) if np.size(B) else np.zeros((0, params.m))
    f_vals = np.asarray(f_vals, dtype=float).reshape(-1, params.m) if np.size(f_vals) else np.zeros((0, params.m))
    _check_joint_shapes(Y, B, f_vals, params.m)
    lp = log_prior(params, prior) if log_prior_fn is None else log_prior_fn(params)
    if Y.shape[0] == 0:
        return lp
    return lp + float(np.sum(loglik_obs(Y, B, f_vals, params.Sigma_f))
                      + np.sum(effects_logdensity(B, params)))


def mv_cauchy_log_joint(params: MvCauchyParamsSet, B, data, f_vals, prior: PriorSpec) -> float:
    """log pi(delta, Gamma, Sigma) + sum_i [log N(y_i | ...) + log Cauchy_m(beta_i)]."""
    if params.kind != "mv_cauchy":
        raise InvalidParameterError("expected MvCauchyParamsSet")
    return _log_joint(params, B, data, f_vals, prior)


def copula_log_joint(params: CopulaParamsSet, B, data, f_vals, prior: PriorSpec) -> float:
    if params.kind != "copula":
        raise InvalidParameterError("expected CopulaParamsSet")
    return _log_joint(params, B, data, f_vals, prior)


def copula_loglik_u_space(u_rows, params: CopulaParamsSet, data, f_vals) -> float:
    """Sum over rows of log N(y_i | diag(F^{-1}(u_i)) f_i, Sigma) + log c(u_i | R).

    This is the integrand after substituting ``u = F(beta)``; the marginal
    Cauchy densities cancel against the change-of-variables Jacobian.
    """
    u = np.atleast_2d(np.asarray(u_rows, dtype=float))
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("u-space arguments must lie strictly inside (0, 1)")
    Y = _outcomes(data)
    f_vals = np.asarray(f_vals, dtype=float).reshape(Y.shape)
    if u.shape != Y.shape:
        raise ShapeError("u_rows must match the outcome matrix")
    beta = cauchy_quantile(u, delta=params.delta, gamma=params.gamma)
    z = special.ndtri(u)
    cop = gaussian_copula_logdensity_z(z, params.R_f) if params.m > 1 else np.zeros(u.shape[0])
    return float(np.sum(loglik_obs(Y, beta, f_vals, params.Sigma_f) + cop))


def beta_to_u(B, params: CopulaParamsSet) -> np.ndarray:
    return cauchy_cdf(B, delta=params.delta, gamma=params.gamma)


# --- unconstrained parameterisation -------------------------------------------

class Parameterization:
    """Map between a parameter set and a flat unconstrained vector ``phi``.

    mv_cauchy: ``[delta, logchol(Gamma), logchol(Sigma)]``;
    copula: ``[delta, log gamma, logchol(R_raw), logchol(Sigma)]``.
    """

    def __init__(self, kind: str, m: int):
        self.kind = check_kind(kind)
        self.m = int(m)
        t = la.n_tril(m)
        sizes = [("delta", m), ("Gamma", t), ("Sigma", t)] if kind == "mv_cauchy" else \
            [("delta", m), ("log_gamma", m), ("R", t), ("Sigma", t)]
        self.blocks = {}
        start = 0
        for name, size in sizes:
            self.blocks[name] = slice(start, start + size)
            start += size
        self.dim = start

    def descriptor(self) -> dict:
        return {"kind": self.kind, "m": self.m,
                "blocks": {k: [s.start, s.stop] for k, s in self.blocks.items()},
                "transforms": {"delta": "identity", "log_gamma": "log", "Gamma": "log-cholesky",
                               "R": "log-cholesky of pre-normalisation covariance",
                               "Sigma": "log-cholesky"}}

    def to_params(self, phi):
        phi = np.asarray(phi, dtype=float)
        m, b = self.m, self.blocks
        LS = la.logchol_to_chol(phi[b["Sigma"]], m)
        Sigma = LS @ LS.T
        if self.kind == "mv_cauchy":
            LG = la.logchol_to_chol(phi[b["Gamma"]], m)
            p = MvCauchyParamsSet(phi[b["delta"]], LG @ LG.T, Sigma)
            p.__dict__["Gamma_f"] = PDFactor(p.Gamma, L=LG)
        else:
            LR = la.logchol_to_chol(phi[b["R"]], m)
            W = LR @ LR.T
            R = la.cov_to_corr(W)
            p = CopulaParamsSet(phi[b["delta"]], np.exp(phi[b["log_gamma"]]), R, Sigma, W)
            p.__dict__["R_raw_f"] = PDFactor(W, L=LR)
            s = np.sqrt(np.diag(W))
            p.__dict__["R_f"] = PDFactor(R, L=LR / s[:, None])
        p.__dict__["Sigma_f"] = PDFactor(Sigma, L=LS)
        return p

    def to_vector(self, params) -> np.ndarray:
        if params.kind != self.kind or params.m != self.m:
            raise ShapeError("parameter set does not match this parameterisation")
        phi = np.empty(self.dim)
        b = self.blocks
        phi[b["delta"]] = params.delta
        phi[b["Sigma"]] = la.matrix_to_logchol(params.Sigma, "Sigma")
        if self.kind == "mv_cauchy":
            phi[b["Gamma"]] = la.matrix_to_logchol(params.Gamma, "Gamma")
        else:
            phi[b["log_gamma"]] = np.log(params.gamma)
            raw = params.R if params.R_raw is None else params.R_raw
            phi[b["R"]] = la.matrix_to_logchol(raw, "R_raw")
        return phi

    def log_jacobian(self, phi) -> float:
        """log |d Omega / d phi|."""
        phi = np.asarray(phi, dtype=float)
        m, b = self.m, self.blocks
        lj = la.logchol_log_jacobian(phi[b["Sigma"]], m)
        if self.kind == "mv_cauchy":
            lj += la.logchol_log_jacobian(phi[b["Gamma"]], m)
        else:
            lj += float(np.sum(phi[b["log_gamma"]]))
            lj += la.logchol_log_jacobian(phi[b["R"]], m)
        return lj

    def scalar_names(self) -> list[str]:
        names = []
        for block, sl in self.blocks.items():
            for k in range(sl.stop - sl.start):
                names.append(f"phi_{block}[{k}]")
        return names


def log_joint(params, B, data, f_vals, prior: PriorSpec) -> float:
    """Dispatch to the variant-specific augmented log-joint."""
    if params.kind == "mv_cauchy":
        return mv_cauchy_log_joint(params, B, data, f_vals, prior)
    return copula_log_joint(params, B, data, f_vals, prior)


def default_initial_params(kind: str, Y, F, jitter: float = 1e-6):
    """Moment-style starting point: per-outcome least-squares ratio for delta."""
    Y = _outcomes(Y)
    F = np.asarray(F, dtype=float).reshape(Y.shape)
    m = Y.shape[1]
    ff = np.sum(F * F, axis=0)
    delta = np.where(ff > 0, np.sum(Y * F, axis=0) / np.where(ff > 0, ff, 1.0), 1.0)
    resid = Y - delta * F
    if Y.shape[0] > m:
        Sigma = np.cov(resid, rowvar=False).reshape(m, m)
    else:
        Sigma = np.eye(m)
    Sigma = Sigma + (jitter + 1e-3 * np.trace(Sigma) / m) * np.eye(m)
    if not la.is_pd(Sigma):
        Sigma = np.eye(m)
    scale = 0.1 * np.maximum(np.abs(delta), 0.1)
    if kind == "mv_cauchy":
        return MvCauchyParamsSet(delta, np.diag(scale ** 2), Sigma)
    return CopulaParamsSet.from_raw(delta, scale, np.eye(m), Sigma)
