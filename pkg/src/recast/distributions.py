"""Densities, distribution functions and samplers used by the RECaST models.

All samplers take an explicit :class:`numpy.random.Generator`; nothing here
touches global random state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ._linalg import PDFactor, as_square, cholesky
from .errors import DomainError, InvalidParameterError, ShapeError

LOG_PI = np.log(np.pi)
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class CauchyParams:
    """Location ``delta`` and scale ``gamma`` of a univariate Cauchy law.

    ``gamma == 0`` is accepted as a point mass at ``delta``; it exists for
    canonical-parameter checks and is rejected by every density function.
    """

    delta: float
    gamma: float

    def __post_init__(self):
        if not np.isfinite(self.delta) or not np.isfinite(self.gamma) or self.gamma < 0:
            raise InvalidParameterError(
                f"Cauchy parameters must be finite with gamma >= 0, got "
                f"delta={self.delta}, gamma={self.gamma}")

    @property
    def is_degenerate(self) -> bool:
        return self.gamma == 0


@dataclass(frozen=True)
class MvCauchyParams:
    delta: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        Gamma = as_square(self.Gamma, "Gamma")
        if Gamma.shape[0] != delta.shape[0]:
            raise ShapeError(f"delta has length {delta.shape[0]} but Gamma is {Gamma.shape}")
        cholesky(Gamma, "Gamma")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "Gamma", Gamma)

    @property
    def m(self) -> int:
        return self.delta.shape[0]


def _check_scale(gamma):
    gamma = np.asarray(gamma, dtype=float)
    if np.any(~(gamma > 0)):
        raise InvalidParameterError(f"Cauchy scale must be positive, got {gamma}")
    return gamma


def _unpack(p, delta, gamma):
    if p is not None:
        delta, gamma = p.delta, p.gamma
    return np.asarray(delta, dtype=float), _check_scale(gamma)


# --- standard normal ---------------------------------------------------------

def std_normal_cdf(x):
    return special.ndtr(x)


def std_normal_quantile(q):
    q = np.asarray(q, dtype=float)
    if np.any(~((q > 0) & (q < 1))):
        raise DomainError("standard normal quantile requires 0 < q < 1")
    out = special.ndtri(q)
    return out if out.ndim else float(out)


# --- univariate Cauchy -------------------------------------------------------

def cauchy_logpdf(x, p: CauchyParams | None = None, *, delta=None, gamma=None):
    delta, gamma = _unpack(p, delta, gamma)
    t = np.abs((np.asarray(x, dtype=float) - delta) / gamma)
    # log(1 + t^2) without overflowing t^2 in the far tails
    big = t > 1.0
    tb = np.where(big, t, 1.0)
    ts = np.minimum(t, 1.0)
    tail = 2.0 * np.log(tb) + np.log1p((1.0 / tb) ** 2)
    return -LOG_PI - np.log(gamma) - np.where(big, tail, np.log1p(ts * ts))


def cauchy_cdf(x, p: CauchyParams | None = None, *, delta=None, gamma=None):
    delta, gamma = _unpack(p, delta, gamma)
    t = (np.asarray(x, dtype=float) - delta) / gamma
    # arctan2 keeps full relative precision in the far left tail
    out = np.where(t < 0, np.arctan2(1.0, -t) / np.pi, 0.5 + np.arctan(t) / np.pi)
    return out if out.ndim else float(out)


def cauchy_quantile(q, p: CauchyParams | None = None, *, delta=None, gamma=None):
    delta, gamma = _unpack(p, delta, gamma)
    q = np.asarray(q, dtype=float)
    if np.any(~((q > 0) & (q < 1))):
        raise DomainError("Cauchy quantile requires 0 < q < 1")
    # cot(pi q) is accurate near both ends, tan(pi (q - 1/2)) is not
    lo = q < 0.5
    tail = np.where(lo, q, 1.0 - q)
    mag = 1.0 / np.tan(np.pi * tail)
    t = np.where(lo, -mag, mag)
    t = np.where(q == 0.5, 0.0, t)
    out = delta + gamma * t
    return out if out.ndim else float(out)


CLAMP_EPS = 1e-14


def cauchy_to_normal_scores(x, delta, gamma, eps=CLAMP_EPS):
    """``Phi^{-1}(F(x))`` for Cauchy(delta, gamma), computed through the tail.

    Returns ``(z, n_clamped)``; tail probabilities below ``eps`` are clamped.
    """
    t = (np.asarray(x, dtype=float) - delta) / gamma
    tail = np.arctan2(1.0, np.abs(t)) / np.pi
    clamped = tail < eps
    n_clamped = int(np.count_nonzero(clamped))
    if n_clamped:
        tail = np.maximum(tail, eps)
    z = -special.ndtri(tail)
    return np.where(t < 0, -z, z), n_clamped


def normal_scores_to_cauchy(z, delta, gamma):
    """Cauchy(delta, gamma) quantile of ``Phi(z)``, accurate for large ``|z|``."""
    z = np.asarray(z, dtype=float)
    tail = special.ndtr(-np.abs(z))
    t = 1.0 / np.tan(np.pi * tail)
    return delta + gamma * np.where(z < 0, -t, t)


def cauchy_sample(p: CauchyParams, rng, size=None):
    _check_scale(p.gamma)
    return p.delta + p.gamma * rng.standard_cauchy(size)


# --- multivariate t / Cauchy --------------------------------------------------

def mv_t_logpdf(x, loc, shape, df):
    """Multivariate Student-t log-density; ``x`` may hold one point per row."""
    fac = shape if isinstance(shape, PDFactor) else PDFactor(shape, name="shape")
    x = np.asarray(x, dtype=float)
    loc = np.asarray(loc, dtype=float)
    m = fac.m
    if x.shape[-1] != m or loc.shape[-1] != m:
        raise ShapeError(f"point of dimension {x.shape[-1]} vs scale of dimension {m}")
    q = fac.quad(x - loc)
    const = (special.gammaln(0.5 * (df + m)) - special.gammaln(0.5 * df)
             - 0.5 * m * np.log(df * np.pi) - 0.5 * fac.logdet)
    out = const - 0.5 * (df + m) * np.log1p(q / df)
    return out if np.ndim(out) else float(out)


def mv_cauchy_logpdf(x, p: MvCauchyParams):
    return mv_t_logpdf(x, p.delta, p.Gamma, 1.0)


def mv_cauchy_sample(p: MvCauchyParams, rng, size=None):
    """Scale-mixture draw: ``delta + L z / sqrt(w)`` with ``w ~ Gamma(1/2, rate 1/2)``."""
    L = cholesky(p.Gamma, "Gamma")
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    z = rng.standard_normal(shape + (p.m,))
    w = rng.chisquare(1.0, size=shape)
    return p.delta + (z @ L.T) / np.sqrt(w)[..., None]


# --- multivariate normal ----------------------------------------------------

def mv_normal_logpdf(x, mean, cov):
    fac = cov if isinstance(cov, PDFactor) else PDFactor(cov, name="cov")
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if x.shape[-1] != fac.m or mean.shape[-1] != fac.m:
        raise ShapeError(f"dimension mismatch: x {x.shape}, mean {mean.shape}, cov {fac.m}")
    out = -0.5 * (fac.m * LOG_2PI + fac.logdet + fac.quad(x - mean))
    return out if np.ndim(out) else float(out)


def mv_normal_sample(mean, cov, rng, size=None):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = cholesky(cov, "cov")
    if L.shape[0] != mean.shape[0]:
        raise ShapeError("mean and cov are not conformable")
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    z = rng.standard_normal(shape + (mean.shape[0],))
    return mean + z @ L.T


# --- inverse gamma / inverse Wishart -----------------------------------------

def inverse_gamma_logpdf(x, a, b):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        return -np.inf
    return a * np.log(b) - special.gammaln(a) - (a + 1.0) * np.log(x) - b / x


def _iw_check(Psi, nu):
    Psi = as_square(Psi, "Psi")
    m = Psi.shape[0]
    if not nu > m - 1:
        raise InvalidParameterError(f"inverse-Wishart needs nu > m - 1 = {m - 1}, got {nu}")
    return Psi, m


def inverse_wishart_logpdf(W, Psi, nu):
    """log IW(W | Psi, nu), mean ``Psi / (nu - m - 1)``."""
    Psi, m = _iw_check(Psi, nu)
    fw = W if isinstance(W, PDFactor) else PDFactor(W, name="W")
    if fw.m != m:
        raise ShapeError("W and Psi are not conformable")
    fpsi = PDFactor(Psi, name="Psi")
    return float(0.5 * nu * fpsi.logdet - 0.5 * nu * m * np.log(2.0)
                 - special.multigammaln(0.5 * nu, m)
                 - 0.5 * (nu + m + 1.0) * fw.logdet - 0.5 * fw.trace_inv(Psi))


def inverse_wishart_sample(Psi, nu, rng, size=None):
    """Bartlett construction; every draw is PD by construction."""
    Psi, m = _iw_check(Psi, nu)
    C = cholesky(np.linalg.inv(Psi), "Psi^-1")
    n = 1 if size is None else int(size)
    A = np.zeros((n, m, m))
    A[:, np.arange(m), np.arange(m)] = np.sqrt(rng.chisquare(nu - np.arange(m), size=(n, m)))
    rows, cols = np.tril_indices(m, -1)
    A[:, rows, cols] = rng.standard_normal((n, rows.size))
    T = C @ A  # Wishart(Psi^-1, nu) draw is T T^T
    Tinv = np.linalg.inv(T)
    out = np.swapaxes(Tinv, -1, -2) @ Tinv
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return out[0] if size is None else out


# --- Gaussian copula ----------------------------------------------------------

def check_correlation(R, tol=1e-12) -> np.ndarray:
    R = as_square(R, "R")
    if np.max(np.abs(np.diag(R) - 1.0)) > tol:
        raise InvalidParameterError("correlation matrix must have unit diagonal")
    cholesky(R, "R")
    return R


def gaussian_copula_logdensity_z(z, R):
    """Copula log-density from normal scores ``z = Phi^{-1}(u)``."""
    fac = R if isinstance(R, PDFactor) else PDFactor(check_correlation(R), name="R")
    z = np.asarray(z, dtype=float)
    out = -0.5 * fac.logdet - 0.5 * (fac.quad(z) - np.sum(z * z, axis=-1))
    return out if np.ndim(out) else float(out)


def gaussian_copula_logdensity(u, R):
    """log c(u | R) for a Gaussian copula; ``u`` may hold one point per row."""
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("copula arguments must lie strictly inside (0, 1)")
    R = check_correlation(R)
    if u.shape[-1] != R.shape[0]:
        raise ShapeError("u and R are not conformable")
    return gaussian_copula_logdensity_z(special.ndtri(u), R)


__all__ = [
    "CauchyParams", "MvCauchyParams", "std_normal_cdf", "std_normal_quantile",
    "cauchy_logpdf", "cauchy_cdf", "cauchy_quantile", "cauchy_sample",
    "cauchy_to_normal_scores", "normal_scores_to_cauchy", "mv_t_logpdf",
    "mv_cauchy_logpdf", "mv_cauchy_sample", "mv_normal_logpdf", "mv_normal_sample",
    "inverse_gamma_logpdf", "inverse_wishart_logpdf", "inverse_wishart_sample",
    "check_correlation", "gaussian_copula_logdensity", "gaussian_copula_logdensity_z",
]
