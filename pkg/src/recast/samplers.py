"""Posterior simulation for the RECaST models.

:func:`rw_metropolis` runs a blocked, adaptive random-walk Metropolis sampler
on the augmented posterior of ``(Omega, B[, weights])``. Covariance blocks
move on the log-Cholesky scale and the latent ``beta`` rows are updated in
parallel with one accept/reject decision per row.

:func:`gibbs_mv_cauchy_location` is an exact Gibbs sampler for the location
form of the multivariate Cauchy model (``y_i ~ N(mu, Sigma)`` with a
multivariate-t prior on ``mu``); it exists to validate the Metropolis code.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import _linalg as la
from .core import (Parameterization, PriorSpec, check_kind, default_initial_params,
                   effects_logdensity, loglik_obs)
from .distributions import cauchy_to_normal_scores, inverse_wishart_sample
from .errors import (ConfigurationError, DeserializationError, DiagnosticsError,
                     InvalidParameterError, ShapeError)
from .online import (OnlinePrior, PosteriorSummary, as_weights, base_log_density, log_sum_exp,
                     logit_log_jacobian, logits_from_weights, online_log_prior,
                     weights_from_logits)

log = logging.getLogger(__name__)

CHAIN_FORMAT = "recast-chain"
CHAIN_VERSION = 1
ROW_PROPOSAL_DF = 4.0
PILOT_INFLATION = 1.5


@dataclass
class SamplerConfig:
    n_iterations: int = 20000
    n_burnin: int = 10000
    thin: int = 2
    initial_scales: dict = field(default_factory=dict)
    adapt: bool = True
    target_accept: float = 0.30
    adapt_window: int = 100
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_iterations < 1 or self.n_burnin < 0 or self.thin < 1:
            raise ConfigurationError("need n_iterations >= 1, n_burnin >= 0 and thin >= 1")
        if self.n_burnin >= self.n_iterations:
            raise ConfigurationError(
                f"n_burnin ({self.n_burnin}) must be below n_iterations ({self.n_iterations})")
        if not 0 < self.target_accept < 1:
            raise ConfigurationError("target acceptance rate must lie in (0, 1)")
        if self.adapt_window < 1:
            raise ConfigurationError("adapt_window must be positive")
        for k, v in self.initial_scales.items():
            if not v > 0:
                raise ConfigurationError(f"initial scale for block {k!r} must be positive")

    @property
    def n_draws(self) -> int:
        return (self.n_iterations - self.n_burnin) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PosteriorChain:
    """Thinned draws of ``phi`` (unconstrained Omega), optional weights and latent rows."""

    kind: str
    m: int
    phi: np.ndarray
    weights: np.ndarray | None = None
    latent: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        check_kind(self.kind)
        self.param = Parameterization(self.kind, self.m)
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        if self.phi.shape[1] != self.param.dim:
            raise ShapeError(f"chain has {self.phi.shape[1]} columns, expected {self.param.dim}")
        self._params = None

    def __len__(self) -> int:
        return self.phi.shape[0]

    @property
    def alpha(self) -> np.ndarray | None:
        """Weight on the first summary component (the two-component alpha)."""
        return None if self.weights is None else self.weights[:, 0]

    def params(self, i: int):
        return self.param.to_params(self.phi[i])

    def all_params(self) -> list:
        if self._params is None:
            self._params = [self.param.to_params(v) for v in self.phi]
        return self._params

    def constrained(self) -> dict:
        """Stacked natural-scale arrays: delta, Sigma and Gamma or (gamma, R)."""
        ps = self.all_params()
        out = {"delta": np.array([p.delta for p in ps]), "Sigma": np.array([p.Sigma for p in ps])}
        if self.kind == "mv_cauchy":
            out["Gamma"] = np.array([p.Gamma for p in ps])
        else:
            out["gamma"] = np.array([p.gamma for p in ps])
            out["R"] = np.array([p.R for p in ps])
        if self.weights is not None:
            out["weights"] = self.weights
        return out

    def scalar_draws(self) -> tuple[list[str], np.ndarray]:
        names = self.param.scalar_names()
        cols = [self.phi]
        if self.weights is not None:
            names = names + [f"weight[{k}]" for k in range(self.weights.shape[1])]
            cols.append(self.weights)
        return names, np.hstack(cols)

    # --- persistence ---

    def save(self, path, fmt: str = "npz") -> list[Path]:
        """Write draws (``npz`` or ``csv``) plus a JSON diagnostics sidecar."""
        path = Path(path)
        meta = {"format": CHAIN_FORMAT, "version": CHAIN_VERSION, "model_kind": self.kind,
                "m": self.m, "transform": self.param.descriptor(), "n_draws": len(self),
                "n_weights": 0 if self.weights is None else int(self.weights.shape[1]),
                "config": self.config,
                # wall-clock time would break byte-identical artifacts
                "diagnostics": _jsonable({k: v for k, v in self.diagnostics.items()
                                          if k != "runtime_s"})}
        if fmt == "npz":
            data = {"phi": self.phi}
            if self.weights is not None:
                data["weights"] = self.weights
            if self.latent is not None:
                data["latent"] = self.latent
            draws = path.with_suffix(".npz")
            with open(draws, "wb") as fh:
                np.savez(fh, **data)
        elif fmt == "csv":
            names, X = self.scalar_draws()
            draws = path.with_suffix(".csv")
            header = ",".join(names)
            np.savetxt(draws, X, delimiter=",", header=header, comments="", fmt="%.17g")
        else:
            raise ConfigurationError(f"unknown chain format {fmt!r}")
        meta["draws_file"] = draws.name
        side = path.with_suffix(".json")
        side.write_text(json.dumps(meta, indent=1))
        return [draws, side]

    @classmethod
    def load(cls, path) -> "PosteriorChain":
        path = Path(path)
        side = path.with_suffix(".json")
        try:
            meta = json.loads(side.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DeserializationError(f"{side}: cannot read chain sidecar ({exc})") from None
        if meta.get("format") != CHAIN_FORMAT:
            raise DeserializationError(f"{side}: not a chain sidecar")
        if meta.get("version") != CHAIN_VERSION:
            raise DeserializationError(
                f"{side}: chain version {meta.get('version')} is not supported "
                f"(this build reads version {CHAIN_VERSION})")
        draws = side.parent / meta["draws_file"]
        weights = latent = None
        if draws.suffix == ".npz":
            with np.load(draws) as z:
                phi = z["phi"]
                weights = z["weights"] if "weights" in z else None
                latent = z["latent"] if "latent" in z else None
        else:
            X = np.atleast_2d(np.loadtxt(draws, delimiter=",", skiprows=1))
            k = int(meta["n_weights"])
            phi = X[:, :X.shape[1] - k]
            weights = X[:, X.shape[1] - k:] if k else None
        return cls(meta["model_kind"], int(meta["m"]), phi, weights, latent,
                   meta.get("diagnostics", {}), meta.get("config", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# --- random-walk Metropolis ---------------------------------------------------

class _State:
    """Current point and cached log-target pieces of the augmented posterior."""

    __slots__ = ("phi", "params", "eta", "w", "B", "prior", "eff", "lik", "lik_row")


class RWSampler:
    """Blocked adaptive random-walk Metropolis on the augmented posterior.

    ``row_index`` maps each observation to a latent row; the default gives
    one row per observation, ``zeros(n)`` shares one effect across all of
    them. ``likelihood=False`` drops the outcome model (prior-only runs).
    ``fixed`` pins blocks: keys ``delta``, ``Gamma``, ``gamma``, ``R``,
    ``Sigma`` (natural scale), ``B`` or ``weights``.
    """

    def __init__(self, kind, Y, F, prior=None, online_prior: OnlinePrior | None = None,
                 config: SamplerConfig | None = None, rng=None, *, likelihood=True,
                 row_index=None, fixed=None, init=None):
        self.kind = check_kind(kind)
        self.Y = np.asarray(Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        self.F = np.asarray(F, dtype=float).reshape(self.Y.shape)
        if self.Y.shape[0] == 0:
            raise ShapeError("target data must be nonempty")
        if not (np.all(np.isfinite(self.Y)) and np.all(np.isfinite(self.F))):
            raise ShapeError("outcomes and source predictions must be finite")
        self.n, self.m = self.Y.shape
        self.config = SamplerConfig() if config is None else config
        self.config.validate()
        self.rng = np.random.default_rng(self.config.seed) if rng is None else rng
        self.param = Parameterization(kind, self.m)
        self.online = online_prior
        if online_prior is not None:
            if (online_prior.kind, online_prior.m) != (kind, self.m):
                raise ConfigurationError("online prior does not match the model kind or m")
            if prior is not None:
                raise ConfigurationError("pass the base prior inside the online prior")
            self.prior = online_prior.base
        else:
            self.prior = PriorSpec(self.m) if prior is None else prior
        if isinstance(self.prior, PriorSpec) and self.prior.m != self.m:
            raise ShapeError(f"prior is for m={self.prior.m}, data have m={self.m}")
        if isinstance(self.prior, PosteriorSummary) and (self.prior.kind, self.prior.m) != (kind, self.m):
            raise ConfigurationError("summary prior does not match the model kind or m")
        self.likelihood = bool(likelihood)
        if row_index is None:
            self.row_index = np.arange(self.n)
        else:
            self.row_index = np.asarray(row_index, dtype=int)
            if self.row_index.shape != (self.n,) or self.row_index.min() < 0:
                raise ShapeError("row_index must hold one nonnegative row per observation")
        self.n_rows = int(self.row_index.max()) + 1
        self.identity_rows = row_index is None
        # f^2 summed per latent row, for proposal scales
        self.ff_row = np.zeros((self.n_rows, self.m))
        np.add.at(self.ff_row, self.row_index, self.F * self.F)

        self.blocks = dict(self.param.blocks)
        self.fixed = dict(fixed or {})
        # mode jumps between the summary components and the data-driven region
        self.mode_jump = (self.online is not None and self.likelihood and init is None
                          and not (set(self.fixed) - {"weights"}))
        self._pilot = False
        self._jump_components = []
        self._init_state(init)
        self.free = [b for b in self.blocks if b not in self._fixed_blocks]
        self.update_B = "B" not in self.fixed
        self.update_w = self.online is not None and "weights" not in self.fixed

    # --- setup ---

    def _init_state(self, init):
        s = _State()
        if init is None:
            p0 = default_initial_params(self.kind, self.Y, self.F)
            if self.online is not None and not self.mode_jump:
                p0 = self.online.components[0].mean_params()
        else:
            p0 = init
        phi = self.param.to_vector(p0)
        fixed_blocks = set()
        for key, val in self.fixed.items():
            if key in ("B", "weights"):
                continue
            block = {"gamma": "log_gamma"}.get(key, key)
            if block not in self.blocks:
                raise ConfigurationError(f"cannot fix unknown block {key!r} for {self.kind}")
            if block in ("Gamma", "Sigma", "R"):
                phi[self.blocks[block]] = la.matrix_to_logchol(val, key)
            elif block == "log_gamma":
                phi[self.blocks[block]] = np.log(np.broadcast_to(np.asarray(val, float), (self.m,)))
            else:
                phi[self.blocks[block]] = np.broadcast_to(np.asarray(val, float), (self.m,))
            fixed_blocks.add(block)
        self._fixed_blocks = fixed_blocks
        s.phi = phi
        s.params = self.param.to_params(phi)
        if "B" in self.fixed:
            B = np.array(self.fixed["B"], dtype=float).reshape(self.n_rows, self.m)
        else:
            B = np.tile(s.params.delta, (self.n_rows, 1))
            if self.identity_rows and self.likelihood:
                # start rows at their least-squares ratios, shrunk toward delta
                ok = np.abs(self.F) > 1e-8
                ratio = np.where(ok, self.Y / np.where(ok, self.F, 1.0), s.params.delta)
                B = np.where(ok, 0.5 * (ratio + s.params.delta), B)
                B = np.clip(B, s.params.delta - 10, s.params.delta + 10)
        s.B = B
        if self.online is not None:
            L = self.online.n_components
            if "weights" in self.fixed:
                s.w = as_weights(self.fixed["weights"], L)
                s.eta = None
            else:
                s.w = np.full(L, 1.0 / L)
                s.eta = logits_from_weights(s.w)
        else:
            s.w = s.eta = None
        s.prior = self._log_prior(s.phi, s.params, s.w)
        s.eff = self._effects(s.B, s.params)
        s.lik = self._lik(s.B, s.params)
        s.lik_row = self._rowsum(s.lik)
        self.state = s
        if not np.isfinite(self.log_target()):
            raise InvalidParameterError("initial state has non-finite log posterior")

    # --- log-target pieces ---

    def _log_prior(self, phi, params, w) -> float:
        lj = self.param.log_jacobian(phi)
        if self.online is None or self._pilot:
            return base_log_density(self.prior, params, phi) + lj
        lp = online_log_prior(params, w, self.online, phi=phi)
        if "weights" not in self.fixed:
            lp += logit_log_jacobian(w)
        return lp + lj

    def _effects(self, B, params) -> np.ndarray:
        return np.asarray(effects_logdensity(B, params), dtype=float)

    def _lik(self, B, params) -> np.ndarray:
        if not self.likelihood:
            return np.zeros(self.n)
        Bo = B if self.identity_rows else B[self.row_index]
        return np.asarray(loglik_obs(self.Y, Bo, self.F, params.Sigma_f), dtype=float)

    def _rowsum(self, lik) -> np.ndarray:
        if self.identity_rows:
            return lik
        return np.bincount(self.row_index, weights=lik, minlength=self.n_rows)

    def log_target(self) -> float:
        s = self.state
        return float(s.prior + np.sum(s.eff) + np.sum(s.lik))

    def recompute_log_target(self) -> float:
        """Independent evaluation of the current log target (no cached pieces)."""
        s = self.state
        params = self.param.to_params(s.phi)
        return float(self._log_prior(s.phi, params, s.w) + np.sum(self._effects(s.B, params))
                     + np.sum(self._lik(s.B, params)))

    # --- moves ---

    def _omega_move(self, block, step_chol, scale):
        s = self.state
        sl = self.blocks[block]
        phi = s.phi.copy()
        phi[sl] += scale * (step_chol @ self.rng.standard_normal(sl.stop - sl.start))
        try:
            with np.errstate(over="raise", invalid="raise"):
                params = self.param.to_params(phi)
                prior = self._log_prior(phi, params, s.w)
                if block == "Sigma":
                    eff, lik = s.eff, self._lik(s.B, params)
                else:
                    eff, lik = self._effects(s.B, params), s.lik
        except (InvalidParameterError, FloatingPointError, np.linalg.LinAlgError):
            return -np.inf, 0.0
        new = prior + np.sum(eff) + np.sum(lik)
        old = s.prior + np.sum(s.eff) + np.sum(s.lik)
        log_r = float(new - old)
        if not np.isfinite(log_r):
            return log_r, 0.0
        acc = min(1.0, np.exp(min(log_r, 0.0)))
        if np.log(self.rng.uniform()) < log_r:
            s.phi, s.params, s.prior, s.eff = phi, params, prior, eff
            if block == "Sigma":
                s.lik, s.lik_row = lik, self._rowsum(lik)
            return log_r, acc
        return log_r, acc

    def _row_scales(self) -> np.ndarray:
        p = self.state.params
        g = np.diag(p.Gamma) if self.kind == "mv_cauchy" else p.gamma ** 2
        prec = 1.0 / g + (self.ff_row / np.diag(p.Sigma) if self.likelihood else 0.0)
        return 1.0 / np.sqrt(prec)

    def _b_move(self, scale):
        s = self.state
        B = s.B + scale * self._row_scales() * self.rng.standard_normal(s.B.shape)
        eff = self._effects(B, s.params)
        lik = self._lik(B, s.params)
        lik_row = self._rowsum(lik)
        log_r = (eff + lik_row) - (s.eff + s.lik_row)
        log_r = np.where(np.isnan(log_r), -np.inf, log_r)
        accept = np.log(self.rng.uniform(size=self.n_rows)) < log_r
        if np.any(accept):
            s.B = np.where(accept[:, None], B, s.B)
            s.eff = np.where(accept, eff, s.eff)
            if self.identity_rows:
                s.lik = np.where(accept, lik, s.lik)
            else:
                s.lik = np.where(accept[self.row_index], lik, s.lik)
            s.lik_row = self._rowsum(s.lik)
        return float(np.mean(np.exp(np.minimum(log_r, 0.0)))), float(np.mean(accept))

    def _shift_move(self, step_chol, scale):
        """Translate delta and every latent row by one common vector.

        The effect densities depend on ``B - delta`` only, so they cancel;
        this breaks the funnel between delta and tightly clustered rows.
        """
        s = self.state
        sl = self.blocks["delta"]
        c = scale * (step_chol @ self.rng.standard_normal(self.m))
        phi = s.phi.copy()
        phi[sl] += c
        params = self.param.to_params(phi)
        B = s.B + c
        prior = self._log_prior(phi, params, s.w)
        lik = self._lik(B, params)
        log_r = float(prior + np.sum(lik) - s.prior - np.sum(s.lik))
        if not np.isfinite(log_r):
            return 0.0
        acc = min(1.0, np.exp(min(log_r, 0.0)))
        if np.log(self.rng.uniform()) < log_r:
            s.phi, s.params, s.prior, s.B = phi, params, prior, B
            s.lik, s.lik_row = lik, self._rowsum(lik)
        return acc

    def _w_move(self, scale):
        s = self.state
        eta = s.eta + scale * self.rng.standard_normal(s.eta.shape)
        w = weights_from_logits(eta)
        if np.any(w <= 0):
            return 0.0, 0.0
        prior = self._log_prior(s.phi, s.params, w)
        log_r = prior - s.prior
        acc = float(min(1.0, np.exp(min(log_r, 0.0)))) if np.isfinite(log_r) else 0.0
        if np.log(self.rng.uniform()) < log_r:
            s.eta, s.w, s.prior = eta, w, prior
            return acc, 1.0
        return acc, 0.0

    def _row_proposal(self, params, df=ROW_PROPOSAL_DF):
        """Multivariate-t approximations of each latent row's conditional.

        The effect law is replaced by a Gaussian with matching location and
        scale, combined with the Gaussian likelihood of the row's outcomes.
        """
        m = self.m
        if self.kind == "mv_cauchy":
            Gi = params.Gamma_f.inverse()
        else:
            G = params.R * np.outer(params.gamma, params.gamma)
            Gi = np.linalg.inv(G)
        Si = params.Sigma_f.inverse()
        P = Si[None] * (self.F[:, :, None] * self.F[:, None, :])
        h = self.F * (self.Y @ Si)
        if not self.identity_rows:
            Pr = np.zeros((self.n_rows, m, m))
            hr = np.zeros((self.n_rows, m))
            np.add.at(Pr, self.row_index, P)
            np.add.at(hr, self.row_index, h)
            P, h = Pr, hr
        Q = Gi[None] + P
        C = np.linalg.inv(Q)
        loc = np.einsum("nij,nj->ni", C, h + Gi @ params.delta)
        L = np.linalg.cholesky(C)
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        return loc, L, logdet, df

    def _row_proposal_sample(self, prop):
        loc, L, _, df = prop
        z = self.rng.standard_normal(loc.shape)
        w = self.rng.chisquare(df, size=loc.shape[0]) / df
        return loc + np.einsum("nij,nj->ni", L, z) / np.sqrt(w)[:, None]

    def _row_proposal_logpdf(self, B, prop) -> float:
        loc, L, logdet, df = prop
        m = self.m
        u = np.linalg.solve(L, (B - loc)[:, :, None])[:, :, 0]
        q = np.sum(u * u, axis=1)
        const = special.gammaln(0.5 * (df + m)) - special.gammaln(0.5 * df) - 0.5 * m * np.log(df * np.pi)
        return float(np.sum(const - 0.5 * logdet - 0.5 * (df + m) * np.log1p(q / df)))

    def _jump_logq(self, phi) -> float:
        vals = []
        for mean, Lc, logdet in self._jump_components:
            u = np.linalg.solve(Lc, phi - mean)
            vals.append(-0.5 * (len(phi) * np.log(2 * np.pi) + logdet + u @ u))
        return log_sum_exp(vals) - float(np.log(len(vals)))

    def _jump_move(self) -> float:
        """Independence proposal for (phi, B) from a mixture of Gaussians over phi."""
        s = self.state
        c = int(self.rng.integers(len(self._jump_components)))
        mean, Lc, _ = self._jump_components[c]
        phi = mean + Lc @ self.rng.standard_normal(len(mean))
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                params = self.param.to_params(phi)
                prop_new = self._row_proposal(params)
                B = self._row_proposal_sample(prop_new)
                prior = self._log_prior(phi, params, s.w)
                eff = self._effects(B, params)
                lik = self._lik(B, params)
                prop_old = self._row_proposal(s.params)
                log_r = (prior + np.sum(eff) + np.sum(lik) - self.log_target()
                         + self._jump_logq(s.phi) + self._row_proposal_logpdf(s.B, prop_old)
                         - self._jump_logq(phi) - self._row_proposal_logpdf(B, prop_new))
        except (InvalidParameterError, FloatingPointError, np.linalg.LinAlgError):
            return 0.0
        if not np.isfinite(log_r):
            return 0.0
        if np.log(self.rng.uniform()) < log_r:
            s.phi, s.params, s.prior, s.B, s.eff, s.lik = phi, params, prior, B, eff, lik
            s.lik_row = self._rowsum(lik)
            return 1.0
        return 0.0

    def _start_mixture_phase(self, hist):
        """End the base-prior pilot: add its Gaussian to the jump proposals."""
        comps = []
        for c in self.online.components:
            comps.append((c.mean, c._fac.L, c._fac.logdet))
        H = np.asarray(hist)
        if len(H) >= 4 * self.param.dim:
            d = self.param.dim
            C = np.cov(H, rowvar=False) * PILOT_INFLATION ** 2
            C = C + 1e-8 * max(1.0, np.trace(C) / d) * np.eye(d)
            try:
                f = la.PDFactor(C, name="pilot covariance")
                comps.append((H.mean(axis=0), f.L, f.logdet))
            except InvalidParameterError:
                log.debug("pilot covariance not positive definite; jumping between summaries only")
        self._jump_components = comps
        self._pilot = False
        s = self.state
        if s.eta is not None:
            s.w = np.full(self.online.n_components, 1.0 / self.online.n_components)
            s.eta = logits_from_weights(s.w)
        s.prior = self._log_prior(s.phi, s.params, s.w)

    # --- driver ---

    def run(self, retain_latent: bool = False) -> PosteriorChain:
        cfg = self.config
        rng = self.rng
        t0 = time.perf_counter()
        shift = "delta" in self.free and self.update_B
        names = (list(self.free) + (["B"] if self.update_B else []) + (["shift"] if shift else [])
                 + (["weights"] if self.update_w else []))
        default_scale = {"B": 1.0, "weights": 1.0}
        scale = {}
        for b in names:
            sl = self.blocks["delta" if b == "shift" else b] if b not in ("B", "weights") else None
            d = 1 if sl is None else sl.stop - sl.start
            scale[b] = float(cfg.initial_scales.get(b, default_scale.get(b, 0.5 / np.sqrt(d))))
        chol = {b: np.eye(self.blocks[b].stop - self.blocks[b].start) for b in self.free}
        hist = []
        n_keep = cfg.n_draws
        L = 0 if self.online is None else self.online.n_components
        phi_out = np.empty((n_keep, self.param.dim))
        w_out = np.empty((n_keep, L)) if L else None
        lat_out = np.empty((n_keep, self.n_rows, self.m)) if retain_latent else None
        acc_sum = dict.fromkeys(names, 0.0)
        n_post = 0
        k = 0
        checkpoints = {cfg.n_burnin // 4, cfg.n_burnin // 2, (3 * cfg.n_burnin) // 4} - {0}
        pilot_end = (2 * cfg.n_burnin) // 5 if self.mode_jump else 0
        if self.mode_jump:
            if pilot_end > 0:
                self._pilot = True
                s = self.state
                s.prior = self._log_prior(s.phi, s.params, s.w)
            else:
                self._start_mixture_phase([])
        jumps = n_jump_post = 0

        for t in range(cfg.n_iterations):
            burn = t < cfg.n_burnin
            if self._pilot and t == pilot_end:
                self._start_mixture_phase(hist[pilot_end // 2:pilot_end])
            acc_t = {}
            for b in self.free:
                _, acc_t[b] = self._omega_move(b, chol[b], scale[b])
            if self.update_B:
                acc_t["B"], _ = self._b_move(scale["B"])
            if shift:
                acc_t["shift"] = self._shift_move(chol["delta"], scale["shift"])
            if self.update_w and not self._pilot:
                acc_t["weights"], _ = self._w_move(scale["weights"])
            if self.mode_jump and not self._pilot:
                a = self._jump_move()
                if not burn:
                    jumps += a
                    n_jump_post += 1
            if burn:
                hist.append(self.state.phi.copy())
            if burn and cfg.adapt:
                gain = 1.0 / (1.0 + t / cfg.adapt_window) ** 0.6
                for b, a in acc_t.items():
                    scale[b] *= np.exp(gain * (a - cfg.target_accept))
                if t + 1 in checkpoints:
                    H = np.array(hist[len(hist) // 2:])
                    for b in self.free:
                        sl = self.blocks[b]
                        d = sl.stop - sl.start
                        C = np.cov(H[:, sl], rowvar=False).reshape(d, d)
                        if np.all(np.isfinite(C)) and la.is_pd(C + 1e-10 * np.eye(d)):
                            C = C + 1e-10 * max(1.0, np.trace(C) / d) * np.eye(d)
                            chol[b] = np.linalg.cholesky(C)
                            scale[b] = 2.38 / np.sqrt(d)
            if not burn:
                for b, a in acc_t.items():
                    acc_sum[b] += a
                n_post += 1
                if (t - cfg.n_burnin) % cfg.thin == cfg.thin - 1 and k < n_keep:
                    phi_out[k] = self.state.phi
                    if L:
                        w_out[k] = self.state.w
                    if retain_latent:
                        lat_out[k] = self.state.B
                    k += 1

        accept = {b: acc_sum[b] / max(n_post, 1) for b in names}
        warn = []
        for b, a in accept.items():
            if a < 0.01:
                warn.append(f"block {b!r} acceptance {a:.4f} below 0.01 after adaptation")
                log.warning(warn[-1])
        diag = {"acceptance": accept, "final_scales": scale, "runtime_s": time.perf_counter() - t0,
                "warnings": warn, "fixed_blocks": sorted(self.fixed)}
        if self.mode_jump:
            diag["mode_jump_acceptance"] = jumps / max(n_jump_post, 1)
        if self.kind == "copula" and self.m > 1:
            _, n_clamped = cauchy_to_normal_scores(self.state.B, self.state.params.delta,
                                                   self.state.params.gamma)
            diag["clamped_scores_final"] = n_clamped
        chain = PosteriorChain(self.kind, self.m, phi_out, w_out, lat_out, diag,
                               {**cfg.to_dict(), "n_rows": self.n_rows})
        if len(chain) >= 100:
            d = chain_diagnostics(chain)
            diag["ess"] = d["ess"]
            diag["rhat"] = d["rhat"]
        return chain


def _target_arrays(data, source_model, f_vals):
    Y = getattr(data, "Y", data)
    if f_vals is None:
        if source_model is None:
            raise ConfigurationError("need a source model or precomputed f_vals")
        X = getattr(data, "X", None)
        if X is None:
            raise ConfigurationError("data must carry features when f_vals is not given")
        f_vals = source_model.predict(X)
    return np.asarray(Y, dtype=float), np.asarray(f_vals, dtype=float)


def rw_metropolis(model_kind, data, source_model=None, prior=None, online_prior=None,
                  config: SamplerConfig | None = None, rng=None, *, f_vals=None,
                  likelihood=True, row_index=None, fixed=None, init=None,
                  retain_latent=False) -> PosteriorChain:
    """Sample the augmented posterior of a RECaST model.

    Parameters
    ----------
    model_kind : {"mv_cauchy", "copula"}
    data : Dataset or array
        Target data; an array is taken as the outcome matrix and then
        ``f_vals`` is required.
    source_model : RidgeSourceModel, optional
        Supplies ``f(theta_S, x_i)`` when ``f_vals`` is not given.
    prior : PriorSpec or PosteriorSummary, optional
        Offline prior; defaults to ``PriorSpec(m)``.
    online_prior : OnlinePrior, optional
        Mixture prior; adds the weight block to the sampler.
    config : SamplerConfig
    rng : numpy.random.Generator, optional
        Defaults to a generator seeded from ``config.seed``.

    Returns
    -------
    PosteriorChain
    """
    Y, F = _target_arrays(data, source_model, f_vals)
    s = RWSampler(model_kind, Y, F, prior, online_prior, config, rng, likelihood=likelihood,
                  row_index=row_index, fixed=fixed, init=init)
    return s.run(retain_latent=retain_latent)


# --- Gibbs oracle for the location submodel ----------------------------------

@dataclass
class GibbsState:
    mu: np.ndarray
    Sigma: np.ndarray
    delta: np.ndarray
    Gamma: np.ndarray
    u: float

    def __post_init__(self):
        if not self.u > 0:
            raise InvalidParameterError("u must be positive")
        la.cholesky(self.Sigma, "Sigma")
        la.cholesky(self.Gamma, "Gamma")


@dataclass
class GibbsChain:
    mu: np.ndarray
    Sigma: np.ndarray
    delta: np.ndarray
    Gamma: np.ndarray
    u: np.ndarray
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.u.shape[0]


def _mvn_from_precision(P, h, rng):
    """Draw from N(P^{-1} h, P^{-1})."""
    Lp = la.cholesky(P, "precision")
    mean = np.linalg.solve(P, h)
    z = rng.standard_normal(len(h))
    return mean + np.linalg.solve(Lp.T, z)


def _iw_draw(Psi, nu, rng):
    try:
        return inverse_wishart_sample(Psi, nu, rng)
    except InvalidParameterError:
        m = Psi.shape[0]
        return inverse_wishart_sample(Psi + 1e-10 * np.eye(m), nu, rng)


def gibbs_conditionals(state: GibbsState, Y, prior: PriorSpec, nu: float, gamma_df: str = "conjugate"):
    """Parameters of every full conditional at ``state``.

    ``gamma_df`` selects the degrees of freedom of the Gamma update:
    ``"conjugate"`` uses ``nu_Gamma + 1``, ``"printed"`` uses ``nu_Gamma - 1``.
    """
    Y = np.asarray(Y, dtype=float)
    n, m = Y.shape
    ybar = Y.mean(axis=0)
    Gi = np.linalg.inv(state.Gamma)
    Si = np.linalg.inv(state.Sigma)
    Sdi = np.linalg.inv(prior.Sigma_delta)
    P_mu = state.u * Gi + n * Si
    h_mu = state.u * Gi @ state.delta + n * Si @ ybar
    E = Y - state.mu
    P_d = Sdi + state.u * Gi
    h_d = Sdi @ prior.delta_mean + state.u * Gi @ state.mu
    d = state.mu - state.delta
    shift = {"conjugate": 1.0, "printed": -1.0}[gamma_df]
    return {
        "mu": (P_mu, h_mu),
        "Sigma": (prior.Psi_Sigma + E.T @ E, n + prior.nu_Sigma),
        "delta": (P_d, h_d),
        "Gamma": (prior.Psi_Gamma + state.u * np.outer(d, d), prior.nu_Gamma + shift),
        "u": (0.5 * (nu + m), 0.5 * float(d @ Gi @ d) + 0.5 * nu),
    }


def gibbs_log_joint(state: GibbsState, Y, prior: PriorSpec, nu: float) -> float:
    """log p(Y, mu, u, Sigma, delta, Gamma) of the location hierarchy."""
    from .distributions import inverse_wishart_logpdf, mv_normal_logpdf
    from scipy import stats

    Y = np.asarray(Y, dtype=float)
    lp = float(np.sum(mv_normal_logpdf(Y, state.mu, state.Sigma)))
    lp += mv_normal_logpdf(state.mu, state.delta, state.Gamma / state.u)
    lp += float(stats.gamma.logpdf(state.u, 0.5 * nu, scale=2.0 / nu))
    lp += inverse_wishart_logpdf(state.Sigma, prior.Psi_Sigma, prior.nu_Sigma)
    lp += mv_normal_logpdf(state.delta, prior.delta_mean, prior.Sigma_delta)
    lp += inverse_wishart_logpdf(state.Gamma, prior.Psi_Gamma, prior.nu_Gamma)
    return lp


def gibbs_conditional_logpdf(block: str, state: GibbsState, Y, prior: PriorSpec, nu: float,
                             gamma_df: str = "conjugate") -> float:
    """Log full-conditional density of ``block`` evaluated at its value in ``state``."""
    from .distributions import inverse_wishart_logpdf, mv_normal_logpdf
    from scipy import stats

    c = gibbs_conditionals(state, Y, prior, nu, gamma_df)
    if block in ("mu", "delta"):
        P, h = c[block]
        return mv_normal_logpdf(getattr(state, block), np.linalg.solve(P, h), np.linalg.inv(P))
    if block in ("Sigma", "Gamma"):
        Psi, df = c[block]
        return inverse_wishart_logpdf(getattr(state, block), Psi, df)
    shape, rate = c["u"]
    return float(stats.gamma.logpdf(state.u, shape, scale=1.0 / rate))


def gibbs_mv_cauchy_location(Y, prior: PriorSpec | None = None, nu: float = 1.0,
                             config: SamplerConfig | None = None, rng=None,
                             gamma_df: str = "conjugate", init: GibbsState | None = None) -> GibbsChain:
    """Gibbs sampler for ``y_i ~ N(mu, Sigma)`` with a multivariate-t(nu) prior on ``mu``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, m = Y.shape
    if n == 0:
        raise ShapeError("need at least one observation")
    if gamma_df not in ("conjugate", "printed"):
        raise ConfigurationError("gamma_df must be 'conjugate' or 'printed'")
    prior = PriorSpec(m) if prior is None else prior
    config = SamplerConfig() if config is None else config
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if init is None:
        ybar = Y.mean(axis=0)
        init = GibbsState(ybar.copy(), np.eye(m), ybar.copy(), np.eye(m), 1.0)
    s = GibbsState(init.mu.copy(), init.Sigma.copy(), init.delta.copy(), init.Gamma.copy(), init.u)
    n_keep = config.n_draws
    out = {k: [] for k in ("mu", "Sigma", "delta", "Gamma", "u")}
    for t in range(config.n_iterations):
        c = gibbs_conditionals(s, Y, prior, nu, gamma_df)
        s.mu = _mvn_from_precision(*c["mu"], rng)
        c = gibbs_conditionals(s, Y, prior, nu, gamma_df)
        s.Sigma = _iw_draw(*c["Sigma"], rng)
        c = gibbs_conditionals(s, Y, prior, nu, gamma_df)
        s.delta = _mvn_from_precision(*c["delta"], rng)
        c = gibbs_conditionals(s, Y, prior, nu, gamma_df)
        s.Gamma = _iw_draw(*c["Gamma"], rng)
        c = gibbs_conditionals(s, Y, prior, nu, gamma_df)
        shape, rate = c["u"]
        s.u = float(rng.gamma(shape, 1.0 / rate))
        if t >= config.n_burnin and (t - config.n_burnin) % config.thin == config.thin - 1 \
                and len(out["u"]) < n_keep:
            for k in out:
                out[k].append(np.copy(getattr(s, k)))
    return GibbsChain(*(np.array(out[k]) for k in ("mu", "Sigma", "delta", "Gamma", "u")),
                      config=config.to_dict())


# --- diagnostics --------------------------------------------------------------

def _autocov(x):
    n = len(x)
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    ac = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return ac / n


def effective_sample_size(x) -> float:
    """ESS with Geyer's initial monotone positive-sequence truncation."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    ac = _autocov(x)
    if ac[0] <= 0:
        return 1.0
    rho = ac / ac[0]
    # pair sums Gamma_k = rho_{2k} + rho_{2k+1}
    npairs = (n - 1) // 2
    G = rho[0:2 * npairs:2] + rho[1:2 * npairs:2]
    pos = np.nonzero(G <= 0)[0]
    G = G[:pos[0]] if pos.size else G
    G = np.minimum.accumulate(G) if G.size else G
    tau = -1.0 + 2.0 * np.sum(G)
    tau = max(tau, 1.0 / np.log10(max(n, 10)))
    return float(min(n / tau, n))


def split_rhat(x) -> float:
    x = np.asarray(x, dtype=float)
    h = len(x) // 2
    parts = np.stack([x[:h], x[h:2 * h]])
    W = parts.var(axis=1, ddof=1).mean()
    if W <= 0:
        return float("nan")
    B = h * parts.mean(axis=1).var(ddof=1)
    var = (h - 1) / h * W + B / h
    return float(np.sqrt(var / W))


def chain_diagnostics(chain) -> dict:
    """Acceptance rates, ESS and split-R-hat for every scalar of a chain.

    ``chain`` may be a :class:`PosteriorChain` or a 2-d array of draws.
    """
    if isinstance(chain, PosteriorChain):
        names, X = chain.scalar_draws()
        acc = chain.diagnostics.get("acceptance", {})
    else:
        X = np.asarray(chain, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        names = [f"x[{k}]" for k in range(X.shape[1])]
        acc = {}
    n = X.shape[0]
    if n < 100:
        raise DiagnosticsError(f"diagnostics need at least 100 draws, got {n}")
    ess, rhat, undefined = {}, {}, []
    for j, name in enumerate(names):
        col = X[:, j]
        ess[name] = effective_sample_size(col)
        r = split_rhat(col)
        if not np.isfinite(r):
            undefined.append(name)
        rhat[name] = r
    return {"acceptance": dict(acc), "ess": ess, "rhat": rhat, "rhat_undefined": undefined,
            "n_draws": n}


def mcse_mean(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / np.sqrt(effective_sample_size(x)))


__all__ = [
    "SamplerConfig", "PosteriorChain", "RWSampler", "rw_metropolis", "GibbsState", "GibbsChain",
    "gibbs_mv_cauchy_location", "gibbs_conditionals", "gibbs_conditional_logpdf",
    "gibbs_log_joint", "chain_diagnostics", "effective_sample_size", "split_rhat", "mcse_mean",
]
