"""Synthetic transfer-learning study: scenario grids, data generation and reports.

A scenario fixes source coefficients inside per-outcome intervals, perturbs
them to get target coefficients, fits every requested method on fresh data
in each replication, and scores point predictions by Mahalanobis distance
(with the test set's empirical covariance) and credible sets by coverage.

Methods: ``ridge`` (target-only group ridge), ``univariate`` (m=1 Cauchy
model fit to each outcome separately), ``mv_cauchy``, ``mv_copula`` and the online variants
``mv_on_cauchy`` and ``mv_on_copula``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import PriorSpec
from .errors import ConfigurationError, RecastError, ScenarioError
from .online import AlphaPrior, OnlinePrior, build_posterior_summary
from .predictive import (PredictiveConfig, elliptical_coverage, evaluate_test_set, mahalanobis,
                         point_prediction, sample_predictive)
from .samplers import SamplerConfig, rw_metropolis
from .source_model import Dataset, fit_ridge

log = logging.getLogger(__name__)

METHODS = ("ridge", "univariate", "mv_cauchy", "mv_copula", "mv_on_cauchy", "mv_on_copula")
METHOD_LABELS = {"ridge": "Ridge", "univariate": "Univariate", "mv_cauchy": "MV Cauchy",
                 "mv_copula": "MV Copula", "mv_on_cauchy": "MV-On Cauchy",
                 "mv_on_copula": "MV-On Copula"}
ONLINE_METHODS = ("mv_on_cauchy", "mv_on_copula")
_KIND = {"mv_cauchy": "mv_cauchy", "mv_copula": "copula", "mv_on_cauchy": "mv_cauchy",
         "mv_on_copula": "copula"}
REPORT_VERSION = 1
# with m = 1 the copula model is a Cauchy(delta, gamma) effect with a normal
# prior on delta and an inverse-gamma prior on gamma
UNIVARIATE_KIND = "copula"
MAX_FAILURE_FRACTION = 0.10

# coefficient intervals per outcome row; entries run from low to high.
# Mirroring row 2 (-0.5 down to -5) would make the two outcomes almost
# perfectly anti-correlated and the test covariance nearly singular.
SOURCE_INTERVALS = ((0.5, 5.0), (-5.0, -0.5))
ONLINE_SOURCE_INTERVALS = ((2.0, 2.5), (-2.5, -2.0))
ONLINE_T1_INTERVALS = ((6.5, 7.0), (-7.0, -6.5))

DESK_SAMPLER = {"n_iterations": 10000, "n_burnin": 5000, "thin": 5}
FULL_SAMPLER = {"n_iterations": 20000, "n_burnin": 10000, "thin": 2}


# --- scenario definitions -----------------------------------------------------

@dataclass
class ScenarioSpec:
    """One scenario row (or several, one per entry of ``n_T``)."""

    name: str
    relationship: dict
    n_T: list = field(default_factory=lambda: [20])
    n_S: int = 1000
    n_T1: int = 1000
    p: int = 50
    m: int = 2
    Sigma_gen: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    n_test: int = 100
    n_replications: int = 20
    seed: int = 0
    methods: list = field(default_factory=lambda: ["ridge", "univariate", "mv_cauchy", "mv_copula"])
    sampler: dict = field(default_factory=lambda: dict(DESK_SAMPLER))
    predictive: dict = field(default_factory=dict)
    alpha: float = 0.05
    coverage_rule: str = "solid"
    placement: str = "equal"
    cv_folds: int = 10

    def __post_init__(self):
        if isinstance(self.n_T, int):
            self.n_T = [self.n_T]
        self.validate()

    def validate(self):
        bad = []
        rel = self.relationship
        kind = rel.get("type") if isinstance(rel, dict) else None
        if kind not in ("additive", "multiplicative", "online"):
            bad.append("relationship.type")
        elif kind in ("additive", "online"):
            if not rel.get("a", 0) >= 0:
                bad.append("relationship.a")
            if not rel.get("b", 0) <= 0:
                bad.append("relationship.b")
        elif not isinstance(rel.get("c"), (int, float)):
            bad.append("relationship.c")
        if self.p < 2:
            bad.append("p")
        if self.m < 1:
            bad.append("m")
        for name in ("n_S", "n_T1", "n_test", "n_replications"):
            if int(getattr(self, name)) < 1:
                bad.append(name)
        if not self.n_T or any(int(v) < 2 for v in self.n_T):
            bad.append("n_T")
        S = np.asarray(self.Sigma_gen, dtype=float)
        if S.shape != (self.m, self.m) or not np.allclose(S, S.T) \
                or np.linalg.eigvalsh(S).min() < -1e-12:
            bad.append("Sigma_gen")
        unknown = [mth for mth in self.methods if mth not in METHODS]
        if unknown:
            bad.append(f"methods {unknown}")
        if kind != "online" and any(mth in ONLINE_METHODS for mth in self.methods):
            bad.append("methods (online methods need an online relationship)")
        if not 0 < self.alpha < 1:
            bad.append("alpha")
        if self.coverage_rule not in ("solid", "shell"):
            bad.append("coverage_rule")
        if self.placement not in ("equal", "random"):
            bad.append("placement")
        try:
            SamplerConfig(**self.sampler)
            PredictiveConfig(**self.predictive)
        except (TypeError, ConfigurationError) as exc:
            bad.append(f"sampler/predictive ({exc})")
        if bad:
            raise ConfigurationError(f"invalid scenario {self.name!r}: offending fields {bad}")

    @property
    def online(self) -> bool:
        return self.relationship["type"] == "online"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(f"invalid scenario fields: {exc}") from None

    def full_scale(self) -> "ScenarioSpec":
        d = self.to_dict()
        d["n_replications"] = 100
        d["sampler"] = dict(FULL_SAMPLER)
        return ScenarioSpec(**d)


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        d = tomllib.loads(text)
    else:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    return ScenarioSpec.from_dict(d)


def bundled_scenarios() -> dict:
    """Scenario files shipped with the package, keyed by name."""
    root = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.json"))}


# --- generators ---------------------------------------------------------------

def _interval_rows(p, intervals, placement="equal", rng=None) -> np.ndarray:
    rows = []
    for lo, hi in intervals:
        if placement == "equal":
            rows.append(np.linspace(lo, hi, p))
        else:
            rows.append(rng.uniform(lo, hi, size=p))
    return np.array(rows)


def generate_source_params(p: int, m: int, relationship: dict, placement: str = "equal",
                           rng=None) -> np.ndarray:
    """Source coefficients, each row equally spaced (ascending) over its interval.

    Rows beyond the second repeat the two intervals alternately.
    """
    intervals = ONLINE_SOURCE_INTERVALS if relationship["type"] == "online" else SOURCE_INTERVALS
    intervals = [intervals[j % 2] for j in range(m)]
    return _interval_rows(p, intervals, placement, rng)


def online_t1_params(p: int, m: int, placement: str = "equal", rng=None) -> np.ndarray:
    intervals = [ONLINE_T1_INTERVALS[j % 2] for j in range(m)]
    return _interval_rows(p, intervals, placement, rng)


def generate_target_params(theta_base, relationship: dict, rng) -> np.ndarray:
    """Perturb ``theta_base``: rows alternate U(0, a) and U(b, 0) noise, or scale by c."""
    theta_base = np.asarray(theta_base, dtype=float)
    if relationship["type"] == "multiplicative":
        return float(relationship["c"]) * theta_base
    a, b = float(relationship.get("a", 0.0)), float(relationship.get("b", 0.0))
    out = theta_base.copy()
    for j in range(out.shape[0]):
        lo, hi = (0.0, a) if j % 2 == 0 else (b, 0.0)
        if hi > lo:
            out[j] += rng.uniform(lo, hi, size=out.shape[1])
    return out


def generate_dataset(theta, Sigma_gen, n: int, p: int, rng) -> Dataset:
    """Gaussian features with an intercept; ``y = theta x + N(0, Sigma_gen)``."""
    theta = np.asarray(theta, dtype=float)
    X = np.ones((n, p))
    X[:, 1:] = rng.standard_normal((n, p - 1))
    Y = X @ theta.T
    S = np.asarray(Sigma_gen, dtype=float)
    w, V = np.linalg.eigh(S)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    noise = rng.standard_normal((n, theta.shape[0]))
    if np.any(w > 0):
        Y = Y + noise @ root.T
    return Dataset(X, Y)


# --- per-replication evaluation ------------------------------------------------

@dataclass
class MethodResult:
    mean_distance: float
    se_distance: float
    coverage: list | None = None
    alpha_mean: float | None = None
    runtime_s: float = 0.0


@dataclass
class ReplicationResult:
    index: int
    n_T: int
    methods: dict
    failures: dict = field(default_factory=dict)


def _distance_summary(d) -> tuple[float, float]:
    d = np.asarray(d, dtype=float)
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else float("nan")


def _univariate(train, test, source, S, sampler_cfg, pcfg, rng, alpha, rule):
    F_tr = source.predict(train.X)
    F_te = source.predict(test.X)
    preds = np.empty_like(test.Y)
    cover = np.empty(test.Y.shape, dtype=bool)
    for j in range(train.m):
        chain = rw_metropolis(UNIVARIATE_KIND, train.Y[:, [j]], f_vals=F_tr[:, [j]],
                              config=sampler_cfg, rng=rng)
        for i in range(test.n):
            samp = sample_predictive(UNIVARIATE_KIND, chain, None, config=pcfg, rng=rng,
                                     f_val=F_te[i, [j]])
            preds[i, j] = point_prediction(samp)[0]
            cover[i, j] = elliptical_coverage(samp, test.Y[i, [j]], alpha, rule).covered
    d = mahalanobis(test.Y, preds, S)
    return d, [float(100.0 * c) for c in cover.mean(axis=0)]


def run_replication(spec: ScenarioSpec, index: int, n_T: int) -> ReplicationResult:
    """One replication: fresh parameters, data, fits and test-set scores."""
    ss = np.random.SeedSequence([spec.seed, index, n_T])
    gen_rng, fit_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    rel = spec.relationship
    theta_S = generate_source_params(spec.p, spec.m, rel, spec.placement, gen_rng)
    if spec.online:
        theta_T1 = online_t1_params(spec.p, spec.m, spec.placement, gen_rng)
        theta_T = generate_target_params(theta_T1, rel, gen_rng)
    else:
        theta_T = generate_target_params(theta_S, rel, gen_rng)
    source_data = generate_dataset(theta_S, spec.Sigma_gen, spec.n_S, spec.p, gen_rng)
    train = generate_dataset(theta_T, spec.Sigma_gen, n_T, spec.p, gen_rng)
    test = generate_dataset(theta_T, spec.Sigma_gen, spec.n_test, spec.p, gen_rng)
    t1_data = (generate_dataset(theta_T1, spec.Sigma_gen, spec.n_T1, spec.p, gen_rng)
               if spec.online else None)

    source = fit_ridge(source_data, cv_folds=spec.cv_folds, seed=spec.seed)
    S = np.cov(test.Y, rowvar=False).reshape(spec.m, spec.m)
    scfg = SamplerConfig(**spec.sampler)
    pcfg = PredictiveConfig(**spec.predictive)
    results, failures = {}, {}
    summaries = {}
    for method in spec.methods:
        t0 = time.perf_counter()
        rng = np.random.default_rng(fit_rng.integers(2 ** 63))
        try:
            if method == "ridge":
                folds = min(spec.cv_folds, n_T)
                model = fit_ridge(train, cv_folds=folds, seed=spec.seed)
                d = mahalanobis(test.Y, model.predict(test.X), S)
                results[method] = MethodResult(*_distance_summary(d))
            elif method == "univariate":
                d, cov = _univariate(train, test, source, S, scfg, pcfg, rng, spec.alpha,
                                     spec.coverage_rule)
                results[method] = MethodResult(*_distance_summary(d), coverage=cov)
            else:
                kind = _KIND[method]
                online_prior = None
                if method in ONLINE_METHODS:
                    if kind not in summaries:
                        t1_chain = rw_metropolis(kind, t1_data, source, config=scfg, rng=rng)
                        summaries[kind] = build_posterior_summary(t1_chain)
                    online_prior = OnlinePrior([summaries[kind]], PriorSpec(spec.m), AlphaPrior())
                chain = rw_metropolis(kind, train, source, online_prior=online_prior,
                                      config=scfg, rng=rng)
                ev = evaluate_test_set(kind, chain, test.X, test.Y, source, pcfg, rng,
                                       spec.alpha, spec.coverage_rule, S=S)
                res = MethodResult(*_distance_summary(ev.distances), coverage=[ev.coverage])
                if chain.weights is not None:
                    res.alpha_mean = float(np.mean(chain.alpha))
                results[method] = res
        except (RecastError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("replication %d method %s failed: %s", index, method, exc)
            failures[method] = str(exc)
            continue
        results[method].runtime_s = time.perf_counter() - t0
    return ReplicationResult(index, n_T, results, failures)


# --- aggregation --------------------------------------------------------------

@dataclass
class MethodAggregate:
    mean_distance: float
    se: float | None
    coverage: list | None
    alpha_mean: float | None
    alpha_se: float | None
    n_ok: int


@dataclass
class ReportRow:
    scenario: str
    n_T: int
    methods: dict


@dataclass
class AggregateReport:
    rows: list
    method_order: list
    online: bool = False
    timings: dict = field(default_factory=dict)

    def cell(self, n_T: int, method: str) -> MethodAggregate:
        for r in self.rows:
            if r.n_T == n_T:
                return r.methods[method]
        raise KeyError(n_T)


def _se(values) -> float | None:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return None
    return float(v.std(ddof=1) / np.sqrt(v.size))


def aggregate(spec: ScenarioSpec, reps: list) -> AggregateReport:
    rows = []
    for n_T in spec.n_T:
        mine = [r for r in reps if r.n_T == n_T]
        cells = {}
        for method in spec.methods:
            ok = [r.methods[method] for r in mine if method in r.methods]
            n_fail = len(mine) - len(ok)
            if n_fail > MAX_FAILURE_FRACTION * len(mine):
                raise ScenarioError(
                    f"{spec.name}: method {method} failed in {n_fail} of {len(mine)} replications")
            dist = [r.mean_distance for r in ok]
            cov = None
            if ok and ok[0].coverage is not None:
                cov = [float(v) for v in np.mean([r.coverage for r in ok], axis=0)]
            alphas = [r.alpha_mean for r in ok if r.alpha_mean is not None]
            cells[method] = MethodAggregate(
                float(np.mean(dist)) if dist else float("nan"), _se(dist), cov,
                float(np.mean(alphas)) if alphas else None, _se(alphas) if alphas else None,
                len(ok))
        rows.append(ReportRow(spec.name, n_T, cells))
    timings = {}
    for method in spec.methods:
        ts = [r.methods[method].runtime_s for r in reps if method in r.methods]
        timings[method] = float(np.sum(ts))
    return AggregateReport(rows, list(spec.methods), spec.online, timings)


def _run_one(args):
    spec_dict, index, n_T = args
    return run_replication(ScenarioSpec(**spec_dict), index, n_T)


def run_scenario(spec: ScenarioSpec, workers: int = 1, progress=None) -> AggregateReport:
    """Run every replication and aggregate; results are ordered by index."""
    spec.validate()
    jobs = [(spec.to_dict(), i, n_T) for n_T in spec.n_T for i in range(spec.n_replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reps = list(ex.map(_run_one, jobs))
    else:
        reps = []
        for job in jobs:
            reps.append(_run_one(job))
            if progress is not None:
                progress(reps[-1])
    return aggregate(spec, reps)


# --- report emission ----------------------------------------------------------

def _sig2(x) -> str:
    """Two significant digits without trailing zeros: 1.2, 0.18, 0.032, 1."""
    if x is None or not math.isfinite(x):
        return "NA"
    if x == 0:
        return "0"
    return f"{float(f'{x:.2g}'):g}" if abs(x) >= 1e-4 else f"{x:.2g}"


def format_cell(agg: MethodAggregate) -> str:
    """``mean (SE) [coverage]``; SE is ``NA`` for a single replication."""
    s = f"{_sig2(agg.mean_distance)} ({_sig2(agg.se)})"
    if agg.coverage is not None:
        s += " [" + ", ".join(f"{c:.0f}" for c in agg.coverage) + "]"
    return s


def _num(x) -> str:
    return "NA" if x is None or not math.isfinite(x) else repr(float(x))


def report_csv(report: AggregateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["scenario", "n_T"]
    for mth in report.method_order:
        header += [f"{mth}_mean", f"{mth}_se", f"{mth}_coverage"]
        if mth in ONLINE_METHODS:
            header += [f"{mth}_alpha_mean", f"{mth}_alpha_se"]
    w.writerow(header)
    # nothing to report without methods: header only
    for row in report.rows if report.method_order else []:
        line = [row.scenario, str(row.n_T)]
        for mth in report.method_order:
            a = row.methods[mth]
            cov = "NA" if a.coverage is None else ";".join(repr(float(c)) for c in a.coverage)
            line += [_num(a.mean_distance), _num(a.se), cov]
            if mth in ONLINE_METHODS:
                line += [_num(a.alpha_mean), _num(a.alpha_se)]
        w.writerow(line)
    return buf.getvalue()


def report_markdown(report: AggregateReport) -> str:
    labels = [METHOD_LABELS[m] for m in report.method_order]
    lines = ["| scenario | n_T | " + " | ".join(labels) + " |",
             "|" + "---|" * (2 + len(labels))]
    for row in report.rows if report.method_order else []:
        cells = [format_cell(row.methods[m]) for m in report.method_order]
        lines.append(f"| {row.scenario} | {row.n_T} | " + " | ".join(cells) + " |")
    online = [m for m in report.method_order if m in ONLINE_METHODS]
    if online:
        lines += ["", "| scenario | n_T | " + " | ".join(f"{METHOD_LABELS[m]} alpha" for m in online) + " |",
                  "|" + "---|" * (2 + len(online))]
        for row in report.rows:
            cells = [f"{_sig2(row.methods[m].alpha_mean)} ({_sig2(row.methods[m].alpha_se)})"
                     for m in online]
            lines.append(f"| {row.scenario} | {row.n_T} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(report: AggregateReport, fmt: str, path) -> Path:
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "markdown":
        text = report_markdown(report)
    else:
        raise ConfigurationError(f"report format must be csv or markdown, got {fmt!r}")
    path = Path(path)
    path.write_text(text)
    return path


def parse_report_csv(text: str) -> list[dict]:
    """Read an emitted CSV back into numbers (``None`` for NA)."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        out = {}
        for k, v in rec.items():
            if k == "scenario":
                out[k] = v
            elif k == "n_T":
                out[k] = int(v)
            elif v == "NA":
                out[k] = None
            elif k.endswith("_coverage"):
                out[k] = [float(c) for c in v.split(";")]
            else:
                out[k] = float(v)
        rows.append(out)
    return rows


__all__ = [
    "ScenarioSpec", "load_scenario", "bundled_scenarios", "generate_source_params",
    "online_t1_params", "generate_target_params", "generate_dataset", "run_replication",
    "run_scenario", "aggregate", "AggregateReport", "MethodAggregate", "ReplicationResult",
    "MethodResult", "emit_report", "report_csv", "report_markdown", "parse_report_csv",
    "format_cell", "METHODS",
]
