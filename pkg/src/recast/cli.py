"""Command-line entry point: ``recast <command> [options]``.

Commands
--------
fit-source      ridge source model from a CSV, written as a JSON artifact
fit-target      posterior chain, diagnostics and posterior summary for a target CSV
predict         point predictions, predictive quantiles and coverage for a feature CSV
simulate        run a scenario file (or a bundled scenario) and write CSV/markdown reports
summarize-chain diagnostics table for a saved chain, optionally a posterior summary

Options can also come from ``--config FILE`` (JSON or TOML). Keys match the
long option names (dashes or underscores); a table named after the command
overrides top-level keys, and explicit flags override both. ``prior``,
``sampler`` and ``predictive`` tables pass through to :class:`PriorSpec`,
:class:`SamplerConfig` and :class:`PredictiveConfig`.

Exit status is 0 on success, 1 on a recast error, 2 on bad usage and 3
when ``fit-target`` finishes with some effective sample size below 100.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import PriorSpec
from .errors import ConfigurationError, DiagnosticsError, RecastError, SchemaError
from .online import AlphaPrior, OnlinePrior, PosteriorSummary, build_posterior_summary
from .predictive import (COPULA_MODES, COVERAGE_RULES, PredictiveConfig, elliptical_coverage,
                         point_prediction, sample_predictive)
from .samplers import PosteriorChain, SamplerConfig, chain_diagnostics, rw_metropolis
from .simulation import (ONLINE_METHODS, ScenarioSpec, bundled_scenarios, emit_report,
                         load_scenario, run_scenario)
from .source_model import fit_ridge, load_model, read_csv_dataset, read_csv_features, save_model

log = logging.getLogger("recast")

MIN_ESS = 100
EXIT_ERROR, EXIT_USAGE, EXIT_DIAGNOSTICS = 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

REQUIRED = {"fit-source": ("data", "outcomes", "out"),
            "fit-target": ("source", "data", "out_dir"),
            "predict": ("source", "chain", "data", "out"),
            "simulate": ("scenario", "out_dir"),
            "summarize-chain": ("chain",)}
DEFAULTS = {
    "fit-source": {"data": None, "outcomes": None, "out": None, "cv_folds": 10,
                   "penalty_grid": None, "seed": 0},
    "fit-target": {"source": None, "data": None, "outcomes": "", "model": "mv_cauchy",
                   "out_dir": None, "summaries": [], "alpha_prior": "uniform", "seed": 0,
                   "iterations": None, "burnin": None, "thin": None, "chain_format": "npz",
                   "kde": False},
    "predict": {"source": None, "chain": None, "data": None, "out": None, "alpha": 0.05,
                "quantiles": "0.025,0.5,0.975", "seed": 0, "workers": 1,
                "coverage_rule": "solid", "copula_prediction": "coupled",
                "n_post": None, "n_beta": None, "n_Y": None},
    "simulate": {"scenario": None, "out_dir": None, "seed": None, "workers": 1,
                 "replications": None, "coverage_rule": None, "copula_prediction": None,
                 "full_scale": False},
    "summarize-chain": {"chain": None, "out": None, "kde": False},
}


def _configure_logging():
    name = os.environ.get("RECAST_LOG", "info").strip().lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if level is None:
        log.warning("RECAST_LOG=%r not recognized; using info (choose error, info or debug)", name)


def _read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None


def _norm(d: dict) -> dict:
    return {k.replace("-", "_"): v for k, v in d.items()}


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Merge command defaults, config file values and explicit flags (flags win)."""
    cfg = _read_config(args.config) if args.config else {}
    section = _norm(cfg.get(command, {}))
    top = _norm({k: v for k, v in cfg.items() if not isinstance(v, dict) or k in
                 ("prior", "sampler", "predictive")})
    merged = dict(DEFAULTS[command])
    for source in (top, section):
        for k, v in source.items():
            if k in merged or k in ("prior", "sampler", "predictive"):
                merged[k] = v
    for k in DEFAULTS[command]:
        v = getattr(args, k, None)
        if v is not None and v is not False and v != []:
            merged[k] = v
    missing = [k for k in REQUIRED[command] if merged.get(k) in (None, "", [])]
    if missing:
        raise ConfigurationError(f"{command}: missing required option(s) "
                                 + ", ".join("--" + k.replace("_", "-") for k in missing))
    return merged


def _csv_list(value) -> list:
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _require_file(path, what) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"{what} {p} does not exist")
    return p


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# --- fit-source ---------------------------------------------------------------

def cmd_fit_source(opt: dict) -> int:
    data = read_csv_dataset(_require_file(opt["data"], "data file"), _csv_list(opt["outcomes"]))
    grid = None if opt["penalty_grid"] is None else [float(v) for v in _csv_list(opt["penalty_grid"])]
    model = fit_ridge(data, grid, cv_folds=int(opt["cv_folds"]), seed=int(opt["seed"]))
    out = Path(opt["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    summary = {"n": data.n, "p": data.p, "m": data.m, "lambda": model.lam,
               "cv_folds": int(opt["cv_folds"]), "outcomes": data.outcome_names}
    _write_json(out.with_name(out.stem + "_fit.json"), summary)
    log.info("source model (lambda=%.4g) written to %s", model.lam, out)
    return 0


# --- fit-target ---------------------------------------------------------------

def _alpha_prior(text) -> AlphaPrior:
    if isinstance(text, dict):
        return AlphaPrior(text.get("kind", "uniform"), tuple(text.get("params", ())))
    kind, _, rest = str(text).partition(":")
    return AlphaPrior(kind.strip(), tuple(float(v) for v in _csv_list(rest)))


def _sampler_config(opt) -> SamplerConfig:
    d = dict(opt.get("sampler", {}))
    for flag, key in (("iterations", "n_iterations"), ("burnin", "n_burnin"), ("thin", "thin")):
        if opt.get(flag) is not None:
            d[key] = int(opt[flag])
    d["seed"] = int(opt["seed"])
    try:
        return SamplerConfig(**d)
    except TypeError as exc:
        raise ConfigurationError(f"bad sampler block: {exc}") from None


def cmd_fit_target(opt: dict) -> int:
    source = load_model(_require_file(opt["source"], "source artifact"))
    outcomes = _csv_list(opt["outcomes"]) or list(source.outcome_names)
    if len(outcomes) != source.m:
        raise SchemaError(f"source model has {source.m} outcomes, target lists {len(outcomes)}")
    data = read_csv_dataset(_require_file(opt["data"], "target data"), outcomes,
                            feature_columns=source.feature_names)
    prior = PriorSpec.from_dict({"m": source.m, **opt.get("prior", {})})
    online = None
    paths = _csv_list(opt["summaries"])
    if paths:
        comps = [PosteriorSummary.load(_require_file(p, "posterior summary")) for p in paths]
        online = OnlinePrior(comps, prior, _alpha_prior(opt["alpha_prior"]))
    cfg = _sampler_config(opt)
    rng = np.random.default_rng(cfg.seed)
    # the online prior already carries the base prior
    base = None if online is not None else prior
    chain = rw_metropolis(opt["model"], data, source, prior=base, online_prior=online,
                          config=cfg, rng=rng)
    out = Path(opt["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    chain.save(out / "chain", fmt=opt["chain_format"])
    try:
        diag = chain_diagnostics(chain)
    except DiagnosticsError as exc:
        log.error("%s", exc)
        return EXIT_DIAGNOSTICS
    _write_json(out / "diagnostics.json", _json_clean(diag))
    try:
        build_posterior_summary(chain, kde=bool(opt["kde"])).save(out / "summary.json")
    except RecastError as exc:
        log.warning("no posterior summary written: %s", exc)
    low = {k: v for k, v in diag["ess"].items() if v < MIN_ESS}
    if chain.alpha is not None:
        log.info("posterior mean alpha %.3f", float(np.mean(chain.alpha)))
    if low:
        log.error("effective sample size below %d for %s", MIN_ESS,
                  ", ".join(f"{k} ({v:.0f})" for k, v in low.items()))
        return EXIT_DIAGNOSTICS
    log.info("chain with %d draws written to %s", len(chain), out)
    return 0


def _json_clean(obj):
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# --- predict ------------------------------------------------------------------

def _predict_point(job):
    kind, chain, f_val, pcfg, seed_seq, quantiles, truth, alpha, rule = job
    rng = np.random.default_rng(seed_seq)
    samp = sample_predictive(kind, chain, None, config=pcfg, rng=rng, f_val=f_val)
    point = point_prediction(samp)
    q = np.quantile(samp.samples, quantiles, axis=0)
    covered = None
    if truth is not None:
        covered = elliptical_coverage(samp, truth, alpha, rule).covered
    return point, q, covered


def cmd_predict(opt: dict) -> int:
    alpha = float(opt["alpha"])
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if opt["coverage_rule"] not in COVERAGE_RULES:
        raise ConfigurationError(f"coverage rule must be one of {COVERAGE_RULES}")
    source = load_model(_require_file(opt["source"], "source artifact"))
    chain_path = Path(opt["chain"])
    _require_file(chain_path.with_suffix(".json"), "chain sidecar")
    chain = PosteriorChain.load(chain_path)
    if chain.m != source.m:
        raise SchemaError(f"chain has m={chain.m}, source model has m={source.m}")
    quantiles = [float(v) for v in _csv_list(opt["quantiles"])]
    if any(not 0 < q < 1 for q in quantiles):
        raise ConfigurationError("quantile levels must lie in (0, 1)")
    pblock = dict(opt.get("predictive", {}))
    for k in ("n_post", "n_beta", "n_Y"):
        if opt.get(k) is not None:
            pblock[k] = int(opt[k])
    pblock["copula_mode"] = opt["copula_prediction"]
    try:
        pcfg = PredictiveConfig(**pblock)
    except TypeError as exc:
        raise ConfigurationError(f"bad predictive block: {exc}") from None
    X, Y, truth_cols = read_csv_features(_require_file(opt["data"], "feature file"),
                                         source.feature_names, source.outcome_names)
    names = list(source.outcome_names)
    if Y is not None and len(truth_cols) != len(names):
        log.warning("only some truth columns present (%s); coverage skipped", truth_cols)
        Y = None
    F = source.predict(X) if X.shape[0] else np.zeros((0, source.m))
    seeds = np.random.SeedSequence(int(opt["seed"])).spawn(X.shape[0])
    jobs = [(chain.kind, chain, F[i], pcfg, seeds[i], quantiles,
             None if Y is None else Y[i], alpha, opt["coverage_rule"]) for i in range(X.shape[0])]
    workers = max(1, int(opt["workers"]))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_predict_point, jobs))
    else:
        results = [_predict_point(j) for j in jobs]
    header = ["row"] + [f"pred_{n}" for n in names]
    header += [f"q{q:g}_{n}" for q in quantiles for n in names]
    if Y is not None:
        header.append("covered")
    out = Path(opt["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, (point, q, cov) in enumerate(results):
            row = [str(i)] + [repr(float(v)) for v in point]
            row += [repr(float(v)) for v in q.ravel()]
            if Y is not None:
                row.append(str(int(cov)))
            w.writerow(row)
        if Y is not None and results:
            k = sum(int(r[2]) for r in results)
            fh.write(f"# coverage {100.0 * k / len(results):.1f}% ({k}/{len(results)}) "
                     f"at alpha={alpha:g}, rule={opt['coverage_rule']}\n")
    log.info("%d predictions written to %s", len(results), out)
    return 0


# --- simulate -----------------------------------------------------------------

def _scenario(ref) -> ScenarioSpec:
    bundled = bundled_scenarios()
    if str(ref) in bundled:
        return load_scenario(bundled[str(ref)])
    p = Path(ref)
    if not p.is_file():
        raise ConfigurationError(f"scenario {ref!r} is neither a file nor a bundled scenario "
                                 f"({', '.join(bundled)})")
    return load_scenario(p)


def cmd_simulate(opt: dict) -> int:
    spec = _scenario(opt["scenario"])
    d = spec.to_dict()
    if opt["seed"] is not None:
        d["seed"] = int(opt["seed"])
    if opt["replications"] is not None:
        d["n_replications"] = int(opt["replications"])
    if opt["coverage_rule"] is not None:
        d["coverage_rule"] = opt["coverage_rule"]
    if opt["copula_prediction"] is not None:
        d["predictive"] = {**d["predictive"], "copula_mode": opt["copula_prediction"]}
    spec = ScenarioSpec.from_dict(d)
    if opt["full_scale"]:
        spec = spec.full_scale()
    out = Path(opt["out_dir"])
    out.mkdir(parents=True, exist_ok=True)

    def progress(rep):
        log.info("replication %d (n_T=%d) done%s", rep.index, rep.n_T,
                 f", failures: {sorted(rep.failures)}" if rep.failures else "")

    report = run_scenario(spec, workers=int(opt["workers"]), progress=progress)
    emit_report(report, "csv", out / f"{spec.name}.csv")
    emit_report(report, "markdown", out / f"{spec.name}.md")
    for row in report.rows:
        for mth in report.method_order:
            if mth in ONLINE_METHODS and row.methods[mth].alpha_mean is not None:
                log.info("%s n_T=%d %s: mean alpha %.3f", spec.name, row.n_T, mth,
                         row.methods[mth].alpha_mean)
    log.info("reports written to %s", out)
    return 0


# --- summarize-chain ----------------------------------------------------------

def cmd_summarize_chain(opt: dict) -> int:
    chain = PosteriorChain.load(opt["chain"])
    diag = chain_diagnostics(chain)
    names, X = chain.scalar_draws()
    print(f"{'parameter':<22} {'mean':>11} {'sd':>11} {'ess':>8} {'rhat':>7}")
    for j, name in enumerate(names):
        r = diag["rhat"][name]
        print(f"{name:<22} {X[:, j].mean():>11.4g} {X[:, j].std(ddof=1):>11.4g} "
              f"{diag['ess'][name]:>8.0f} {r if np.isfinite(r) else float('nan'):>7.3f}")
    for block, rate in chain.diagnostics.get("acceptance", {}).items():
        print(f"acceptance {block}: {rate:.3f}")
    if chain.alpha is not None:
        print(f"posterior mean alpha: {float(np.mean(chain.alpha)):.4f}")
    if opt["out"]:
        build_posterior_summary(chain, kde=bool(opt["kde"])).save(opt["out"])
    return 0


COMMANDS = {"fit-source": cmd_fit_source, "fit-target": cmd_fit_target, "predict": cmd_predict,
            "simulate": cmd_simulate, "summarize-chain": cmd_summarize_chain}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON or TOML option file")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--workers", type=int, help="concurrent replications or test points")
    common.add_argument("--coverage-rule", choices=COVERAGE_RULES)
    common.add_argument("--copula-prediction", choices=COPULA_MODES)
    common.add_argument("--full-scale", action="store_true",
                        help="simulate: 100 replications with the long sampler budget")

    parser = argparse.ArgumentParser(prog="recast", description="Bayesian recalibration of a "
                                     "source regression model for a target population.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-source", parents=[common], help="fit the ridge source model")
    p.add_argument("--data", help="source CSV with a header row")
    p.add_argument("--outcomes", help="comma-separated outcome columns")
    p.add_argument("--out", help="model artifact path (JSON)")
    p.add_argument("--cv-folds", type=int)
    p.add_argument("--penalty-grid", help="comma-separated penalties (default: log grid)")

    p = sub.add_parser("fit-target", parents=[common], help="sample the target posterior")
    p.add_argument("--source", help="source model artifact")
    p.add_argument("--data", help="target CSV")
    p.add_argument("--outcomes", help="outcome columns (default: the source model's)")
    p.add_argument("--model", choices=("mv_cauchy", "copula"))
    p.add_argument("--out-dir")
    p.add_argument("--summaries", nargs="*", help="posterior summaries for an online prior")
    p.add_argument("--alpha-prior", help="uniform, beta:a,b or dirichlet:c1,c2,...")
    p.add_argument("--iterations", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--chain-format", choices=("npz", "csv"))
    p.add_argument("--kde", action="store_true", help="store a KDE summary as well")

    p = sub.add_parser("predict", parents=[common], help="posterior-predictive inference")
    p.add_argument("--source")
    p.add_argument("--chain", help="chain path (with or without suffix)")
    p.add_argument("--data", help="feature CSV; truth columns enable coverage")
    p.add_argument("--out", help="predictions CSV")
    p.add_argument("--alpha", type=float)
    p.add_argument("--quantiles", help="comma-separated levels")
    p.add_argument("--n-post", type=int)
    p.add_argument("--n-beta", type=int)
    p.add_argument("--n-Y", dest="n_Y", type=int)

    p = sub.add_parser("simulate", parents=[common], help="run a simulation scenario")
    p.add_argument("--scenario", help="scenario file or bundled scenario name")
    p.add_argument("--out-dir")
    p.add_argument("--replications", type=int)

    p = sub.add_parser("summarize-chain", parents=[common], help="chain diagnostics")
    p.add_argument("--chain")
    p.add_argument("--out", help="write a posterior summary here")
    p.add_argument("--kde", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging()
    try:
        opt = resolve_options(args.command, args)
        return COMMANDS[args.command](opt)
    except RecastError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
