"""Command-line entry point: ``bayesps {analyze,simulate,diagnose}``.

Exit codes: 0 ran (possibly with statistical warnings), 1 input or config
error, 2 internal failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bart import BartConfig, fit_bart_probit
from .baselines import EstimationError, bootstrap_ipw, fit_logistic_mle, ipw_mle, naive_estimate
from .data import DataError, load_dataset, standardize_continuous
from .diagnostics import (ate_weights, balance_posterior, posterior_mean_weights,
                          weight_summary)
from .mcmc import HMCConfig, SamplerError, effective_sample_size, rhat
from .outcome import MODES, OutcomeHyper, ate_posterior, posterior_report
from .simulation import PRESETS, ScenarioSpec, StudyConfig, preset, run_study, study_meta, \
    write_metrics_csv
from .treatment import RHAT_THRESHOLD, PriorSpec, PropensityDraws, fit_treatment_model

MODELS = ("student_t", "horseshoe", "bart", "ipw", "naive", "bootstrap_ipw")
BAYES_MODELS = ("student_t", "horseshoe", "bart")
WORKERS_ENV = "CAUSAL_PS_WORKERS"

DEFAULTS = {
    "model": "horseshoe",
    "mode": "integrated",
    "chains": 4,
    "warmup": 1000,
    "samples": 1000,
    "thin": 1000,
    "J": 10,
    "level": 0.95,
    "hyper": {"a00": 1.0, "a01": 1.0, "a10": 1.0, "a11": 1.0},
    "prior": {},
    "bart": {},
    "bootstrap_B": 2000,
    "ps_confounders": None,
}


class ConfigError(ValueError):
    pass


def _dump(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _clean(v):
    """Replace non-finite floats by None so JSON stays strict."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def _workers(args) -> int:
    if args.workers is not None:
        w = args.workers
    else:
        env = os.environ.get(WORKERS_ENV)
        try:
            w = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if w < 1:
        raise ConfigError("workers must be >= 1")
    return w


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def run_config(args) -> dict:
    """Merge defaults, the ``--config`` file and command-line flags (flags win)."""
    cfg = dict(DEFAULTS)
    cfg.update(_load_config(args.config))
    for key in ("data", "schema", "model", "mode", "seed", "chains", "warmup", "samples", "thin",
                "J"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if cfg["model"] not in MODELS:
        raise ConfigError(f"unknown model {cfg['model']!r}; choose from {', '.join(MODELS)}")
    if cfg["mode"] not in MODES:
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    for key in ("data", "schema"):
        if not cfg.get(key):
            raise ConfigError(f"missing required input: --{key}")
    stochastic = cfg["model"] not in ("naive", "ipw")
    if stochastic and cfg.get("seed") is None:
        raise ConfigError("a seed is required for stochastic runs (--seed)")
    return cfg


def _prepare(cfg):
    d = load_dataset(cfg["data"], cfg["schema"])
    if cfg["model"] == "horseshoe" and any(c.kind == "continuous" for c in d.columns):
        d = standardize_continuous(d)
    return d


def _fit_bayes(d, cfg, workers) -> PropensityDraws:
    seed = int(cfg["seed"])
    if cfg["model"] == "bart":
        b = dict(cfg.get("bart") or {})
        b.setdefault("seed", seed)
        b["workers"] = workers
        return fit_bart_probit(d, BartConfig(**b))
    prior_kw = dict(cfg.get("prior") or {})
    prior = PriorSpec(variant=cfg["model"], **prior_kw) if prior_kw else (
        PriorSpec.student_t() if cfg["model"] == "student_t" else PriorSpec.horseshoe())
    hmc = HMCConfig(chains=int(cfg["chains"]), warmup=int(cfg["warmup"]),
                    samples=int(cfg["samples"]), seed=seed, workers=workers)
    return fit_treatment_model(d, prior, hmc, thin=int(cfg["thin"]))


def _convergence(pd: PropensityDraws) -> dict:
    out = {"model": pd.model, "rhat_threshold": RHAT_THRESHOLD}
    if pd.chains is not None:
        ch = pd.chains
        r = rhat(ch) if ch.n_chains >= 2 else None
        ess = effective_sample_size(ch)
        out.update({
            "chains": ch.n_chains,
            "draws_per_chain": ch.n_samples,
            "max_rhat": None if r is None else float(np.max(r)),
            "min_ess": float(np.min(ess)),
            "divergences": int(ch.divergent.sum()),
            "step_size": [float(s) for s in ch.step_size],
        })
    else:
        # BART: summarize through the mean propensity per retained draw
        chains = pd.meta.get("config", {}).get("chains", 1)
        m = pd.pi.mean(axis=1).reshape(chains, -1)
        out.update({
            "chains": chains,
            "draws_per_chain": m.shape[1],
            "max_rhat": float(rhat(m[:, :, None])[0]) if chains >= 2 else None,
            "min_ess": float(effective_sample_size(m[:, :, None])[0]),
            "summary": "mean propensity per draw",
        })
    mr = out.get("max_rhat")
    out["warning"] = bool(mr is not None and mr >= RHAT_THRESHOLD)
    return out


def cmd_analyze(args) -> int:
    cfg = run_config(args)
    workers = _workers(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = _prepare(cfg)
    model = cfg["model"]
    base = {"model": model, "n": d.n, "p": d.p, "seed": cfg.get("seed")}
    if model in BAYES_MODELS:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pd = _fit_bayes(d, cfg, workers)
        h = OutcomeHyper(**cfg["hyper"])
        rng = np.random.default_rng(np.random.SeedSequence(int(cfg["seed"]), spawn_key=(1,)))
        ap = ate_posterior(d, pd, mode=cfg["mode"], J=int(cfg["J"]), h=h, rng=rng)
        est = {**base, **posterior_report(ap, level=float(cfg["level"]))}
        conv = _convergence(pd)
        est["convergence_warning"] = conv["warning"]
        _dump(_clean(conv), out / "convergence.json")
    elif model == "naive":
        est = {**base, **naive_estimate(d).as_dict()}
    elif model == "ipw":
        est = {**base, **ipw_mle(d).as_dict()}
    else:
        rng = np.random.default_rng(np.random.SeedSequence(int(cfg["seed"]), spawn_key=(1,)))
        est = {**base, **bootstrap_ipw(d, B=int(cfg["bootstrap_B"]), rng=rng,
                                       workers=workers).as_dict()}
    _dump(_clean(est), out / "estimate.json")
    return 0


def _ps_for_diagnostics(d, cfg, args, workers):
    if args.constant_ps is not None:
        c = float(args.constant_ps)
        if not 0 < c < 1:
            raise ConfigError("--constant-ps must lie in (0, 1)")
        return np.full((1, d.n), c), None
    model = cfg["model"]
    sub = cfg.get("ps_confounders")
    if sub is not None:
        # fit on a subset; balance is still checked on every schema confounder
        missing = [nm for nm in sub if nm not in d.names]
        if missing:
            raise ConfigError(f"ps_confounders not in schema: {', '.join(missing)}")
        fit_d = d.select([d.names.index(nm) for nm in sub])
    else:
        fit_d = d
    if model in BAYES_MODELS:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pd = _fit_bayes(fit_d, cfg, workers)
        return pd.pi, pd
    if model in ("ipw", "bootstrap_ipw"):
        fit = fit_logistic_mle(fit_d.design(), fit_d.treatment)
        if not fit.converged:
            raise EstimationError("logistic propensity model did not converge")
        return np.clip(fit.fitted, 1e-15, 1 - 1e-15)[None, :], None
    raise ConfigError("diagnose needs a propensity model (not 'naive') or --constant-ps")


def cmd_diagnose(args) -> int:
    if args.constant_ps is not None and args.seed is None:
        args.seed = 0  # no randomness is used when the scores are injected
    cfg = run_config(args)
    workers = _workers(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d = _prepare(cfg)
    pi, pd = _ps_for_diagnostics(d, cfg, args, workers)
    report = balance_posterior(d, pi)
    report.to_csv(out / "balance.csv")
    w = ate_weights(d, pi).mean(axis=0) if pd is None else posterior_mean_weights(d, pd)
    pi_mean = pi.mean(axis=0)
    with open(out / "weights.csv", "w") as fh:
        fh.write("subject,treatment,pi_mean,weight\n")
        for i in range(d.n):
            fh.write(f"{i + 1},{int(d.treatment[i])},{float(pi_mean[i])!r},{float(w[i])!r}\n")
    ws = weight_summary(w, d.treatment)
    summary = _clean({**ws.__dict__, "balance_acceptable": report.acceptable,
                      "draws": int(pi.shape[0]), "model": "constant" if args.constant_ps else
                      cfg["model"]})
    _dump(summary, out / "weight_summary.json")
    if pd is not None:
        _dump(_clean(_convergence(pd)), out / "convergence.json")
    return 0


def _study_config(args) -> tuple[list[tuple[ScenarioSpec, StudyConfig]], str]:
    raw = _load_config(args.config)
    name = args.preset or raw.get("preset")
    overrides = dict(raw.get("study") or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replications is not None:
        overrides["R"] = args.replications
    overrides["workers"] = _workers(args)
    try:
        if name is not None:
            if name not in PRESETS:
                raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
            base = preset(name)
            jobs = []
            for spec, cfg in base:
                kw = {**cfg.__dict__, **overrides}
                jobs.append((spec, StudyConfig(**kw)))
            return jobs, name
        if "scenario" not in raw:
            raise ConfigError("simulate needs --preset or a config with a 'scenario' object")
        spec = ScenarioSpec(**raw["scenario"])
        return [(spec, StudyConfig(**overrides))], spec.name
    except TypeError as e:
        raise ConfigError(f"invalid study configuration: {e}") from None


def cmd_simulate(args) -> int:
    jobs, name = _study_config(args)
    if any(cfg.seed is None for _, cfg in jobs):
        raise ConfigError("a seed is required for stochastic runs (--seed)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = []
    metas = []
    for spec, cfg in jobs:
        tab = run_study(spec, cfg)
        tables.append((spec.name, tab))
        metas.append(study_meta(spec, cfg, tab))
    write_metrics_csv(out / "metrics.csv", tables)
    _dump(_clean({"preset": name, "scenarios": metas}), out / "study_meta.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bayesps",
                                 description="Bayesian propensity-score ATE estimation.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="random seed (required for stochastic runs)")
        p.add_argument("--workers", type=int, help=f"parallel workers (fallback: ${WORKERS_ENV})")
        p.add_argument("--out", required=True, help="output directory")

    def data_args(p):
        p.add_argument("--data", help="input CSV")
        p.add_argument("--schema", help="schema JSON")
        p.add_argument("--model", choices=MODELS)
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--chains", type=int)
        p.add_argument("--warmup", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--thin", type=int, help="maximum number of propensity draws kept")
        p.add_argument("--J", type=int, help="outcome draws per propensity draw")

    a = sub.add_parser("analyze", help="estimate the ATE on a dataset")
    common(a)
    data_args(a)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a simulation study")
    common(s)
    s.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    s.add_argument("--replications", type=int, help="override the replication count")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("diagnose", help="balance and weight diagnostics")
    common(g)
    data_args(g)
    g.add_argument("--constant-ps", type=float, help="debug: use this propensity for everyone")
    g.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        for v in getattr(e, "violations", None) or []:
            print(f"  - {v}", file=sys.stderr)
        return 1
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (EstimationError, SamplerError) as e:
        print(f"estimation failed: {e}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
