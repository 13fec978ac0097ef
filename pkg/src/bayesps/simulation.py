"""Scenario generators and the replication harness for simulation studies."""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

from .baselines import bootstrap_ipw, ipw_mle, naive_estimate
from .bart import BartConfig, fit_bart_probit
from .data import Dataset, standardize_continuous
from .mcmc import HMCConfig
from .outcome import MODES, OutcomeHyper, ate_posterior, summarize
from .treatment import PriorSpec, fit_treatment_model

BAYES = ("student_t", "horseshoe", "bart")
FREQ = ("ipw", "naive", "bootstrap_ipw")
ESTIMATORS = BAYES + FREQ


def _expit(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


@dataclass(frozen=True)
class ScenarioSpec:
    """Logistic treatment and outcome laws over independent confounders.

    ``visible`` lists the confounder columns handed to estimators (all of them
    when None); ``noise`` appends that many independent standard-normal
    columns that play no role in either law.
    """

    n: int
    beta_x: tuple
    beta0_x: float
    beta_y: tuple
    beta0_y: float
    beta_tr: float
    law: str = "normal"
    prevalence: tuple | None = None
    visible: tuple | None = None
    noise: int = 0
    name: str = "custom"
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "beta_x", tuple(float(v) for v in self.beta_x))
        object.__setattr__(self, "beta_y", tuple(float(v) for v in self.beta_y))
        p = len(self.beta_x)
        if len(self.beta_y) != p:
            raise ValueError("beta_x and beta_y must have the same length")
        if self.law not in ("normal", "bernoulli"):
            raise ValueError(f"unknown confounder law {self.law!r}")
        if self.law == "bernoulli":
            if self.prevalence is None or len(self.prevalence) != p:
                raise ValueError("bernoulli law needs one prevalence per confounder")
            object.__setattr__(self, "prevalence", tuple(float(v) for v in self.prevalence))
            if not all(0 < v < 1 for v in self.prevalence):
                raise ValueError("prevalences must lie in (0, 1)")
        if self.visible is not None:
            object.__setattr__(self, "visible", tuple(int(v) for v in self.visible))
            if not set(self.visible) <= set(range(p)):
                raise ValueError("visible set must index existing confounders")
        if self.n < 1 or self.noise < 0:
            raise ValueError("n must be >= 1 and noise >= 0")

    @property
    def p(self) -> int:
        return len(self.beta_x)

    @property
    def n_zero_x(self) -> int:
        return sum(v == 0 for v in self.beta_x)

    def draw_confounders(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if self.law == "normal":
            return rng.standard_normal((m, self.p))
        return (rng.random((m, self.p)) < np.asarray(self.prevalence)).astype(float)

    def to_dict(self) -> dict:
        return asdict(self)


def simple_spec(variant: str = "correct", n: int = 100) -> ScenarioSpec:
    """Two standard-normal confounders, ``logit P(X) = .5 C1 + .5 C2`` and
    ``logit P(Y) = X - .5 C1 - .5 C2``."""
    if variant not in ("correct", "over", "under"):
        raise ValueError(f"unknown variant {variant!r}")
    return ScenarioSpec(n=n, beta_x=(0.5, 0.5), beta0_x=0.0, beta_y=(-0.5, -0.5), beta0_y=0.0,
                        beta_tr=1.0, visible=(0,) if variant == "under" else None,
                        noise=8 if variant == "over" else 0, name=f"simple/{variant}")


def simulate(spec: ScenarioSpec, rng: np.random.Generator) -> Dataset:
    """One dataset from ``spec``; estimators see only the visible (plus noise) columns."""
    C = spec.draw_confounders(spec.n, rng)
    x = (rng.random(spec.n) < _expit(spec.beta0_x + C @ np.asarray(spec.beta_x))).astype(float)
    eta_y = spec.beta0_y + spec.beta_tr * x + C @ np.asarray(spec.beta_y)
    y = (rng.random(spec.n) < _expit(eta_y)).astype(float)
    vis = list(range(spec.p)) if spec.visible is None else list(spec.visible)
    cols = [C[:, vis]]
    names = [f"C{j + 1}" for j in vis]
    if spec.noise:
        cols.append(rng.standard_normal((spec.n, spec.noise)))
        names += [f"N{j + 1}" for j in range(spec.noise)]
    kind = "continuous" if spec.law == "normal" else "binary"
    kinds = [kind] * len(vis) + ["continuous"] * spec.noise
    return Dataset.from_arrays(x, y, np.hstack(cols), names, kinds)


def gen_simple(n: int, variant: str, rng: np.random.Generator) -> tuple[Dataset, ScenarioSpec]:
    if n < 20:
        raise ValueError("n must be >= 20")
    spec = simple_spec(variant, n)
    return simulate(spec, rng), spec


def gen_highdim(spec: ScenarioSpec, rng: np.random.Generator) -> Dataset:
    return simulate(spec, rng)


def true_ate_oracle(spec: ScenarioSpec, n_mc: int = 1_000_000, rng: np.random.Generator | None = None,
                    batch: int = 100_000) -> tuple[float, float]:
    """Monte Carlo ATE over fresh confounder draws; returns (estimate, standard error)."""
    if n_mc < 100_000:
        raise ValueError("n_mc must be >= 1e5")
    rng = rng if rng is not None else np.random.default_rng(0)
    by = np.asarray(spec.beta_y)
    s = ss = 0.0
    shift = None
    done = 0
    while done < n_mc:
        m = min(batch, n_mc - done)
        eta = spec.beta0_y + spec.draw_confounders(m, rng) @ by
        diff = _expit(eta + spec.beta_tr) - _expit(eta)
        if shift is None:
            shift = float(diff[0])
        # shifted sums keep the variance free of cancellation error
        dev = diff - shift
        s += dev.sum()
        ss += (dev ** 2).sum()
        done += m
    mdev = s / n_mc
    var = max(ss / n_mc - mdev ** 2, 0.0)
    return float(shift + mdev), float(math.sqrt(var / n_mc))


# ---------------------------------------------------------------- presets


def _load_highdim() -> dict:
    with resources.files("bayesps").joinpath("presets/highdim.json").open() as fh:
        return json.load(fh)


def highdim_spec(name: str) -> ScenarioSpec:
    raw = _load_highdim()[name]
    return ScenarioSpec(n=raw["n"], beta_x=raw["beta_x"], beta0_x=raw["beta0_x"],
                        beta_y=raw["beta_y"], beta0_y=raw["beta0_y"], beta_tr=raw["beta_tr"],
                        law=raw["law"], prevalence=raw["prevalence"], name=name, note=raw["note"])


@dataclass
class StudyConfig:
    """Everything a study needs besides the scenario: estimators, budgets, seed."""

    estimators: tuple = ("student_t", "horseshoe", "bart", "ipw", "naive")
    modes: tuple = MODES
    R: int = 200
    seed: int = 0
    J: int = 10
    K: int = 1000
    chains: int = 2
    warmup: int = 500
    samples: int = 500
    bart_trees: int = 200
    bart_burn: int = 500
    bart_draws: int = 1000
    bootstrap_B: int = 2000
    workers: int = 1
    n_mc: int = 1_000_000

    def __post_init__(self):
        self.estimators = tuple(self.estimators)
        self.modes = tuple(self.modes)
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimator(s): {', '.join(bad)}")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown mode(s): {', '.join(bad)}")
        if self.R < 2:
            raise ValueError("R must be >= 2")

    def labels(self) -> list[str]:
        out = []
        for e in self.estimators:
            if e in BAYES:
                out += [f"{e}/{m}" for m in self.modes]
            else:
                out.append(e)
        return out


PRESETS = ("table2", "table3", "sparse")


def preset(name: str, **overrides) -> list[tuple[ScenarioSpec, StudyConfig]]:
    """Scenario(s) and default study settings for a named preset.

    ``table2`` expands to the three simple-scenario variants with the
    Student-t logistic model; ``table3`` and ``sparse`` are the
    high-dimensional binary-confounder designs.
    """
    if name == "table2":
        cfg = StudyConfig(**{"estimators": ("student_t",), "R": 4000, "K": 1000, **overrides})
        return [(simple_spec(v, 100), cfg) for v in ("correct", "over", "under")]
    if name in ("table3", "sparse"):
        cfg = StudyConfig(**{"estimators": ("student_t", "horseshoe", "bart", "ipw", "naive"),
                             "R": 200, **overrides})
        return [(highdim_spec(name), cfg)]
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


# ---------------------------------------------------------------- harness


def _child_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def replicate(spec: ScenarioSpec, cfg: StudyConfig, r: int) -> dict:
    """One replication: fresh data, every estimator, returns label -> (point, lo, hi) or None.

    Streams derive from ``SeedSequence(cfg.seed, spawn_key=(r,))`` so the
    result does not depend on which worker runs it or in what order.
    """
    root = np.random.SeedSequence(cfg.seed, spawn_key=(r,))
    data_ss, *est_ss = root.spawn(1 + len(cfg.estimators))
    d = simulate(spec, np.random.default_rng(data_ss))
    out = {}
    for name, ss in zip(cfg.estimators, est_ss):
        fit_ss, *mode_ss = ss.spawn(1 + len(cfg.modes))
        try:
            if name in BAYES:
                pd = _fit_bayes(name, d, cfg, _child_int(fit_ss))
                for mode, ms in zip(cfg.modes, mode_ss):
                    try:
                        ap = ate_posterior(d, pd, mode=mode, J=cfg.J, h=OutcomeHyper(),
                                           rng=np.random.default_rng(ms))
                        s = summarize(ap)
                        out[f"{name}/{mode}"] = (s["mean"], s["lower"], s["upper"])
                    except Exception:
                        out[f"{name}/{mode}"] = None
            elif name == "naive":
                e = naive_estimate(d)
                out[name] = (e.point, e.lower, e.upper)
            elif name == "ipw":
                e = ipw_mle(d)
                out[name] = (e.point, e.lower, e.upper)
            else:
                e = bootstrap_ipw(d, B=cfg.bootstrap_B, rng=np.random.default_rng(fit_ss))
                out[name] = (e.point, e.lower, e.upper)
        except Exception:
            if name in BAYES:
                for mode in cfg.modes:
                    out[f"{name}/{mode}"] = None
            else:
                out[name] = None
    return out


def _fit_bayes(name, d, cfg: StudyConfig, seed: int):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if name == "bart":
            return fit_bart_probit(d, BartConfig(R=cfg.bart_trees, burn=cfg.bart_burn,
                                                 draws=cfg.bart_draws, seed=seed))
        hmc = HMCConfig(chains=cfg.chains, warmup=cfg.warmup, samples=cfg.samples, seed=seed)
        if name == "horseshoe":
            return fit_treatment_model(standardize_continuous(d) if _has_continuous(d) else d,
                                       PriorSpec.horseshoe(), hmc, thin=cfg.K)
        return fit_treatment_model(d, PriorSpec.student_t(), hmc, thin=cfg.K)


def _has_continuous(d: Dataset) -> bool:
    return any(c.kind == "continuous" for c in d.columns)


@dataclass
class EstimatorMetrics:
    label: str
    bias: float
    mse: float
    variance: float
    ci_width: float
    coverage: float
    failures: int
    replications: int

    @property
    def mse_x1000(self) -> float:
        return 1000.0 * self.mse


@dataclass
class MetricsTable:
    rows: list[EstimatorMetrics]
    true_ate: float
    true_ate_se: float
    R: int
    points: dict = field(default_factory=dict)

    def __getitem__(self, label: str) -> EstimatorMetrics:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "bias", "mse_x1000", "ci_width", "coverage", "failures"])
            for r in self.rows:
                w.writerow([r.label, _num(r.bias), _num(r.mse_x1000), _num(r.ci_width),
                            _num(r.coverage), r.failures])


def _num(v) -> str:
    return "NA" if v is None or not np.isfinite(v) else repr(float(v))


def aggregate(label: str, results: list, truth: float) -> EstimatorMetrics:
    """Bias, MSE, variance (ddof 0, so MSE = bias^2 + variance), width and coverage %."""
    ok = [t for t in results if t is not None and all(np.isfinite(t))]
    fails = len(results) - len(ok)
    if not ok:
        nan = float("nan")
        return EstimatorMetrics(label, nan, nan, nan, nan, nan, fails, len(results))
    a = np.array(ok)
    err = a[:, 0] - truth
    bias = float(err.mean())
    var = float(a[:, 0].var())
    mse = float(np.mean(err ** 2))
    width = float(np.mean(a[:, 2] - a[:, 1]))
    cover = float(100.0 * np.mean((a[:, 1] <= truth) & (truth <= a[:, 2])))
    return EstimatorMetrics(label, bias, mse, var, width, cover, fails, len(results))


def _rep_task(args):
    spec, cfg, r = args
    return replicate(spec, cfg, r)


def run_study(spec: ScenarioSpec, cfg: StudyConfig, truth: tuple[float, float] | None = None,
              progress=None) -> MetricsTable:
    """Run ``cfg.R`` replications and aggregate per estimator.

    Replications are distributed over ``cfg.workers`` processes; results are
    gathered in replication order so the table is worker-count invariant.
    """
    if truth is None:
        truth = true_ate_oracle(spec, cfg.n_mc,
                                np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2**31,))))
    tasks = [(spec, cfg, r) for r in range(cfg.R)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reps = list(pool.map(_rep_task, tasks, chunksize=max(1, cfg.R // (4 * cfg.workers))))
    else:
        reps = []
        for t in tasks:
            reps.append(_rep_task(t))
            if progress is not None:
                progress(len(reps), cfg.R)
    labels = cfg.labels()
    rows = [aggregate(lb, [rep.get(lb) for rep in reps], truth[0]) for lb in labels]
    points = {lb: [rep.get(lb) for rep in reps] for lb in labels}
    return MetricsTable(rows, truth[0], truth[1], cfg.R, points)


def study_meta(spec: ScenarioSpec, cfg: StudyConfig, table: MetricsTable) -> dict:
    meta = {
        "scenario": spec.name,
        "n": spec.n,
        "p": spec.p,
        "true_ate": table.true_ate,
        "true_ate_se": table.true_ate_se,
        "seed": cfg.seed,
        "replications": cfg.R,
        "budgets": {k: v for k, v in asdict(cfg).items() if k not in ("workers",)},
        "zero_coefficients": f"{spec.n_zero_x} of {spec.p} coefficients zero",
    }
    if spec.note:
        meta["note"] = spec.note
    return meta


def with_n(spec: ScenarioSpec, n: int) -> ScenarioSpec:
    return replace(spec, n=n)


def write_metrics_csv(path, tables: list[tuple[str, MetricsTable]]) -> None:
    """One row per (scenario, estimator) with the columns bias, mse_x1000, ci_width, coverage, failures."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "estimator", "bias", "mse_x1000", "ci_width", "coverage",
                    "failures"])
        for name, tab in tables:
            for r in tab.rows:
                w.writerow([name, r.label, _num(r.bias), _num(r.mse_x1000), _num(r.ci_width),
                            _num(r.coverage), r.failures])
