"""Acceptance criteria, each at its stated tolerance.

Every test appends one PASS/FAIL line to the summary printed at the end of the
run.  Criteria 1, 3 and 4 are full simulation studies and dominate the
runtime (about two hours on one core); ``-m "not slow"`` skips them.
"""

import json
import os

import numpy as np
import pytest
from conftest import ACCEPTANCE
from scipy.special import expit
from test_mcmc import gaussian
from test_treatment import fd_fixtures, fd_max_rel_error

from bayesps.bart import DepthPrior, probit_latent_step, sample_tree_prior
from bayesps.cli import main
from bayesps.data import Dataset
from bayesps.diagnostics import ate_weights, weighted_std_diff
from bayesps.mcmc import HMCConfig, rhat, run_hmc
from bayesps.outcome import OutcomeHyper, pseudo_population_counts
from bayesps.simulation import gen_simple, preset, run_study
from bayesps.treatment import PriorSpec

WORKERS = os.cpu_count() or 1


def report(num, title, checks):
    """Record one summary line and fail with the offending checks."""
    ok = all(passed for passed, _ in checks)
    detail = "; ".join(text for _, text in checks)
    ACCEPTANCE.append(f"CRITERION {num}: {'PASS' if ok else 'FAIL'} {title} | {detail}")
    bad = [text for passed, text in checks if not passed]
    assert not bad, "; ".join(bad)


def within(value, lo, hi, label, fmt="{:.4f}"):
    return lo <= value <= hi, f"{label}={fmt.format(value)} in [{fmt.format(lo)}, {fmt.format(hi)}]"


def below(value, bound, label, fmt="{:.4f}"):
    return value < bound, f"{label}={fmt.format(value)} < {fmt.format(bound)}"


@pytest.mark.slow
def test_criterion_1_simple_study():
    tabs = {spec.name.split("/")[1]: run_study(spec, cfg)
            for spec, cfg in preset("table2", seed=20240, workers=WORKERS)}
    c, o, u = tabs["correct"], tabs["over"], tabs["under"]
    report(1, "simple-scenario study, R=4000", [
        within(abs(c["student_t/integrated"].bias), 0, 0.01, "|bias| integrated/correct"),
        within(c["student_t/integrated"].coverage, 95.0, 98.0, "coverage integrated/correct",
               "{:.1f}"),
        within(o["student_t/mean_ps"].coverage, 88.6, 93.6, "coverage mean_ps/over", "{:.1f}"),
        within(u["student_t/integrated"].bias, -0.0619, -0.0419, "bias integrated/under"),
    ])


def hajek(x, y, pi):
    w1, w0 = x / pi, (1 - x) / (1 - pi)
    return w1 @ y / w1.sum(), w0 @ y / w0.sum()


def test_criterion_2_zero_prior_identity():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(10, 201))
        x = rng.integers(0, 2, n)
        x[:2] = (1, 0)
        y = rng.integers(0, 2, n)
        y[:2] = (1, 1)
        pi = rng.uniform(0.02, 0.98, n)
        bp = pseudo_population_counts(Dataset.from_arrays(x, y, rng.standard_normal((n, 1))), pi,
                                      OutcomeHyper(0, 0, 0, 0))
        m1, m0 = hajek(x, y, pi)
        worst = max(worst, abs(bp.mean_p1 - m1), abs(bp.mean_p0 - m0))
    report(2, "zero-prior identity, 100 datasets", [(worst <= 1e-12, f"max |diff|={worst:.1e}")])


@pytest.mark.slow
def test_criterion_3_dense_study():
    (spec, cfg), = preset("table3", seed=30303, workers=WORKERS)
    t = run_study(spec, cfg)
    mse = {lb: t[lb].mse for lb in ("student_t/integrated", "horseshoe/integrated",
                                    "bart/integrated", "ipw")}
    checks = []
    for lb in ("horseshoe/integrated", "bart/integrated"):
        checks.append(below(mse[lb], min(mse["student_t/integrated"], mse["ipw"]),
                            f"(a) MSE {lb} vs min(t, ipw)", "{:.2e}"))
    for m in ("student_t", "horseshoe", "bart"):
        checks.append((t[f"{m}/integrated"].coverage >= t[f"{m}/mean_ps"].coverage,
                       f"(b) {m} coverage {t[f'{m}/integrated'].coverage:.1f} >= "
                       f"{t[f'{m}/mean_ps'].coverage:.1f}"))
    checks.append(below(t["naive"].coverage, 85, "(c) naive coverage", "{:.1f}"))
    for m in ("horseshoe", "bart"):
        checks.append(within(t[f"{m}/integrated"].coverage, 88, 99, f"(d) {m} coverage", "{:.1f}"))
    report(3, "dense high-dimensional study, R=200", checks)


@pytest.mark.slow
def test_criterion_4_sparse_study():
    (spec, cfg), = preset("sparse", seed=40404, workers=WORKERS,
                          estimators=("student_t", "horseshoe"))
    t = run_study(spec, cfg)
    report(4, "sparse study, R=200", [
        within(t["horseshoe/integrated"].coverage, 91, 99, "horseshoe integrated coverage",
               "{:.1f}"),
        below(t["horseshoe/integrated"].mse_x1000, 2.0, "horseshoe integrated MSEx1000",
              "{:.3f}"),
        below(t["student_t/mean_ps"].coverage, 90, "student_t mean_ps coverage", "{:.1f}"),
    ])


def test_criterion_5_gradients():
    rng = np.random.default_rng(5)
    checks = []
    for prior in (PriorSpec.student_t(), PriorSpec.horseshoe()):
        worst = max(fd_max_rel_error(d, prior, rng) for d in fd_fixtures())
        checks.append(below(worst, 1e-5, f"{prior.variant} max rel err", "{:.1e}"))
    report(5, "log-posterior gradients vs central differences", checks)


def test_criterion_6_bart_prior_and_latent():
    rng = np.random.default_rng(6)
    depths = np.array([sample_tree_prior(DepthPrior(0.95, 2.0), rng).depth for _ in range(10_000)])
    n = 100_000
    z1 = probit_latent_step(np.zeros(n), np.zeros(n), np.ones(n), rng)
    z0 = probit_latent_step(np.zeros(n), np.zeros(n), np.zeros(n), rng)
    z5 = probit_latent_step(np.zeros(n), np.full(n, 5.0), np.ones(n), rng)
    half = np.sqrt(2 / np.pi)
    report(6, "tree prior depth mass and latent moments", [
        (np.mean(depths <= 3) > 0.5, f"P(depth<=3)={np.mean(depths <= 3):.3f} > 0.5"),
        within(z1.mean(), half - 0.01, half + 0.01, "E[z|X=1,fit=0]"),
        (z1.min() > 0 and z0.max() < 0, "truncation sides respected"),
        within(z5.mean(), 4.99, 5.01, "E[z|X=1,fit=5]"),
    ])


def test_criterion_7_balancing_property():
    rng = np.random.default_rng(7)
    n = 5000
    # weighting by true scores balances only in expectation: each weighted
    # difference keeps a sampling sd of about 3% at this n, so the design uses two
    # confounders with moderate confounding
    C = np.c_[rng.standard_normal(n), rng.random(n) < 0.4]
    pi = expit(-0.2 + C @ [0.5, 0.6])
    x = (rng.random(n) < pi).astype(float)
    d = Dataset.from_arrays(x, x, C)
    raw = np.abs(weighted_std_diff(d, np.ones(n)))
    bal = np.abs(weighted_std_diff(d, ate_weights(d, pi)))
    report(7, "true-propensity weighting balances", [
        below(bal.max(), 5, "max weighted |std-diff| %", "{:.2f}"),
        (raw.max() > 20, f"max unweighted |std-diff| %={raw.max():.1f} > 20"),
    ])


def _snapshot(path):
    return sorted((p.name, p.read_bytes()) for p in path.iterdir())


def test_criterion_8_cli_determinism(tmp_path):
    d, _ = gen_simple(200, "correct", np.random.default_rng(8))
    data = tmp_path / "d.csv"
    with open(data, "w") as fh:
        fh.write("x,y,C1,C2\n")
        for xi, yi, (a, b) in zip(d.treatment, d.outcome, d.confounders):
            fh.write(f"{int(xi)},{int(yi)},{float(a)!r},{float(b)!r}\n")
    schema = tmp_path / "s.json"
    schema.write_text(json.dumps({"treatment": "x", "outcome": "y", "confounders": [
        {"name": "C1", "kind": "continuous"}, {"name": "C2", "kind": "continuous"}]}))
    budget = ["--chains", "2", "--warmup", "300", "--samples", "300"]
    io = ["--data", str(data), "--schema", str(schema)]
    commands = {
        "analyze": ["analyze", *io, "--model", "horseshoe", *budget],
        "diagnose": ["diagnose", *io, "--model", "student_t", *budget],
        "simulate": ["simulate", "--preset", "table2", "--replications", "3"],
    }
    checks = []
    for name, argv in commands.items():
        snaps = []
        for run, w in enumerate(("1", "1", "4", "8")):
            out = tmp_path / f"{name}{run}"
            code = main([*argv, "--seed", "11", "--workers", w, "--out", str(out)])
            snaps.append(_snapshot(out) if code == 0 else None)
        same = snaps[0] is not None and all(s == snaps[0] for s in snaps[1:])
        checks.append((same, f"{name}: {'identical' if same else 'differs'} over runs/workers 1,1,4,8"))
    report(8, "CLI byte-identical outputs", checks)


def test_criterion_9_sampler_calibration():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    ch = run_hmc(gaussian(cov), HMCConfig(chains=4, warmup=1000, samples=1000, seed=9))
    err = np.abs(np.cov(ch.pooled().T) - cov).max()
    good = rhat(ch).max()
    sep = np.random.default_rng(9).standard_normal((4, 1000))
    sep[2:] += 5
    bad = rhat(sep).max()
    report(9, "HMC calibration and R-hat", [
        below(err, 0.1, "max |cov error|"),
        below(good, 1.02, "R-hat converged"),
        (bad > 1.1, f"R-hat separated={bad:.2f} > 1.1"),
    ])
