import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from bayesps.simulation import (ScenarioSpec, StudyConfig, aggregate, gen_highdim, gen_simple,
                                highdim_spec, preset, run_study, simple_spec, study_meta,
                                true_ate_oracle, write_metrics_csv)

NULL = ScenarioSpec(n=1000, beta_x=(0.0, 0.0), beta0_x=0.0, beta_y=(0.0, 0.0), beta0_y=-1.0,
                    beta_tr=0.0, name="null")


def test_simple_treatment_rate():
    d, _ = gen_simple(100_000, "correct", np.random.default_rng(0))
    assert d.treatment.mean() == pytest.approx(0.5, abs=0.01)


def test_variants_visible_columns():
    rng = np.random.default_rng(1)
    assert gen_simple(50, "correct", rng)[0].names == ["C1", "C2"]
    assert gen_simple(50, "under", rng)[0].names == ["C1"]
    over = gen_simple(50, "over", rng)[0]
    assert over.p == 10 and over.names[2:] == [f"N{j}" for j in range(1, 9)]
    with pytest.raises(ValueError):
        gen_simple(19, "correct", rng)
    with pytest.raises(ValueError):
        simple_spec("sideways")


def test_seeded_datasets_identical():
    a, _ = gen_simple(200, "over", np.random.default_rng(5))
    b, _ = gen_simple(200, "over", np.random.default_rng(5))
    np.testing.assert_array_equal(a.confounders, b.confounders)
    np.testing.assert_array_equal(a.outcome, b.outcome)


def test_highdim_rates():
    spec = replace(highdim_spec("table3"), n=100_000)
    d = gen_highdim(spec, np.random.default_rng(2))
    assert d.treatment.mean() == pytest.approx(0.7, abs=0.01)
    assert d.outcome.mean() == pytest.approx(0.1, abs=0.01)
    assert all(c.kind == "binary" for c in d.columns)


def test_sparse_constraints():
    spec = highdim_spec("sparse")
    bx = np.array(spec.beta_x)
    assert spec.n_zero_x == 90
    nz = np.abs(bx[bx != 0])
    assert nz.size == 10 and nz.min() >= 0.8 and nz.max() <= 1.1
    d = gen_highdim(replace(spec, n=100_000), np.random.default_rng(3))
    assert d.treatment.mean() == pytest.approx(0.7, abs=0.01)


def test_table3_stand_in_constraints():
    spec = highdim_spec("table3")
    bx = np.array(spec.beta_x)
    assert spec.p == 100 and spec.n == 1000 and spec.beta_tr == -2
    assert bx.min() == pytest.approx(-1.1) and bx.max() == pytest.approx(1.1)
    assert np.quantile(bx, 0.25) == pytest.approx(-0.2)
    assert np.quantile(bx, 0.75) == pytest.approx(0.2)
    assert spec.n_zero_x == 18
    np.testing.assert_allclose(np.round(bx * 10), bx * 10, atol=1e-9)
    assert abs(sum(spec.beta_y)) < 1e-9
    assert spec.note


def test_table3_ate():
    est, se = true_ate_oracle(highdim_spec("table3"), 1_000_000)
    assert est == pytest.approx(-0.15, abs=0.005) and se < 1e-3


def test_oracle_closed_form():
    spec = ScenarioSpec(n=10, beta_x=(0.3, 0.1), beta0_x=0, beta_y=(0.0, 0.0), beta0_y=0.0,
                        beta_tr=1.0)
    est, se = true_ate_oracle(spec, 100_000)
    assert est == pytest.approx(expit(1) - 0.5, abs=1e-12) and se == pytest.approx(0, abs=1e-12)
    assert expit(1) - 0.5 == pytest.approx(0.23106, abs=1e-5)
    with pytest.raises(ValueError):
        true_ate_oracle(spec, 1000)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.floats(-2, 2))
def test_oracle_null_effect(by, b0):
    spec = ScenarioSpec(n=10, beta_x=[0.0] * len(by), beta0_x=0, beta_y=by, beta0_y=b0, beta_tr=0.0)
    assert true_ate_oracle(spec, 100_000, batch=50_000)[0] == 0.0


def test_simple_oracle_matches_quadrature():
    # Delta = E[expit(1 - Z/sqrt(2)) - expit(-Z/sqrt(2))], Z ~ N(0, 1)
    z, w = np.polynomial.hermite_e.hermegauss(80)
    s = np.sqrt(0.5)
    exact = np.sum(w * (expit(1 - s * z) - expit(-s * z))) / np.sqrt(2 * np.pi)
    est, se = true_ate_oracle(simple_spec("correct"), 1_000_000)
    assert abs(est - exact) < 4 * se


def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(n=5, beta_x=(1.0,), beta0_x=0, beta_y=(1.0, 2.0), beta0_y=0, beta_tr=0)
    with pytest.raises(ValueError):
        ScenarioSpec(n=5, beta_x=(1.0,), beta0_x=0, beta_y=(1.0,), beta0_y=0, beta_tr=0,
                     law="bernoulli", prevalence=(1.0,))
    with pytest.raises(ValueError):
        ScenarioSpec(n=5, beta_x=(1.0,), beta0_x=0, beta_y=(1.0,), beta0_y=0, beta_tr=0,
                     visible=(3,))


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(0, 0.5)), min_size=1, max_size=30),
       st.floats(-1, 1))
def test_mse_identity(rows, truth):
    res = [(p, p - w, p + w) for p, w in rows]
    m = aggregate("x", res, truth)
    assert m.mse == pytest.approx(m.bias ** 2 + m.variance, abs=1e-12)
    assert m.mse >= m.bias ** 2 - 1e-15
    assert 0 <= m.coverage <= 100


def test_aggregate_failures():
    m = aggregate("x", [(0.1, 0.0, 0.2), None, (np.nan, 0, 1), (0.3, 0.2, 0.4)], 0.1)
    assert m.failures == 2 and m.replications == 4
    assert m.coverage == 50.0 and m.bias == pytest.approx(0.1)


def test_study_counts_failures():
    # treated fraction ~2% at n=20: most replications lose the treated arm
    spec = ScenarioSpec(n=20, beta_x=(0.0,), beta0_x=-4.0, beta_y=(0.0,), beta0_y=0, beta_tr=0.0)
    tab = run_study(spec, StudyConfig(estimators=("naive",), R=30, seed=1, n_mc=100_000))
    assert 0 < tab["naive"].failures < 30
    assert sum(p is None for p in tab.points["naive"]) == tab["naive"].failures


def test_null_calibration():
    tab = run_study(NULL, StudyConfig(estimators=("naive", "ipw"), R=500, seed=3, n_mc=100_000))
    assert tab.true_ate == 0.0
    for lb in ("naive", "ipw"):
        m = tab[lb]
        mc_se = np.sqrt(m.variance / (m.replications - m.failures))
        assert abs(m.bias) < 2 * mc_se
        assert 92 <= m.coverage <= 98


def test_worker_invariance():
    cfg = dict(estimators=("student_t", "ipw", "naive"), R=8, seed=7, chains=2, warmup=100,
               samples=100, K=100, n_mc=100_000)
    spec = simple_spec("correct", 60)
    tabs = [run_study(spec, StudyConfig(workers=w, **cfg)) for w in (1, 4, 8)]
    for t in tabs[1:]:
        assert t.points == tabs[0].points
        assert t.rows == tabs[0].rows


def test_presets():
    t2 = preset("table2")
    assert [s.name for s, _ in t2] == ["simple/correct", "simple/over", "simple/under"]
    assert all(c.R == 4000 and c.estimators == ("student_t",) and s.n == 100 for s, c in t2)
    (s3, c3), = preset("table3", R=5)
    assert c3.R == 5 and s3.p == 100
    assert c3.labels()[:2] == ["student_t/integrated", "student_t/mean_ps"]
    with pytest.raises(ValueError):
        preset("table9")
    with pytest.raises(ValueError):
        StudyConfig(estimators=("oracle",))
    with pytest.raises(ValueError):
        StudyConfig(R=1)


def test_meta_and_csv(tmp_path):
    spec = highdim_spec("sparse")
    tab = run_study(replace(spec, n=200), StudyConfig(estimators=("naive",), R=3, n_mc=100_000))
    meta = study_meta(spec, StudyConfig(estimators=("naive",), R=3), tab)
    assert meta["zero_coefficients"] == "90 of 100 coefficients zero"
    json.dumps(meta)
    write_metrics_csv(tmp_path / "m.csv", [("sparse", tab)])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "scenario,estimator,bias,mse_x1000,ci_width,coverage,failures"
    assert lines[1].startswith("sparse,naive,")
