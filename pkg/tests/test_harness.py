import logging
import math

import numpy as np
import pytest

from dpsched.harness import (ExperimentConfig, HarnessError, bootstrap_improvement, build_problem,
                             build_schedule, curves_to_plot_data, effective_gamma, gen_synthetic, load_csv,
                             preprocess, reports_to_csv, run_experiment, scale_sweep, write_csv)
from dpsched.models import Dataset
from dpsched.schedules import ScheduleError, gd_closed_form, uniform_schedule

SMALL = dict(data={"D": 4, "N": 40, "distance": 3.0, "seed": 1}, eta="auto", T_max=6, repeats=4, init_norm=1.0)


def test_gen_synthetic():
    d = gen_synthetic(100, 1000, 10, seed=0)
    assert (d.N, d.D) == (1000, 100)
    assert np.sum(d.labels == 1) == np.sum(d.labels == -1) == 500
    # cluster means sit about d apart
    gap = d.features[d.labels == 1].mean(0) - d.features[d.labels == -1].mean(0)
    assert np.linalg.norm(gap) == pytest.approx(10, rel=0.05)
    assert np.array_equal(gen_synthetic(5, 10, 2.0, 3).features, gen_synthetic(5, 10, 2.0, 3).features)
    d0 = gen_synthetic(3, 20, 0.0, 1)
    assert d0.N == 20
    for D, N in ((0, 10), (3, 9), (3, 0)):
        with pytest.raises(HarnessError):
            gen_synthetic(D, N, 1.0, 0)


def test_preprocess_examples():
    d = gen_synthetic(6, 50, 4.0, 2)
    p = preprocess(d, 10)
    assert p.max_norm == pytest.approx(10, abs=1e-12)
    assert np.allclose(p.features.mean(0), 0, atol=1e-12)
    sd = p.features.std(0)
    assert np.allclose(sd, sd[0])  # common factor after unit standardisation
    again = preprocess(p, p.max_norm)
    assert np.allclose(again.features, preprocess(again, again.max_norm).features, rtol=1e-12)
    half = preprocess(p, 5)
    assert np.allclose(half.features, p.features / 2, rtol=1e-12)
    with pytest.raises(HarnessError):
        preprocess(d, 0)


def test_preprocess_identity_on_normalised():
    d = preprocess(gen_synthetic(5, 30, 1.0, 4), 1.0)
    # standardised data rescaled to its own max norm is a fixed point
    z = (d.features - d.features.mean(0)) / d.features.std(0)
    target = np.linalg.norm(z, axis=1).max()
    fixed = Dataset(z)
    assert np.allclose(preprocess(fixed, target).features, z, rtol=1e-12)


def test_preprocess_zero_variance_column(caplog):
    X = np.column_stack([np.arange(6.0), np.full(6, 3.0)])
    with caplog.at_level(logging.WARNING):
        p = preprocess(Dataset(X), 2.0)
    assert "zero variance" in caplog.text
    assert np.all(p.features[:, 1] == 0) and p.max_norm == pytest.approx(2.0)


def test_csv_round_trip_and_errors(tmp_path):
    d = gen_synthetic(2, 4, 1.0, 0)
    f = tmp_path / "d.csv"
    write_csv(d, f)
    assert f.read_text().splitlines()[0] == "x1,x2,label"
    back = load_csv(f)
    assert np.array_equal(back.features, d.features) and np.array_equal(back.labels, d.labels)
    ok = tmp_path / "ok.csv"
    ok.write_text("x1,x2\n1,2\n3,4\n5,6\n")
    got = load_csv(ok)
    assert (got.N, got.D) == (3, 2) and got.labels is None
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("x1,x2\n1,2\n3\n")
    with pytest.raises(HarnessError, match=":3:"):
        load_csv(ragged)
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2\n1,2\n3,abc\n")
    with pytest.raises(HarnessError, match=":3:"):
        load_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(HarnessError, match="empty"):
        load_csv(empty)
    nohead = tmp_path / "nohead.csv"
    nohead.write_text("1,2\n3,4\n")
    with pytest.raises(HarnessError, match="header"):
        load_csv(nohead)


def test_config_validation():
    with pytest.raises(HarnessError):
        ExperimentConfig(repeats=0)
    with pytest.raises(HarnessError):
        ExperimentConfig(T_min=5, T_max=4)
    with pytest.raises(HarnessError):
        ExperimentConfig(data_scale=0)
    with pytest.raises(HarnessError):
        ExperimentConfig(recipes=("dynamic",))
    with pytest.raises(HarnessError):
        ExperimentConfig.from_dict({"colour": 1})
    assert math.isinf(ExperimentConfig.from_dict({"R": "inf"}).R)


def test_effective_gamma():
    assert effective_gamma(2.0, 0.5, 0.5) == pytest.approx(0.75)
    assert effective_gamma(2.0, 0.5, 1.0) is None  # 2/M: no contraction
    assert effective_gamma(2.0, 0.5, 0.25, beta=0.5) == pytest.approx(1 - 1.0 / 4)


def test_build_schedule():
    assert build_schedule("uniform", 5, 1.0, None).recipe == "uniform"
    assert np.allclose(build_schedule("dynamic", 5, 1.0, 0.8).sigmas, gd_closed_form(0.8, 5, 1.0).sigmas)
    assert build_schedule("exp", 5, 1.0, 0.8).total_cost == pytest.approx(1.0)
    assert build_schedule("dynamic", 5, 1.0, 0.8, beta=0.5).recipe == "momentum_dynamic"
    with pytest.raises(ScheduleError):
        build_schedule("dynamic", 5, 1.0, None)


def test_uniform_only_relative_zero():
    rep = run_experiment(ExperimentConfig(recipes=("uniform",), **SMALL))
    assert rep["uniform"].rel_loss == 0.0
    assert rep.to_csv().splitlines()[0] == "recipe,scale,best_T,mean_loss,std_loss,rel_loss,influence_variance,runtime_ms"


def test_report_invariants_and_determinism():
    cfg = ExperimentConfig(**SMALL)
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert a.to_csv(timing=False) == b.to_csv(timing=False)
    for r in a.results.values():
        assert r.failed is None
        assert all(r.mean_loss <= v for v in r.curve.values())
        assert r.best_T == min(T for T, v in r.curve.items() if v == r.mean_loss)
        assert r.max_budget_spent <= cfg.R
        e0 = a["uniform"].mean_loss
        assert r.rel_loss == (r.mean_loss - e0) / e0
    assert a["uniform"].rel_loss == 0.0
    assert "# T uniform dynamic exp" in curves_to_plot_data(a)


def test_noise_free_all_tie():
    rep = run_experiment(ExperimentConfig(R=math.inf, **SMALL))
    losses = {r.mean_loss for r in rep.results.values()}
    assert len(losses) == 1
    assert {r.std_loss for r in rep.results.values()} == {0.0}


def test_failed_recipe_marked():
    # a step of 2/M does not contract, so the dynamic recipes have no schedule
    cfg = ExperimentConfig(**{**SMALL, "eta": 10.0, "T_max": 2, "repeats": 1})
    rep = run_experiment(cfg)
    assert rep["dynamic"].failed and rep["exp"].failed and rep["uniform"].failed is None
    assert "nan" in rep.to_csv()


def test_logistic_needs_gamma():
    cfg = ExperimentConfig(model="logistic", **{**SMALL, "repeats": 1, "T_max": 3})
    rep = run_experiment(cfg)
    assert rep["dynamic"].failed
    rep = run_experiment(ExperimentConfig(model="logistic", gamma=0.9, **{**SMALL, "repeats": 1, "T_max": 3}))
    assert rep["dynamic"].failed is None


def test_scale_sweep_order_independent():
    cfg = ExperimentConfig(**{**SMALL, "repeats": 2, "T_max": 4})
    a = scale_sweep(cfg, [5, 10])
    b = scale_sweep(cfg, [10, 5])
    assert a[0].to_csv(timing=False) == b[1].to_csv(timing=False)
    assert a[1].to_csv(timing=False) == b[0].to_csv(timing=False)
    single = scale_sweep(cfg, [10])
    assert single[0].to_csv(timing=False) == run_experiment(cfg).to_csv(timing=False)
    text = reports_to_csv(a, timing=False)
    assert text.count("recipe,") == 1 and len(text.splitlines()) == 1 + 2 * 3
    with pytest.raises(HarnessError):
        scale_sweep(cfg, [0])


def test_default_problem():
    p = build_problem(ExperimentConfig())
    assert (p.model.N, p.model.D) == (1000, 100)
    assert p.model.data.max_norm == pytest.approx(10)
    assert p.eta == 0.1 and p.model.clip_norm == 4.0
    assert p.gamma is not None and 0 < p.gamma < 1


def test_bootstrap_improvement():
    rng = np.random.default_rng(0)
    base = rng.normal(1.0, 0.1, 200)
    mean, lo = bootstrap_improvement(base, base - 0.05)
    assert mean == pytest.approx(0.05) and lo == pytest.approx(0.05)
    mean, lo = bootstrap_improvement(base, base + rng.normal(0, 0.1, 200))
    assert lo < 0
