import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_data
from scoredrift import datagen as dg
from scoredrift.data import Dataset
from scoredrift.diagnostics import (FisherEstimate, decouple_scores, decoupled_charts,
                                    estimate_delta, excursion, fisher_info)
from scoredrift.models import FittedModel, ModelSpec, ScoreSeries, fit, score_series, scores
from scoredrift.monitor import MonitorConfig, uni_ewma_chart
from scoredrift.pipeline import diagnose, setup_monitoring

LIN = ModelSpec("linear_gaussian")
LOGIT = ModelSpec("logistic")


def _balanced_design(reps):
    """Rows with empirical second moment of (1, x) exactly the identity."""
    base = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    return np.tile(base, (reps, 1))


def test_fisher_linear_identity_design():
    X = _balanced_design(25_000)
    rng = np.random.default_rng(0)
    theta = np.array([0.5, 1.0, -1.0])
    y = theta[0] + X @ theta[1:] + rng.standard_normal(X.shape[0])
    data = Dataset.from_arrays(X, y)
    model = FittedModel(LIN, theta, 2, sigma2=1.0)
    for method, tol in (("analytic", 1e-12), ("hessian", 1e-12), ("covariance", 0.03)):
        f = fisher_info(model, data, method)
        assert np.max(np.abs(f.matrix - np.eye(3))) <= tol, method
        assert f.method == method and f.delta == 0.0


def test_fisher_logistic_at_zero():
    X = np.random.default_rng(1).standard_normal((100_000, 2))
    y = (np.random.default_rng(2).random(100_000) < 0.5).astype(float)
    data = Dataset.from_arrays(X, y)
    model = FittedModel(LOGIT, np.zeros(3), 2)
    h = fisher_info(model, data, "hessian").matrix
    a = fisher_info(model, data, "analytic").matrix
    np.testing.assert_array_equal(h, a)
    c = fisher_info(model, data, "covariance").matrix
    assert np.max(np.abs(c - a) / np.abs(a).max()) <= 0.05


def test_hessian_and_covariance_converge():
    data = make_data("logistic", 100_000, 3, [0.2, 1.0, -0.5, 0.3], seed=3)
    model = fit(data, LOGIT)
    h = fisher_info(model, data, "hessian").matrix
    c = fisher_info(model, data, "covariance").matrix
    assert np.linalg.norm(h - c) <= 0.05
    window = make_data("logistic", 20_000, 3, [0.2, 1.2, -0.5, 0.3], seed=4)
    dh = estimate_delta(scores(model, window), fisher_info(model, data, "hessian"))
    dc = estimate_delta(scores(model, window), fisher_info(model, data, "covariance"))
    assert np.max(np.abs(dh - dc)) <= 0.02


def test_fisher_errors():
    mlp = FittedModel(ModelSpec("mlp", hidden_width=2, task="regression"), np.zeros(9), 2)
    data = Dataset.from_arrays(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        fisher_info(mlp, data, "analytic")
    with pytest.raises(ValueError):
        fisher_info(FittedModel(LOGIT, np.zeros(3), 2), data[:1], "covariance")
    with pytest.raises(ValueError):
        fisher_info(FittedModel(LOGIT, np.zeros(3), 2), data, "bootstrap")
    assert fisher_info(mlp, data).method == "hessian"


def test_fisher_inverse_residual():
    f = FisherEstimate.from_matrix(np.diag([1.0, 0.0, 2.0]))
    np.testing.assert_allclose(f.inverse @ (f.matrix + f.delta * np.eye(3)), np.eye(3), atol=1e-8)


def test_decouple_examples():
    s = np.array([[2.0, 3.0]])
    np.testing.assert_array_equal(decouple_scores(s, FisherEstimate.from_matrix(np.eye(2))).s, s)
    out = decouple_scores(ScoreSeries([0], s), FisherEstimate.from_matrix(np.diag([2.0, 1.0])))
    np.testing.assert_allclose(out.s, [[1.0, 3.0]])
    assert out.decoupled
    with pytest.raises(ValueError):
        decouple_scores(np.ones((1, 3)), FisherEstimate.from_matrix(np.eye(2)))


@given(st.integers(0, 1000), st.floats(-10, 10))
def test_decouple_is_linear(seed, a):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((3, 3))
    f = FisherEstimate.from_matrix(m @ m.T + np.eye(3))
    s = rng.standard_normal((5, 3))
    np.testing.assert_allclose(decouple_scores(a * s, f).s, a * decouple_scores(s, f).s,
                               rtol=1e-12, atol=1e-12)


def test_estimate_delta_examples():
    f = FisherEstimate.from_matrix(np.diag([2.0, 1.0]))
    np.testing.assert_array_equal(estimate_delta(np.zeros((4, 2)), f), [0.0, 0.0])
    a, b = 0.3, -0.7
    np.testing.assert_allclose(estimate_delta(np.array([[2 * a, b]] * 3), f), [a, b])
    with pytest.raises(ValueError):
        estimate_delta(np.empty((0, 2)), f)
    with pytest.raises(ValueError):
        estimate_delta(decouple_scores(np.ones((2, 2)), f), f)
    w = np.array([1.0, 3.0])
    np.testing.assert_allclose(estimate_delta(np.array([[2.0, 0.0], [6.0, 4.0]]), f, w), [2.5, 3.0])


def test_linear_decoupled_mean_recovers_shift():
    theta0 = np.array([0.0, 1.0, -1.0])
    n = 100_000
    train = make_data("linear", 20_000, 2, theta0, seed=5)
    model = fit(train, LIN)
    post = make_data("linear", n, 2, theta0 + [0.5, 0.0, 0.0], seed=6)
    dec = decouple_scores(scores(model, post), fisher_info(model, train, "analytic")).s
    se = dec.std(axis=0, ddof=1) / np.sqrt(n)
    # theta-hat error contributes too; compare to the shift relative to the fit
    target = theta0 + [0.5, 0.0, 0.0] - model.theta
    assert np.all(np.abs(dec.mean(axis=0) - target) <= 3 * se)


def test_fisher_identity_gives_plain_component_charts(rng):
    s = rng.standard_normal((300, 2))
    ph = rng.standard_normal((500, 2))
    cfg = MonitorConfig(lam=0.1, alpha=0.01)
    charts, diag = decoupled_charts(ScoreSeries(np.arange(300), s), FisherEstimate.from_matrix(np.eye(2)),
                                    ph, cfg)
    for j in range(2):
        plain = uni_ewma_chart(s[:, j], 0.1, ph[:, j], 0.01)
        np.testing.assert_array_equal(charts[j].statistic, plain.statistic)
        assert charts[j].ucl == plain.ucl
    assert sorted(diag.ranking) == [0, 1]
    assert diag.window == (0, 299)


def test_excursion_uses_crossed_side():
    from scoredrift.monitor import Chart

    ch = Chart(np.arange(3), [0.0, 3.0, -1.0], ucl=2.0, lcl=-4.0, center=0.0)
    assert excursion(ch) == pytest.approx(1.5)
    ch = Chart(np.arange(2), [0.0, -3.0], ucl=2.0, lcl=-2.0, center=0.0)
    assert excursion(ch) == pytest.approx(1.5)


def test_diagnosis_json(tmp_path):
    from scoredrift.diagnostics import DriftDiagnosis

    d = DriftDiagnosis(np.array([0.1, 0.5]), (10, 20), [1, 0])
    d.to_json(tmp_path / "d.json", ["a.jsonl", "b.jsonl"])
    back = json.loads((tmp_path / "d.json").read_text())
    assert back == {"delta_theta": [0.1, 0.5], "window": [10, 20], "ranking": [1, 0],
                    "charts": ["a.jsonl", "b.jsonl"]}


def test_single_jump_estimate_harness():
    """Single-coefficient jump of 0.5: estimate lands near 0.5, others near 0."""
    hits = 0
    for seed in range(50):
        sc = dg.s1(seed=seed)
        train, phase1, phase2, truth = dg.generate(sc)
        setup = setup_monitoring(Dataset.concat([train, phase1]), 0.5, sc.spec, sc.monitor_config)
        window = phase2.since(truth.t_change_time)[:5000]
        d = diagnose(setup, window).delta_theta
        others = np.delete(d, 3)
        hits += (0.35 <= d[3] <= 0.65) and np.all(np.abs(others) < 0.15)
    assert hits >= 40


def test_no_drift_component_signal_rate():
    rates = []
    alpha = 0.01
    for seed in range(100):
        sc = dg.s1(seed=seed, drift=dg.Drift(), alpha=alpha, n_phase2=3000)
        train, phase1, phase2, _ = dg.generate(sc)
        setup = setup_monitoring(Dataset.concat([train, phase1]), 0.5, sc.spec, sc.monitor_config)
        rates.append([c.signal_rate for c in diagnose(setup, phase2).charts])
    pooled = np.mean(rates, axis=0)
    assert np.all(pooled <= 5 * alpha)


def test_diagnose_needs_attached_data():
    sc = dg.s1(seed=0)
    train, phase1, phase2, _ = dg.generate(sc)
    setup = setup_monitoring(Dataset.concat([train, phase1]), 0.5, sc.spec, sc.monitor_config)
    from scoredrift.pipeline import MonitoringSetup

    bare = MonitoringSetup.from_dict(setup.to_dict())
    with pytest.raises(ValueError):
        diagnose(bare, phase2)
    with pytest.raises(ValueError):
        diagnose(setup, phase2[:0])
    np.testing.assert_array_equal(diagnose(bare.attach(Dataset.concat([train, phase1])), phase2).delta_theta,
                                  diagnose(setup, phase2).delta_theta)
    assert score_series(setup.model, phase2).q == 6
