import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import make_data
from scoredrift.data import Dataset, Observation
from scoredrift.models import (DegenerateDataError, FitError, FitOptions, FittedModel, ModelSpec,
                               classify, fit, hessian_avg, loglik, mean_regularized_score,
                               monitoring_scores, predict, regularized_score, score, score_series,
                               scores)

SPECS = {
    "linear_gaussian": ModelSpec("linear_gaussian"),
    "logistic": ModelSpec("logistic"),
    "poisson": ModelSpec("glm_canonical", glm_b_function="poisson"),
    "glm_gaussian": ModelSpec("glm_canonical", glm_b_function="gaussian"),
    "glm_bernoulli": ModelSpec("glm_canonical", glm_b_function="bernoulli"),
    "mlp_reg": ModelSpec("mlp", hidden_width=3, task="regression"),
    "mlp_clf": ModelSpec("mlp", hidden_width=3, task="classification"),
}


def _oracle_loglik(spec, theta, x, y, sigma2, p):
    """Independent log-likelihood: explicit forward pass and scipy densities."""
    if spec.family == "mlp":
        h = spec.hidden_width
        W1 = theta[: h * p].reshape(h, p)
        b1 = theta[h * p: h * p + h]
        w2 = theta[h * p + h: h * p + 2 * h]
        eta = float(w2 @ np.tanh(W1 @ x + b1) + theta[-1])
    else:
        eta = float(theta[0] + theta[1:] @ x)
    r = spec.response
    if r == "gaussian":
        return stats.norm.logpdf(y, eta, np.sqrt(sigma2))
    if r == "bernoulli":
        return stats.bernoulli.logpmf(y, 1 / (1 + np.exp(-eta)))
    return stats.poisson.logpmf(y, np.exp(eta))


def _random_case(name, rng, p=3):
    spec = SPECS[name]
    q = spec.n_params(p)
    theta = rng.normal(0, 0.7, q)
    x = rng.standard_normal(p)
    r = spec.response
    y = {"gaussian": rng.normal(0, 2), "bernoulli": float(rng.integers(0, 2)),
         "poisson": float(rng.poisson(2.0))}[r]
    sigma2 = float(rng.uniform(0.5, 2.0)) if r == "gaussian" else 1.0
    model = FittedModel(spec, theta, p, sigma2)
    return model, Observation(x, y)


@pytest.mark.parametrize("name", list(SPECS))
def test_loglik_matches_scipy_densities(name, rng):
    for _ in range(20):
        model, obs = _random_case(name, rng)
        got = loglik(model, obs)[0]
        want = _oracle_loglik(model.spec, model.theta, obs.x, obs.y, model.sigma2, model.p)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("name", list(SPECS))
def test_score_matches_central_differences(name, rng):
    h = 1e-5
    for _ in range(100):
        model, obs = _random_case(name, rng)
        s = score(model, obs)
        fd = np.empty(model.q)
        for j in range(model.q):
            e = np.zeros(model.q)
            e[j] = h
            fd[j] = (_oracle_loglik(model.spec, model.theta + e, obs.x, obs.y, model.sigma2, model.p)
                     - _oracle_loglik(model.spec, model.theta - e, obs.x, obs.y, model.sigma2, model.p)) / (2 * h)
        err = np.max(np.abs(s - fd)) / max(1.0, np.max(np.abs(fd)))
        assert err <= 1e-5


@pytest.mark.parametrize("name", ["mlp_reg", "mlp_clf", "logistic", "poisson"])
def test_hessian_matches_gradient_differences(name, rng):
    spec = SPECS[name]
    p, n = 3, 40
    model, _ = _random_case(name, rng, p)
    model = FittedModel(spec.__class__(**{**spec.to_dict(), "l2_strength": 0.7}), model.theta, p,
                        model.sigma2, n_train=50)
    X = rng.standard_normal((n, p))
    y = (rng.random(n) < 0.5).astype(float) if spec.response == "bernoulli" else rng.poisson(2, n).astype(float)
    data = Dataset.from_arrays(X, y, rng.uniform(0.5, 2.0, n))
    H = hessian_avg(model, data)

    def neg_grad(theta):
        m = model.with_theta(theta)
        return -(data.w @ scores(m, data)) / data.w.sum() + (0.7 / 50) * theta

    h = 1e-6
    fd = np.column_stack([(neg_grad(model.theta + h * e) - neg_grad(model.theta - h * e)) / (2 * h)
                          for e in np.eye(model.q)])
    assert np.max(np.abs(H - fd)) / np.max(np.abs(fd)) <= 1e-4
    np.testing.assert_array_equal(H, H.T)


def test_score_examples():
    m = FittedModel(ModelSpec("logistic"), [0.0, 0.0], 1)
    np.testing.assert_allclose(score(m, Observation([2.0], 1.0)), [0.5, 1.0])
    m = FittedModel(ModelSpec("linear_gaussian"), [0.0, 1.0], 1, sigma2=1.0)
    np.testing.assert_allclose(score(m, Observation([2.0], 3.0)), [1.0, 2.0])
    m = FittedModel(ModelSpec("glm_canonical", glm_b_function="poisson"), [0.0, 0.0], 1)
    np.testing.assert_allclose(score(m, Observation([2.0], 3.0)), [2.0, 4.0])


def test_score_dimension_mismatch():
    m = FittedModel(ModelSpec("logistic"), [0.0, 0.0], 1)
    with pytest.raises(ValueError):
        score(m, Observation([1.0, 2.0], 1.0))


def test_regularized_score_example():
    m = FittedModel(ModelSpec("linear_gaussian", l2_strength=2.0), [1.0, -1.0], 1, sigma2=1.0)
    obs = Observation([2.0], -0.5)
    np.testing.assert_allclose(score(m, obs), [0.5, 1.0])
    np.testing.assert_allclose(regularized_score(m, obs, 10), [0.3, 1.2])
    m = FittedModel(ModelSpec("logistic", l2_strength=2.0), [1.0, -1.0], 1)
    shift = score(m, obs) - regularized_score(m, obs, 10)
    np.testing.assert_allclose(shift, (2.0 / 10) * m.theta, rtol=0, atol=1e-15)


def test_regularized_score_without_penalty_is_plain(rng):
    m = FittedModel(ModelSpec("logistic"), rng.standard_normal(3), 2)
    obs = Observation(rng.standard_normal(2), 1.0)
    np.testing.assert_array_equal(regularized_score(m, obs, 7), score(m, obs))
    with pytest.raises(ValueError):
        regularized_score(m, obs, 0)


def test_fit_noiseless_line():
    x = np.linspace(-2, 2, 21)
    model = fit(Dataset.from_arrays(x[:, None], 2 * x), ModelSpec("linear_gaussian"))
    np.testing.assert_allclose(model.theta, [0.0, 2.0], atol=1e-8)


def test_fit_symmetric_logistic():
    data = Dataset.from_arrays([[1.0], [-1.0], [1.0], [-1.0]], [1, 0, 0, 1])
    model = fit(data, ModelSpec("logistic"))
    np.testing.assert_allclose(model.theta, [0.0, 0.0], atol=1e-10)


def test_fit_recovers_logistic_parameters():
    theta = np.array([0.0, 1.0, -1.0, 0.5, -0.5, 0.25])
    model = fit(make_data("logistic", 10_000, 5, theta, seed=7), ModelSpec("logistic"))
    assert np.max(np.abs(model.theta - theta)) <= 0.15


def test_linear_fit_is_weighted_ridge_solution(rng):
    n, p, c = 300, 3, 4.0
    X = rng.standard_normal((n, p))
    y = 1.0 + X @ [0.5, -1.0, 2.0] + rng.standard_normal(n)
    w = rng.uniform(0.5, 3.0, n)
    data = Dataset.from_arrays(X, y, w)
    plain = fit(data, ModelSpec("linear_gaussian"))
    Xt = np.hstack([np.ones((n, 1)), X])
    ols = np.linalg.solve(Xt.T @ (w[:, None] * Xt), Xt.T @ (w * y))
    np.testing.assert_allclose(plain.theta, ols, rtol=1e-9)
    resid = y - Xt @ plain.theta
    assert plain.sigma2 == pytest.approx(w @ resid ** 2 / w.sum(), rel=1e-12)

    ridge = fit(data, ModelSpec("linear_gaussian", l2_strength=c))
    s2 = ridge.sigma2
    sol = np.linalg.solve(Xt.T @ (w[:, None] * Xt) + c * s2 * np.eye(p + 1), Xt.T @ (w * y))
    np.testing.assert_allclose(ridge.theta, sol, rtol=1e-8)
    assert s2 == pytest.approx(w @ (y - Xt @ ridge.theta) ** 2 / w.sum(), rel=1e-10)


@pytest.mark.parametrize("name", list(SPECS))
@pytest.mark.parametrize("c", [0.0, 1.0])
def test_fit_zero_mean_regularized_score(name, c):
    spec = ModelSpec(**{**SPECS[name].to_dict(), "l2_strength": c})
    family = {"gaussian": "linear", "bernoulli": "logistic", "poisson": "poisson"}[spec.response]
    theta = [0.3, 0.8, -0.6] if family != "poisson" else [0.2, 0.3, -0.2]
    data = make_data(family, 600, 2, theta, seed=3)
    w = np.random.default_rng(4).uniform(0.5, 2.0, data.n)
    data = Dataset.from_arrays(data.X, data.y, w)
    model = fit(data, spec)
    assert np.max(np.abs(mean_regularized_score(model, data))) <= 1e-6
    assert model.final_grad_norm <= 1e-6


def test_fit_is_deterministic():
    data = make_data("logistic", 300, 2, [0.0, 1.0, -1.0], seed=1)
    spec = ModelSpec("mlp", hidden_width=2, task="classification", l2_strength=1.0)
    a = fit(data, spec, FitOptions(seed=5))
    b = fit(data, spec, FitOptions(seed=5))
    np.testing.assert_array_equal(a.theta, b.theta)


def test_fit_errors():
    X = np.random.default_rng(0).standard_normal((20, 2))
    with pytest.raises(DegenerateDataError):
        fit(Dataset.from_arrays(X, np.ones(20)), ModelSpec("logistic"))
    with pytest.raises(ValueError):
        fit(Dataset.from_arrays(X, np.full(20, 0.5)), ModelSpec("logistic"))
    X0 = X.copy()
    X0[:, 1] = 0.0
    with pytest.raises(DegenerateDataError):
        fit(Dataset.from_arrays(X0, X[:, 0]), ModelSpec("linear_gaussian"))
    with pytest.raises(FitError) as err:
        fit(make_data("logistic", 500, 2, [0, 1, 1], seed=0), ModelSpec("logistic"),
            FitOptions(max_iter=1))
    assert err.value.grad_norm > 0


def test_predict_and_classify():
    m = FittedModel(ModelSpec("logistic"), [0.0, 0.0], 1)
    assert predict(m, [3.0]) == 0.5
    np.testing.assert_array_equal(predict(m, np.ones((4, 1))), np.full(4, 0.5))
    logit = lambda p: np.log(p / (1 - p))  # noqa: E731
    assert classify(FittedModel(ModelSpec("logistic"), [logit(0.2), 0.0], 1), [1.0], 0.1057) == 1
    assert classify(FittedModel(ModelSpec("logistic"), [logit(0.05), 0.0], 1), [1.0], 0.1057) == 0
    with pytest.raises(ValueError):
        classify(FittedModel(ModelSpec("linear_gaussian"), [0.0, 0.0], 1), [1.0], 0.5)
    with pytest.raises(ValueError):
        classify(m, [1.0], 1.5)


def test_hessian_examples(rng):
    n = 4000
    X = rng.standard_normal((n, 2))
    X = (X - X.mean(0)) @ np.linalg.inv(np.linalg.cholesky(np.cov(X.T, bias=True))).T
    data = Dataset.from_arrays(X, (rng.random(n) < 0.5).astype(float))
    m = FittedModel(ModelSpec("logistic", l2_strength=2.0), np.zeros(3), 2, n_train=n)
    np.testing.assert_allclose(hessian_avg(m, data), (0.25 + 2.0 / n) * np.eye(3), atol=1e-12)
    g = FittedModel(ModelSpec("linear_gaussian"), [0.3, 0.1, 0.2], 2, sigma2=1.0)
    Xt = np.hstack([np.ones((n, 1)), X])
    np.testing.assert_allclose(hessian_avg(g, data), Xt.T @ Xt / n, atol=1e-12)


def test_hessian_psd_for_glms(rng):
    for name in ("linear_gaussian", "logistic", "poisson"):
        model, _ = _random_case(name, rng)
        X = rng.standard_normal((50, model.p))
        data = Dataset.from_arrays(X, rng.poisson(1.0, 50).astype(float).clip(0, 1))
        assert np.min(np.linalg.eigvalsh(hessian_avg(model, data))) >= -1e-12


@given(st.floats(0.1, 10.0), st.floats(0.0, 5.0), st.integers(0, 1000))
def test_regularized_shift_is_constant(scale, c, seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(3)
    m = FittedModel(ModelSpec("logistic", l2_strength=c), theta, 2, n_train=40)
    data = Dataset.from_arrays(scale * rng.standard_normal((10, 2)), rng.integers(0, 2, 10))
    diff = scores(m, data) - monitoring_scores(m, data)
    np.testing.assert_allclose(diff, np.broadcast_to((c / 40) * theta, diff.shape), rtol=0, atol=1e-12)


def test_weights_scale_monitoring_scores(rng):
    m = FittedModel(ModelSpec("logistic"), rng.standard_normal(3), 2)
    X = rng.standard_normal((5, 2))
    y = np.array([0, 1, 1, 0, 1.0])
    w = np.array([1, 7.5, 7.5, 1, 7.5])
    np.testing.assert_allclose(monitoring_scores(m, Dataset.from_arrays(X, y, w)),
                               w[:, None] * scores(m, Dataset.from_arrays(X, y)))


def test_model_roundtrip():
    m = FittedModel(ModelSpec("mlp", hidden_width=2, task="regression", l2_strength=0.5),
                    np.random.default_rng(0).standard_normal(9), 2, sigma2=0.3, n_train=17)
    back = FittedModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.theta, m.theta)
    assert back.spec == m.spec and back.sigma2 == m.sigma2 and back.n_train == 17


def test_spec_validation():
    for bad in (dict(family="tree"), dict(family="mlp"), dict(family="mlp", hidden_width=2),
                dict(family="glm_canonical"), dict(l2_strength=-1.0)):
        with pytest.raises(ValueError):
            ModelSpec(**bad)
    assert ModelSpec("mlp", hidden_width=3, task="regression").n_params(4) == 3 * 4 + 2 * 3 + 1


def test_score_series_flags(rng):
    m = FittedModel(ModelSpec("logistic"), rng.standard_normal(3), 2)
    data = Dataset.from_arrays(rng.standard_normal((6, 2)), rng.integers(0, 2, 6), t=np.arange(6) * 2)
    ser = score_series(m, data)
    assert ser.regularized and ser.weighted and not ser.decoupled
    assert len(ser.since(4)) == 4
