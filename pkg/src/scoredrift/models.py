"""Parametric supervised models, their fitting, score vectors and Hessians.

Supported families
------------------
``linear_gaussian``  y ~ N(x~'theta, sigma2)
``logistic``         y ~ Bernoulli(sigmoid(x~'theta))
``glm_canonical``    canonical-link GLM with ``glm_b_function`` in
                     {gaussian, bernoulli, poisson}
``mlp``              one hidden tanh layer; Gaussian (regression) or
                     Bernoulli (classification) response

Parameter ordering is stable and documented because the diagnostics map
vector indices back to parameters: for GLMs the intercept comes first,
followed by the covariate coefficients in column order. For the MLP with
``h`` hidden units and ``p`` inputs the layout is ``W1`` (h x p, row-major),
``b1`` (h), ``w2`` (h), ``b2`` (1); the MLP always carries its biases.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .data import Dataset, Observation

FAMILIES = ("linear_gaussian", "logistic", "glm_canonical", "mlp")
GLM_B_FUNCTIONS = ("gaussian", "bernoulli", "poisson")
SIGMA2_FLOOR = 1e-12


class FitError(RuntimeError):
    """Fitting failed; ``grad_norm`` carries the final gradient infinity-norm."""

    def __init__(self, message, grad_norm=float("nan")):
        super().__init__(message)
        self.grad_norm = grad_norm


class DegenerateDataError(FitError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str = "logistic"
    glm_b_function: str | None = None
    hidden_width: int = 0
    task: str | None = None
    l2_strength: float = 0.0
    include_intercept: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "glm_canonical" and self.glm_b_function not in GLM_B_FUNCTIONS:
            raise ValueError("glm_canonical needs glm_b_function in " + ", ".join(GLM_B_FUNCTIONS))
        if self.family == "mlp":
            if self.hidden_width < 1:
                raise ValueError("mlp needs hidden_width >= 1")
            if self.task not in ("regression", "classification"):
                raise ValueError("mlp needs task 'regression' or 'classification'")
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be >= 0")

    @property
    def response(self) -> str:
        """Conditional response distribution: gaussian, bernoulli or poisson."""
        if self.family == "linear_gaussian":
            return "gaussian"
        if self.family == "logistic":
            return "bernoulli"
        if self.family == "glm_canonical":
            return self.glm_b_function
        return "gaussian" if self.task == "regression" else "bernoulli"

    @property
    def is_classifier(self) -> bool:
        return self.response == "bernoulli"

    def n_params(self, p: int) -> int:
        if self.family == "mlp":
            h = self.hidden_width
            return h * p + 2 * h + 1
        return p + int(self.include_intercept)

    def to_dict(self):
        return {
            "family": self.family,
            "glm_b_function": self.glm_b_function,
            "hidden_width": self.hidden_width,
            "task": self.task,
            "l2_strength": self.l2_strength,
            "include_intercept": self.include_intercept,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class FitOptions:
    grad_tol: float = 1e-6
    max_iter: int = 2000
    seed: int = 0


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: ModelSpec
    theta: np.ndarray
    p: int
    sigma2: float = 1.0
    n_train: int = 1
    final_grad_norm: float = 0.0
    iterations: int = field(default=0, compare=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if theta.shape[0] != self.spec.n_params(self.p):
            raise ValueError(
                f"theta has length {theta.shape[0]}, expected {self.spec.n_params(self.p)}"
            )
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def q(self) -> int:
        return self.theta.shape[0]

    def with_theta(self, theta) -> "FittedModel":
        return FittedModel(self.spec, theta, self.p, self.sigma2, self.n_train,
                           self.final_grad_norm, self.iterations)

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "p": self.p,
            "theta": [float(v) for v in self.theta],
            "sigma2": float(self.sigma2),
            "n_train": int(self.n_train),
            "final_grad_norm": float(self.final_grad_norm),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(ModelSpec.from_dict(d["spec"]), np.array(d["theta"], dtype=np.float64),
                   int(d["p"]), float(d["sigma2"]), int(d["n_train"]), float(d["final_grad_norm"]))


# -- response distributions ---------------------------------------------------


def _mean(response, eta):
    if response == "gaussian":
        return eta
    if response == "bernoulli":
        return special.expit(eta)
    return np.exp(eta)


def _loglik_eta(response, eta, y, sigma2):
    if response == "gaussian":
        return -0.5 * (y - eta) ** 2 / sigma2 - 0.5 * np.log(2 * np.pi * sigma2)
    if response == "bernoulli":
        return y * eta - np.logaddexp(0.0, eta)
    return y * eta - np.exp(eta) - special.gammaln(y + 1.0)


def _dloglik(response, eta, y, sigma2):
    """First and second derivative of the log-likelihood in the predictor."""
    if response == "gaussian":
        return (y - eta) / sigma2, np.full_like(eta, -1.0 / sigma2)
    mu = _mean(response, eta)
    if response == "bernoulli":
        return y - mu, -mu * (1.0 - mu)
    return y - mu, -mu


# -- predictor and its derivatives ---------------------------------------------

def design(spec: ModelSpec, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if spec.include_intercept:
        return np.hstack([np.ones((X.shape[0], 1)), X])
    return X


def _mlp_unpack(theta, p, h):
    W1 = theta[: h * p].reshape(h, p)
    b1 = theta[h * p: h * p + h]
    w2 = theta[h * p + h: h * p + 2 * h]
    b2 = theta[-1]
    return W1, b1, w2, b2


def _predictor(spec, theta, X, p, need_jac=True):
    """Return (eta, jacobian d eta / d theta) for a batch of rows."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != p:
        raise ValueError(f"covariate dimension {X.shape[1]} does not match model dimension {p}")
    if spec.family != "mlp":
        Xt = design(spec, X)
        return Xt @ theta, Xt
    h = spec.hidden_width
    W1, b1, w2, b2 = _mlp_unpack(theta, p, h)
    H = np.tanh(X @ W1.T + b1)
    eta = H @ w2 + b2
    if not need_jac:
        return eta, None
    G = w2 * (1.0 - H * H)
    n = X.shape[0]
    J = np.empty((n, spec.n_params(p)))
    J[:, : h * p] = (G[:, :, None] * X[:, None, :]).reshape(n, h * p)
    J[:, h * p: h * p + h] = G
    J[:, h * p + h: h * p + 2 * h] = H
    J[:, -1] = 1.0
    return eta, J


def _mlp_weighted_hess_eta(theta, X, p, h, coef):
    """sum_i coef_i * d^2 eta_i / d theta^2 for the one-hidden-layer network."""
    W1, b1, w2, _ = _mlp_unpack(theta, p, h)
    H = np.tanh(X @ W1.T + b1)
    D1 = 1.0 - H * H
    D2 = -2.0 * H * D1
    U = np.hstack([X, np.ones((X.shape[0], 1))])
    inner = np.einsum("i,ik,ia,ib->kab", coef, D2, U, U) * w2[:, None, None]
    cross = np.einsum("i,ik,ia->ka", coef, D1, U)
    q = h * p + 2 * h + 1
    out = np.zeros((q, q))
    for k in range(h):
        idx = np.r_[k * p: (k + 1) * p, h * p + k]
        out[np.ix_(idx, idx)] += inner[k]
        j = h * p + h + k
        out[idx, j] += cross[k]
        out[j, idx] += cross[k]
    return out


@dataclass(frozen=True, eq=False)
class ScoreSeries:
    """Time-indexed score vectors, one row of ``s`` per observation."""

    t: np.ndarray
    s: np.ndarray
    regularized: bool = False
    weighted: bool = False
    decoupled: bool = False

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError("scores must be 2-D (n, q)")
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        if t.shape[0] != s.shape[0]:
            raise ValueError("t and s lengths differ")
        if t.shape[0] > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("time index must be strictly increasing")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)

    def __len__(self):
        return self.s.shape[0]

    @property
    def q(self) -> int:
        return self.s.shape[1]

    def since(self, t_start) -> "ScoreSeries":
        keep = self.t >= t_start
        return ScoreSeries(self.t[keep], self.s[keep], self.regularized, self.weighted,
                           self.decoupled)


# -- public per-observation quantities ----------------------------------------

def _as_xy(model, obs_or_data):
    if isinstance(obs_or_data, Observation):
        return np.atleast_2d(obs_or_data.x), np.atleast_1d(float(obs_or_data.y))
    return obs_or_data.X, obs_or_data.y


def loglik(model: FittedModel, data, theta=None) -> np.ndarray:
    """Per-observation log-likelihood ``log P(y | x; theta)`` (default: fitted theta)."""
    theta = model.theta if theta is None else np.asarray(theta, dtype=np.float64)
    X, y = _as_xy(model, data)
    eta, _ = _predictor(model.spec, theta, X, model.p, need_jac=False)
    return _loglik_eta(model.spec.response, eta, y, model.sigma2)


def scores(model: FittedModel, data, theta=None) -> np.ndarray:
    """Unweighted, unregularized score vectors, one row per observation."""
    theta = model.theta if theta is None else np.asarray(theta, dtype=np.float64)
    X, y = _as_xy(model, data)
    eta, J = _predictor(model.spec, theta, X, model.p)
    d1, _ = _dloglik(model.spec.response, eta, y, model.sigma2)
    return d1[:, None] * J


def score(model: FittedModel, obs: Observation) -> np.ndarray:
    """Gradient of ``log P(y | x; theta)`` at the fitted parameters."""
    return scores(model, obs)[0]


def regularized_score(model: FittedModel, obs: Observation, n: int) -> np.ndarray:
    """Score minus the per-observation share of the L2 penalty gradient, ``(c / n) theta``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return score(model, obs) - (model.spec.l2_strength / n) * model.theta


def monitoring_scores(model: FittedModel, data: Dataset) -> np.ndarray:
    """Weighted regularized scores ``w_i s_i - (c / n_train) theta`` used by the charts.

    Their plain average over the training data is the (negated) gradient of the
    mean regularized loss, so it vanishes at the fit.
    """
    s = scores(model, data) * data.w[:, None]
    c = model.spec.l2_strength
    if c:
        s -= (c / model.n_train) * model.theta
    return s


def score_series(model: FittedModel, data: Dataset, monitoring: bool = True) -> ScoreSeries:
    """Scores of a dataset as a series: weighted-regularized (default) or plain."""
    if monitoring:
        return ScoreSeries(data.t, monitoring_scores(model, data), regularized=True, weighted=True)
    return ScoreSeries(data.t, scores(model, data))


def hessian_avg(model: FittedModel, data: Dataset, theta=None) -> np.ndarray:
    """Weighted average Hessian of ``-(log P - J / n)`` at the fitted parameters.

    ``sum_i w_i H_i / sum_i w_i + (c / n_train) I``.
    """
    theta = model.theta if theta is None else np.asarray(theta, dtype=np.float64)
    spec = model.spec
    eta, J = _predictor(spec, theta, data.X, model.p)
    d1, d2 = _dloglik(spec.response, eta, data.y, model.sigma2)
    wsum = data.w.sum()
    H = (J * (-d2 * data.w)[:, None]).T @ J
    if spec.family == "mlp":
        H -= _mlp_weighted_hess_eta(theta, data.X, model.p, spec.hidden_width, d1 * data.w)
    H /= wsum
    H += (spec.l2_strength / model.n_train) * np.eye(model.q)
    return 0.5 * (H + H.T)


def predict(model: FittedModel, X):
    """Conditional mean (class-1 probability for classifiers).

    A 1-D ``X`` is one observation and gives a scalar; a 2-D ``X`` gives one
    value per row.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim <= 1
    eta, _ = _predictor(model.spec, model.theta, X.reshape(1, -1) if single else X,
                        model.p, need_jac=False)
    mu = _mean(model.spec.response, eta)
    return float(mu[0]) if single else mu


def classify(model: FittedModel, X, threshold: float = 0.5):
    """Label 1 iff the predicted probability is at least ``threshold``."""
    if not model.spec.is_classifier:
        raise ValueError("classify needs a classification model")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    prob = predict(model, X)
    return (np.asarray(prob) >= threshold).astype(np.int64) if np.ndim(prob) else int(prob >= threshold)


# -- fitting -----------------------------------------------------------------

def _check_fit_data(data: Dataset, spec: ModelSpec):
    if data.n == 0:
        raise ValueError("cannot fit on an empty dataset")
    y = data.y
    if spec.response == "bernoulli":
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("classification responses must be 0/1")
        if np.all(y == y[0]):
            raise DegenerateDataError("all responses belong to one class")
    elif spec.response == "poisson":
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("poisson responses must be non-negative integers")
        if np.all(y == 0) and spec.l2_strength == 0:
            raise DegenerateDataError("all poisson responses are zero")
    if spec.family != "mlp" and spec.l2_strength == 0:
        Xt = design(spec, data.X)
        if np.any(np.all(Xt == 0, axis=0)):
            raise DegenerateDataError("design has an all-zero column and no regularization")


class _Objective:
    """Mean regularized negative log-likelihood ``[sum w (-l) + c/2 |theta|^2] / n``."""

    def __init__(self, spec, data, sigma2):
        self.spec, self.data, self.sigma2 = spec, data, sigma2
        self.n = data.n
        self.c = spec.l2_strength

    def value(self, theta):
        eta, _ = _predictor(self.spec, theta, self.data.X, self.data.p, need_jac=False)
        ll = _loglik_eta(self.spec.response, eta, self.data.y, self.sigma2)
        return (-(self.data.w @ ll) + 0.5 * self.c * theta @ theta) / self.n

    def grad(self, theta):
        eta, J = _predictor(self.spec, theta, self.data.X, self.data.p)
        d1, _ = _dloglik(self.spec.response, eta, self.data.y, self.sigma2)
        return (-(J.T @ (self.data.w * d1)) + self.c * theta) / self.n

    def hess(self, theta):
        eta, J = _predictor(self.spec, theta, self.data.X, self.data.p)
        d1, d2 = _dloglik(self.spec.response, eta, self.data.y, self.sigma2)
        H = (J * (-d2 * self.data.w)[:, None]).T @ J
        if self.spec.family == "mlp":
            H -= _mlp_weighted_hess_eta(theta, self.data.X, self.data.p,
                                        self.spec.hidden_width, d1 * self.data.w)
        H += self.c * np.eye(theta.shape[0])
        return 0.5 * (H + H.T) / self.n


def _newton(obj, theta, opts):
    """Damped Newton iterations for the convex GLM objectives."""
    f = obj.value(theta)
    g = obj.grad(theta)
    for it in range(opts.max_iter):
        gnorm = np.max(np.abs(g))
        if gnorm <= opts.grad_tol:
            return _polish(obj, theta, g, gnorm) + (it,)
        step = np.linalg.lstsq(obj.hess(theta), -g, rcond=None)[0]
        slope = g @ step
        t = 1.0
        for _ in range(40):
            cand = theta + t * step
            f_new = obj.value(cand)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            g_cand = obj.grad(theta + step)
            if np.max(np.abs(g_cand)) >= gnorm:
                raise FitError("line search failed to make progress", gnorm)
            cand, f_new = theta + step, obj.value(theta + step)
        theta, f = cand, f_new
        g = obj.grad(theta)
    gnorm = np.max(np.abs(g))
    if gnorm <= opts.grad_tol:
        return theta, gnorm, opts.max_iter
    raise FitError(f"no convergence within {opts.max_iter} iterations "
                   f"(gradient inf-norm {gnorm:.3e})", gnorm)


def _polish(obj, theta, g, gnorm):
    """One full Newton step past the tolerance, kept only if it shrinks the gradient."""
    cand = theta + np.linalg.lstsq(obj.hess(theta), -g, rcond=None)[0]
    g_cand = np.max(np.abs(obj.grad(cand)))
    if g_cand < gnorm:
        return cand, g_cand
    return theta, gnorm


def _mlp_init(spec, p, seed):
    rng = np.random.default_rng(seed)
    h = spec.hidden_width
    lim1 = 0.5 / np.sqrt(p)
    lim2 = 0.5 / np.sqrt(h)
    return np.concatenate([
        rng.uniform(-lim1, lim1, h * p),
        rng.uniform(-lim1, lim1, h),
        rng.uniform(-lim2, lim2, h),
        rng.uniform(-lim2, lim2, 1),
    ])


def _mlp_optimize(obj, theta, opts):
    res = optimize.minimize(obj.value, theta, jac=obj.grad, hess=obj.hess, method="trust-ncg",
                            options={"gtol": opts.grad_tol, "maxiter": opts.max_iter})
    theta = res.x
    gnorm = np.max(np.abs(obj.grad(theta)))
    if not gnorm <= opts.grad_tol:
        raise FitError(f"mlp fit did not converge in {res.nit} iterations "
                       f"(gradient inf-norm {gnorm:.3e})", gnorm)
    return theta, gnorm, int(res.nit)


def _initial_theta(spec, data, seed):
    q = spec.n_params(data.p)
    if spec.family == "mlp":
        theta = _mlp_init(spec, data.p, seed)
        if spec.response == "gaussian":
            theta[-1] = np.average(data.y, weights=data.w)
        return theta
    theta = np.zeros(q)
    if spec.response == "poisson" and spec.include_intercept:
        theta[0] = np.log(max(np.average(data.y, weights=data.w), 1e-8))
    return theta


def fit(data: Dataset, spec: ModelSpec, opts: FitOptions | None = None) -> FittedModel:
    """Fit by (regularized) maximum likelihood.

    Newton/IRLS for the GLM families, trust-region Newton for the MLP. For
    Gaussian responses the noise variance is the weighted mean squared
    residual and is iterated to a fixed point together with ``theta`` (the L2
    penalty lives on the log-likelihood scale, so it interacts with sigma2).

    Raises
    ------
    FitError
        When the mean regularized score does not reach ``opts.grad_tol``.
    DegenerateDataError
        For single-class labels or unidentifiable all-zero design columns.
    """
    opts = opts or FitOptions()
    _check_fit_data(data, spec)
    theta = _initial_theta(spec, data, opts.seed)
    solver = _mlp_optimize if spec.family == "mlp" else _newton
    sigma2 = 1.0
    wsum = data.w.sum()

    if spec.response != "gaussian":
        theta, gnorm, iters = solver(_Objective(spec, data, 1.0), theta, opts)
        return FittedModel(spec, theta, data.p, 1.0, data.n, float(gnorm), iters)

    floor = max(SIGMA2_FLOOR, 1e-8 * float(data.w @ data.y ** 2 / wsum))
    total = 0
    for _ in range(100):
        theta, gnorm, iters = solver(_Objective(spec, data, sigma2), theta, opts)
        total += iters
        eta, _ = _predictor(spec, theta, data.X, data.p, need_jac=False)
        new = max(float(data.w @ (data.y - eta) ** 2 / wsum), floor)
        if spec.l2_strength == 0:
            # theta does not depend on sigma2; rescale the gradient to the final sigma2.
            gnorm = gnorm * sigma2 / new
            sigma2 = new
            if gnorm > opts.grad_tol:
                theta, gnorm, iters = solver(_Objective(spec, data, sigma2), theta, opts)
            break
        if abs(new - sigma2) <= 1e-13 * sigma2:
            break
        sigma2 = new
    else:
        raise FitError("noise variance did not reach a fixed point", gnorm)
    return FittedModel(spec, theta, data.p, sigma2, data.n, float(gnorm), total)


def mean_regularized_score(model: FittedModel, data: Dataset) -> np.ndarray:
    """Plain average of :func:`monitoring_scores` (zero at the fit on the training data)."""
    return monitoring_scores(model, data).mean(axis=0)
