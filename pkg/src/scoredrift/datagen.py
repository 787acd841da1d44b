"""Synthetic drift scenarios with known ground truth, and the replication benchmark."""
from __future__ import annotations

import csv
import functools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import special, stats

from .baselines import BaselineConfig, error_ewma, residual_ewma
from .data import Dataset
from .models import FitError, ModelSpec
from .monitor import MonitorConfig, NumericalError
from .pipeline import monitor_stream, setup_monitoring

DRIFT_KINDS = ("none", "abrupt", "gradual", "covariate_shift", "error_invariant", "misspec")
METHODS = ("score_mewma", "error_ewma", "residual_ewma")


class SearchError(RuntimeError):
    """The error-invariant search found no bracketing interval."""


@dataclass(frozen=True)
class Drift:
    """Drift schedule inside Phase-II; times are row offsets into Phase-II.

    ``abrupt``: theta jumps by ``delta_theta`` at ``t_change``.
    ``gradual``: theta moves linearly by ``delta_theta`` between ``t_change`` and ``t_end``.
    ``covariate_shift``: covariates shift by ``mu_shift`` at ``t_change``; theta fixed.
    ``error_invariant``: theta jumps to the result of :func:`search_error_invariant`
    (or to ``theta1`` when given).
    ``misspec``: the truth carries ``quad_coef0 * x1^2``; the coefficient jumps by
    ``quad_coef_drift`` at ``t_change``.
    """

    kind: str = "none"
    t_change: int = 0
    delta_theta: tuple | None = None
    t_end: int | None = None
    mu_shift: float | tuple = 0.0
    quad_coef0: float = 0.0
    quad_coef_drift: float = 0.0
    theta1: tuple | None = None
    tol: float = 0.002
    min_dist: float = 0.3

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    name: str = "S1"
    family: str = "logistic"
    p: int = 5
    theta0: tuple = (0.0, 1.0, -1.0, 0.5, -0.5, 0.25)
    covariate_dist: str = "iid_standard_normal"
    rho: float = 0.0
    n_train: int = 5000
    n_phase1: int = 5000
    n_phase2: int = 10000
    drift: Drift = field(default_factory=Drift)
    seed: int = 0
    noise_sd: float = 1.0
    class_weight: float = 1.0
    lam: float = 0.05
    alpha: float = 0.001
    threshold: float = 0.5
    l2_strength: float = 0.0

    def __post_init__(self):
        if isinstance(self.drift, dict):
            object.__setattr__(self, "drift", Drift(**self.drift))
        object.__setattr__(self, "theta0", tuple(float(v) for v in self.theta0))
        if self.family not in ("logistic", "linear_gaussian", "poisson"):
            raise ValueError(f"unsupported scenario family {self.family!r}")
        if self.covariate_dist not in ("iid_standard_normal", "correlated_normal"):
            raise ValueError(f"unknown covariate distribution {self.covariate_dist!r}")
        if len(self.theta0) != self.p + 1:
            raise ValueError(f"theta0 needs {self.p + 1} entries (intercept + {self.p})")
        if min(self.n_train, self.n_phase1, self.n_phase2) < 1:
            raise ValueError("dataset sizes must be positive")
        d = self.drift
        if d.kind != "none" and not 0 <= d.t_change < self.n_phase2:
            raise ValueError("t_change must lie inside Phase-II")
        if d.kind == "gradual" and not (d.t_end is not None and d.t_change < d.t_end <= self.n_phase2):
            raise ValueError("gradual drift needs t_change < t_end <= n_phase2")
        if d.delta_theta is not None and len(d.delta_theta) != self.p + 1:
            raise ValueError("delta_theta has the wrong length")

    @property
    def spec(self) -> ModelSpec:
        if self.family == "poisson":
            return ModelSpec("glm_canonical", glm_b_function="poisson", l2_strength=self.l2_strength)
        return ModelSpec(self.family, l2_strength=self.l2_strength)

    @property
    def monitor_config(self) -> MonitorConfig:
        return MonitorConfig(lam=self.lam, alpha=self.alpha)

    @property
    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(lam=self.lam, alpha=self.alpha, threshold=self.threshold)

    def to_dict(self):
        d = asdict(self)
        d["theta0"] = list(self.theta0)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["drift"] = Drift(**{k: tuple(v) if isinstance(v, list) else v
                              for k, v in d.get("drift", {}).items()})
        return cls(**d)


@dataclass(eq=False)
class Truth:
    theta0: np.ndarray
    theta_phase2: np.ndarray
    t_change: int
    t_change_time: int
    quad_phase2: np.ndarray | None = None

    def to_dict(self):
        return {
            "theta0": [float(v) for v in self.theta0],
            "theta_final": [float(v) for v in self.theta_phase2[-1]],
            "t_change": int(self.t_change),
            "t_change_time": int(self.t_change_time),
            "quad_coef_final": None if self.quad_phase2 is None else float(self.quad_phase2[-1]),
        }


def _covariates(rng, n, p, dist, rho):
    z = rng.standard_normal((n, p))
    if dist == "correlated_normal":
        common = rng.standard_normal((n, 1))
        return math.sqrt(1.0 - rho) * z + math.sqrt(rho) * common
    return z


def _respond(family, eta, u, noise_sd):
    if family == "logistic":
        return (u < special.expit(eta)).astype(np.float64)
    if family == "poisson":
        return stats.poisson.ppf(u, np.exp(eta)).astype(np.float64)
    return eta + noise_sd * stats.norm.ppf(u)


def generate(sc: Scenario):
    """Draw ``(train, phase1, phase2, truth)``; a pure function of the scenario seed.

    Covariates and response noise are drawn before the drift is applied, so
    scenarios differing only in drift share every random draw.
    """
    rng = np.random.default_rng(sc.seed)
    n0 = sc.n_train + sc.n_phase1
    n = n0 + sc.n_phase2
    X = _covariates(rng, n, sc.p, sc.covariate_dist, sc.rho)
    u = rng.random(n)
    # keep the uniforms away from 0/1 so inverse-CDF draws stay finite
    u = np.clip(u, 1e-16, 1.0 - 1e-16)

    theta0 = np.asarray(sc.theta0)
    d = sc.drift
    n2 = sc.n_phase2
    ramp = np.zeros(n2)
    if d.kind in ("abrupt", "error_invariant", "covariate_shift", "misspec"):
        ramp[d.t_change:] = 1.0
    elif d.kind == "gradual":
        k = np.arange(n2)
        ramp = np.clip((k - d.t_change) / (d.t_end - d.t_change), 0.0, 1.0)

    if d.kind == "error_invariant":
        theta1 = (np.asarray(d.theta1) if d.theta1 is not None else
                  search_error_invariant(sc.theta0, sc.covariate_dist, d.tol, d.min_dist,
                                         rho=sc.rho, threshold=sc.threshold,
                                         class_weight=sc.class_weight))
        step = theta1 - theta0
    elif d.kind in ("abrupt", "gradual") and d.delta_theta is not None:
        step = np.asarray(d.delta_theta, dtype=np.float64)
    else:
        step = np.zeros_like(theta0)
    theta_p2 = theta0 + ramp[:, None] * step

    if d.kind == "covariate_shift":
        X[n0:] += ramp[:, None] * np.broadcast_to(np.asarray(d.mu_shift, dtype=np.float64), (sc.p,))

    theta_all = np.vstack([np.broadcast_to(theta0, (n0, theta0.shape[0])), theta_p2])
    eta = theta_all[:, 0] + np.einsum("ij,ij->i", X, theta_all[:, 1:])
    quad = None
    if d.kind == "misspec":
        quad = d.quad_coef0 + d.quad_coef_drift * ramp
        eta = eta + np.concatenate([np.full(n0, d.quad_coef0), quad]) * X[:, 0] ** 2
    y = _respond(sc.family, eta, u, sc.noise_sd)
    w = np.where(y == 1, sc.class_weight, 1.0) if sc.family == "logistic" else np.ones(n)

    full = Dataset.from_arrays(X, y, w)
    train = full[: sc.n_train]
    phase1 = full[sc.n_train: n0]
    phase2 = full[n0:]
    truth = Truth(theta0, theta_p2, d.t_change, int(phase2.t[d.t_change]), quad)
    return train, phase1, phase2, truth


# -- error-invariant drift ------------------------------------------------------

def _mc_covariates(p, dist, rho, n, seed):
    return _covariates(np.random.default_rng(seed), n, p, dist, rho)


def expected_error(theta, theta_clf, X, threshold=0.5, class_weight=1.0):
    """Expected weighted misclassification rate of the fixed classifier ``theta_clf``
    when labels follow ``theta``, averaged over the covariate sample ``X``.

    Label noise is integrated out exactly; only the covariates are sampled.
    """
    theta = np.asarray(theta, dtype=np.float64)
    pred1 = special.expit(theta_clf[0] + X @ theta_clf[1:]) >= threshold
    p1 = special.expit(theta[0] + X @ theta[1:])
    return float(np.mean(np.where(pred1, 1.0 - p1, class_weight * p1)))


def _path_point(theta0, angle, radius):
    th = np.array(theta0, dtype=np.float64)
    a, b = th[1], th[2]
    base = math.atan2(b, a)
    th[1] = radius * math.cos(base + angle)
    th[2] = radius * math.sin(base + angle)
    return th


@functools.lru_cache(maxsize=32)
def _search_cached(theta0, dist, tol, min_dist, rho, threshold, class_weight, n_mc, seed,
                   verify_seed):
    th0 = np.asarray(theta0, dtype=np.float64)
    r0 = math.hypot(th0[1], th0[2])
    if r0 == 0:
        raise SearchError("theta0 has no slope in its first two covariates to rotate")
    if math.isinf(tol):
        angle = 2.0 * math.asin(min(1.0, min_dist / (2.0 * r0)))
        return tuple(_path_point(th0, angle, r0))

    X = _mc_covariates(th0.shape[0] - 1, dist, rho, n_mc, seed)
    X_check = _mc_covariates(th0.shape[0] - 1, dist, rho, n_mc, verify_seed)
    base = expected_error(th0, th0, X, threshold, class_weight)
    base_check = expected_error(th0, th0, X_check, threshold, class_weight)

    def gap(angle, radius):
        return expected_error(_path_point(th0, angle, radius), th0, X, threshold, class_weight) - base

    # Rotating the slopes away from theta0 raises the fixed classifier's error;
    # sharpening the rotated labels (larger radius) lowers it again.
    for angle in np.linspace(np.pi / 24, np.pi / 2, 12):
        lo, hi = r0, 64.0 * r0
        g_lo, g_hi = gap(angle, lo), gap(angle, hi)
        if not (g_lo > 0 > g_hi):
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            g_mid = gap(angle, mid)
            if g_mid > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * hi:
                break
        th1 = _path_point(th0, angle, 0.5 * (lo + hi))
        if np.linalg.norm(th1 - th0) < min_dist:
            continue
        err = expected_error(th1, th0, X, threshold, class_weight)
        err_check = expected_error(th1, th0, X_check, threshold, class_weight)
        if abs(err - base) <= tol and abs(err_check - base_check) <= tol:
            return tuple(th1)
    raise SearchError("no bracketing interval found along the rotate-and-rescale path")


def search_error_invariant(theta0, covariate_dist="iid_standard_normal", tol=0.002, min_dist=0.3,
                           rho=0.0, threshold=0.5, class_weight=1.0, n_mc=10 ** 6, seed=20240,
                           verify_seed=20241) -> np.ndarray:
    """Find logistic parameters that move the concept but not the error rate.

    Returns ``theta1`` with ``|theta1 - theta0| >= min_dist`` such that the
    fixed classifier built from ``theta0`` has (Monte-Carlo) expected error
    under ``theta1`` within ``tol`` of its error under ``theta0``, on both the
    search sample and an independent verification sample. The path rotates the
    first two slopes by a fixed angle and bisects on their joint magnitude;
    angles are tried in increasing order.

    Raises
    ------
    SearchError
        If no angle brackets the base error rate.
    """
    if not tol > 0 or not min_dist > 0:
        raise ValueError("tol and min_dist must be positive")
    theta0 = tuple(float(v) for v in theta0)
    if len(theta0) < 3:
        raise ValueError("theta0 needs an intercept and at least two slopes")
    return np.array(_search_cached(theta0, covariate_dist, float(tol), float(min_dist), float(rho),
                                   float(threshold), float(class_weight), int(n_mc), int(seed),
                                   int(verify_seed)))


# -- benchmark ------------------------------------------------------------------

@dataclass(eq=False)
class MethodResult:
    scenario: str
    method: str
    seeds: list
    delays: list
    detected: list
    false_alarm_rates: list
    failures: list = field(default_factory=list)
    horizon: int = 0

    @property
    def reps(self) -> int:
        return len(self.delays)

    def summary(self):
        d = np.asarray(self.delays, dtype=np.float64)
        det = np.asarray(self.detected, dtype=bool)
        fa = np.asarray(self.false_alarm_rates, dtype=np.float64)
        has = d.size > 0
        return {
            "scenario": self.scenario,
            "method": self.method,
            "reps": self.reps,
            "failures": len(self.failures),
            "median_delay": float(np.median(d)) if has else None,
            "delay_q25": float(np.percentile(d, 25)) if has else None,
            "delay_q75": float(np.percentile(d, 75)) if has else None,
            "iqr_delay": float(np.percentile(d, 75) - np.percentile(d, 25)) if has else None,
            "detection_fraction": float(det.mean()) if has else None,
            "false_alarm_rate": float(np.nanmean(fa)) if has and np.any(np.isfinite(fa)) else None,
        }

    def to_dict(self):
        out = self.summary()
        out.update(seeds=[int(s) for s in self.seeds], delays=[float(v) for v in self.delays],
                   detected=[bool(v) for v in self.detected],
                   false_alarm_rates=[float(v) for v in self.false_alarm_rates],
                   failed=list(self.failures), horizon=self.horizon)
        return out


@dataclass(eq=False)
class BenchmarkReport:
    results: list
    horizon: int
    alpha: float | None

    def get(self, scenario, method) -> MethodResult:
        for r in self.results:
            if r.scenario == scenario and r.method == method:
                return r
        raise KeyError((scenario, method))

    def to_dict(self):
        return {"horizon": self.horizon, "alpha": self.alpha,
                "results": [r.to_dict() for r in self.results]}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def to_csv(self, path):
        keys = ["scenario", "method", "reps", "failures", "median_delay", "delay_q25", "delay_q75",
                "iqr_delay", "detection_fraction", "false_alarm_rate"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            wr.writeheader()
            for r in self.results:
                wr.writerow({k: ("" if v is None else v) for k, v in r.summary().items()})


def sign_test(delays_a, delays_b) -> float:
    """One-sided sign-test p-value that method A's paired delays are smaller; ties dropped."""
    a = np.asarray(delays_a, dtype=np.float64)
    b = np.asarray(delays_b, dtype=np.float64)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    if wins + losses == 0:
        return 1.0
    return float(stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)


def run_method(method, setup, phase1, phase2, sc):
    """Chart Phase-II with one method; returns the chart."""
    if method == "score_mewma":
        chart, _ = monitor_stream(setup, phase2)
        return chart
    bcfg = replace(sc.baseline_config, alpha=setup.cfg.alpha)
    if method == "error_ewma":
        return error_ewma(setup.model, phase2, phase1, bcfg)
    if method == "residual_ewma":
        return residual_ewma(setup.model, phase2, phase1, bcfg)
    raise ValueError(f"unknown method {method!r}")


def _replicate(args):
    sc, methods, horizon, alpha = args
    out = {}
    try:
        train, phase1, phase2, truth = generate(sc)
        cfg = replace(sc.monitor_config, alpha=alpha if alpha is not None else sc.alpha)
        stable = Dataset.concat([train, phase1])
        setup = setup_monitoring(stable, sc.n_train / stable.n, sc.spec, cfg)
    except (FitError, NumericalError, np.linalg.LinAlgError) as exc:
        return {m: ("failed", str(exc)) for m in methods}
    t_change = truth.t_change_time if sc.drift.kind != "none" else int(phase2.t[0])
    for m in methods:
        try:
            chart = run_method(m, setup, phase1, phase2, sc)
        except ValueError as exc:
            out[m] = ("failed", str(exc))
            continue
        first = chart.first_signal(start_t=t_change)
        if first is not None and first - t_change < horizon:
            delay, det = float(first - t_change), True
        else:
            delay, det = float(horizon), False
        pre = chart.t < t_change
        in_control = pre if sc.drift.kind != "none" else np.ones(len(chart), dtype=bool)
        fa = float(chart.signal[in_control].mean()) if in_control.any() else float("nan")
        out[m] = ("ok", delay, det, fa)
    return out


def benchmark(scenarios, methods=METHODS, reps: int = 50, horizon: int = 5000,
              alpha: float | None = None, workers: int = 1) -> BenchmarkReport:
    """Replicate each scenario ``reps`` times (seed_i = scenario seed + i) and
    compare detection delays of the methods on identical data at matched alpha.

    Undetected runs are censored at ``horizon``. A replication whose fit fails
    is recorded under ``failures`` and excluded from the delay statistics.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    results = []
    for sc in scenarios:
        jobs = [(replace(sc, seed=sc.seed + i), tuple(methods), horizon, alpha) for i in range(reps)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outs = list(pool.map(_replicate, jobs))
        else:
            outs = [_replicate(j) for j in jobs]
        for m in methods:
            res = MethodResult(sc.name, m, [], [], [], [], horizon=horizon)
            for job, out in zip(jobs, outs):
                rec = out[m]
                if rec[0] == "failed":
                    res.failures.append({"seed": job[0].seed, "error": rec[1]})
                    continue
                res.seeds.append(job[0].seed)
                res.delays.append(rec[1])
                res.detected.append(rec[2])
                res.false_alarm_rates.append(rec[3])
            results.append(res)
    return BenchmarkReport(results, horizon, alpha)


def s1(seed=0, **changes) -> Scenario:
    """The default workhorse scenario: +0.5 jump in the coefficient of x3."""
    drift = Drift("abrupt", t_change=2000, delta_theta=(0.0, 0.0, 0.0, 0.5, 0.0, 0.0))
    return replace(Scenario(name="S1", drift=drift, seed=seed), **changes)
