"""Fisher decoupling of score-mean shifts into per-parameter drift estimates."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .models import FittedModel, ScoreSeries, _dloglik, _predictor, hessian_avg, scores
from .monitor import Chart, MonitorConfig, estimate_covariance, stabilize, uni_ewma_chart

FISHER_METHODS = ("covariance", "hessian", "analytic")


@dataclass(frozen=True, eq=False)
class FisherEstimate:
    matrix: np.ndarray
    method: str
    delta: float
    inverse: np.ndarray

    @classmethod
    def from_matrix(cls, matrix, method="analytic", max_condition=1e4):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        W, delta = stabilize(matrix, max_condition, "nugget")
        return cls(0.5 * (matrix + matrix.T), method, delta, W @ W.T)


@dataclass(eq=False)
class DriftDiagnosis:
    delta_theta: np.ndarray
    window: tuple
    ranking: list
    charts: list = field(default_factory=list, repr=False)

    def to_dict(self, chart_files=None):
        d = {
            "delta_theta": [float(v) for v in self.delta_theta],
            "window": [int(self.window[0]), int(self.window[1])],
            "ranking": [int(j) for j in self.ranking],
        }
        if chart_files is not None:
            d["charts"] = [str(f) for f in chart_files]
        return d

    def to_json(self, path, chart_files=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(chart_files), fh, indent=2)
            fh.write("\n")


def default_method(model: FittedModel) -> str:
    return "hessian" if model.spec.family == "mlp" else "analytic"


def fisher_info(model: FittedModel, data, method: str | None = None,
                max_condition: float = 1e4) -> FisherEstimate:
    """Estimate the Fisher information over stationary (training) data.

    ``covariance``: weighted sample covariance of the plain scores.
    ``hessian``: weighted average Hessian of the regularized negative log-likelihood.
    ``analytic``: expected-information closed form of a canonical GLM,
    ``sum w b''(eta) x~ x~' / (a(phi) sum w)``.
    """
    method = method or default_method(model)
    if method == "covariance":
        if data.n < 2:
            raise ValueError("covariance method needs at least 2 observations")
        mat = estimate_covariance(scores(model, data), data.w)
    elif method == "hessian":
        mat = hessian_avg(model, data)
    elif method == "analytic":
        if model.spec.family == "mlp":
            raise ValueError("analytic Fisher information is only available for GLM families")
        eta, Xt = _predictor(model.spec, model.theta, data.X, model.p)
        _, d2 = _dloglik(model.spec.response, eta, data.y, model.sigma2)
        mat = (Xt * (-d2 * data.w)[:, None]).T @ Xt / data.w.sum()
    else:
        raise ValueError(f"unknown Fisher method {method!r}")
    return FisherEstimate.from_matrix(mat, method, max_condition)


def _scores_of(series):
    return np.asarray(getattr(series, "s", series), dtype=np.float64)


def decouple_scores(series, fisher: FisherEstimate) -> ScoreSeries:
    """Premultiply every score vector by the inverse Fisher information."""
    s = _scores_of(series)
    if s.ndim == 1:
        s = s.reshape(1, -1)
    if s.shape[1] != fisher.inverse.shape[0]:
        raise ValueError(f"scores have dimension {s.shape[1]}, Fisher has {fisher.inverse.shape[0]}")
    t = getattr(series, "t", np.arange(s.shape[0]))
    flags = dict(regularized=getattr(series, "regularized", False),
                 weighted=getattr(series, "weighted", False))
    return ScoreSeries(t, s @ fisher.inverse.T, decoupled=True, **flags)


def estimate_delta(post_scores, fisher: FisherEstimate, weights=None) -> np.ndarray:
    """Drift estimate: inverse Fisher times the (weighted) mean score over a window."""
    if getattr(post_scores, "decoupled", False):
        raise ValueError("scores are already decoupled")
    s = _scores_of(post_scores)
    if s.ndim != 2 or s.shape[0] == 0:
        raise ValueError("empty window")
    mean = s.mean(axis=0) if weights is None else np.asarray(weights) @ s / np.sum(weights)
    return fisher.inverse @ mean


def excursion(chart: Chart) -> float:
    """Largest EWMA departure from the center, in units of the distance to the crossed-side limit."""
    if len(chart) == 0:
        return 0.0
    tiny = np.finfo(float).tiny
    dev = chart.statistic - chart.center
    up = max(chart.ucl - chart.center, tiny)
    down = max(chart.center - chart.lcl, tiny) if chart.lcl is not None else up
    return float(np.max(np.where(dev >= 0, dev / up, -dev / down)))


def decoupled_charts(series, fisher: FisherEstimate, phase1, cfg: MonitorConfig,
                     limit_mode: str = "empirical"):
    """Two-sided EWMA chart per decoupled score component.

    Limits come from the decoupled Phase-I scores; each chart continues from
    the end of its Phase-I EWMA. Returns ``(charts, DriftDiagnosis)`` where the
    ranking orders components by :func:`excursion`, largest first.
    """
    dec = decouple_scores(series, fisher)
    dec1 = decouple_scores(phase1, fisher)
    if len(dec1) == 0:
        raise ValueError("phase1 is empty")
    charts = [
        uni_ewma_chart(dec.s[:, j], cfg.lam, dec1.s[:, j], cfg.alpha, limit_mode, "two",
                       init_batch=cfg.init_batch, t=dec.t)
        for j in range(dec.q)
    ]
    exc = np.array([excursion(c) for c in charts])
    ranking = [int(j) for j in np.argsort(-exc, kind="stable")]
    window = (int(dec.t[0]), int(dec.t[-1])) if len(dec) else (0, 0)
    delta = dec.s.mean(axis=0) if len(dec) else np.zeros(dec.q)
    return charts, DriftDiagnosis(delta, window, ranking, charts)
