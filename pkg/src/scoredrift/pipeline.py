"""Retrospective stability check, Phase-I calibration, Phase-II monitoring and diagnosis."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .diagnostics import DriftDiagnosis, decoupled_charts, estimate_delta, fisher_info
from .models import (FitOptions, FittedModel, ModelSpec, ScoreSeries, fit, monitoring_scores,
                     score_series, scores)
from .monitor import (Chart, MonitorConfig, MonitorState, calibrate_ucl, estimate_covariance,
                      run_chart, warmup_length)

SUSTAINED_RUN = 50


@dataclass(eq=False)
class StabilityReport:
    """Outcome of the retrospective check.

    ``stable`` is the verdict on the data as supplied; ``final_stable`` tells
    whether the window left after truncation passed its own re-check.
    """

    stable: bool
    first_signal_t: int | None
    truncate_before_t: int | None
    iterations: int
    chart: Chart
    final_stable: bool = True

    def to_dict(self):
        return {
            "stable": self.stable,
            "first_signal_t": self.first_signal_t,
            "truncate_before_t": self.truncate_before_t,
            "iterations": self.iterations,
            "final_stable": self.final_stable,
            "ucl": self.chart.ucl,
        }


@dataclass(eq=False)
class MonitoringSetup:
    model: FittedModel
    state: MonitorState
    cfg: MonitorConfig
    split: tuple
    train: Dataset | None = None
    phase1: Dataset | None = None
    phase1_chart: Chart | None = None

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "monitor": self.cfg.to_dict(),
            "state": self.state.to_dict(),
            "split": [int(self.split[0]), int(self.split[1])],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(FittedModel.from_dict(d["model"]), MonitorState.from_dict(d["state"]),
                   MonitorConfig.from_dict(d["monitor"]), tuple(d["split"]))

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def read_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def attach(self, stable: Dataset) -> "MonitoringSetup":
        """Re-attach the calibration data (D1, D2) after loading from JSON."""
        n1, n = self.split
        if stable.n != n:
            raise ValueError(f"stable data has {stable.n} rows, setup was calibrated on {n}")
        return replace(self, train=stable[:n1], phase1=stable[n1:])


def first_sustained(signal, run_length=SUSTAINED_RUN):
    """Index where the first run of ``run_length`` consecutive signals starts, or None."""
    sig = np.asarray(signal, dtype=bool)
    if sig.shape[0] < run_length:
        return None
    csum = np.concatenate([[0], np.cumsum(sig)])
    full = np.flatnonzero(csum[run_length:] - csum[:-run_length] == run_length)
    return int(full[0]) if full.size else None


def _self_chart(window: Dataset, spec, cfg, fit_opts):
    model = fit(window, spec, fit_opts)
    s = monitoring_scores(model, window)
    half = window.n // 2
    ref = s[:half]
    state = MonitorState.from_covariance(estimate_covariance(ref), ref.mean(axis=0), cfg)
    chart = run_chart(ScoreSeries(window.t, s), state, cfg)
    warm = warmup_length(half, cfg.init_batch)
    ucl = calibrate_ucl(chart.statistic[warm:half], cfg.alpha)
    return Chart(window.t, chart.statistic, ucl, state=replace(chart.state, ucl=ucl))


def retrospective(data: Dataset, spec: ModelSpec, cfg: MonitorConfig, max_loops: int = 5,
                  fit_opts: FitOptions | None = None,
                  sustained: int = SUSTAINED_RUN) -> StabilityReport:
    """Self-monitor the training data and truncate before sustained drift.

    Each loop fits on the current window, charts the window's own scores
    against limits calibrated on its first half, and on a run of
    ``sustained`` consecutive signals drops everything before the run start
    minus the effective window ``1 / lambda``.
    """
    if data.n == 0:
        raise ValueError("empty dataset")
    if max_loops < 1:
        raise ValueError("max_loops must be >= 1")
    q = spec.n_params(data.p)
    lag = int(round(cfg.effective_window))
    window = data
    first_chart = None
    first_signal = None
    truncate = None
    loops = 0
    final_stable = False
    for _ in range(max_loops):
        if window.n < 10 * q:
            raise ValueError(f"only {window.n} observations left; need at least {10 * q} to fit")
        chart = _self_chart(window, spec, cfg, fit_opts)
        if first_chart is None:
            first_chart = chart
        start = first_sustained(chart.signal, sustained)
        if start is None:
            final_stable = True
            break
        t_sig = int(window.t[start])
        if first_signal is None:
            first_signal = t_sig
        truncate = max(t_sig - lag, int(window.t[0]) + 1)
        window = window.since(truncate)
        loops += 1
    return StabilityReport(first_signal is None, first_signal, truncate, loops, first_chart,
                           final_stable)


def setup_monitoring(stable: Dataset, split_frac: float, spec: ModelSpec, cfg: MonitorConfig,
                     fit_opts: FitOptions | None = None) -> MonitoringSetup:
    """Fit on D1, calibrate the T^2 upper control limit on D2.

    The covariance comes only from D1 scores and the reference mean only from
    D2 scores. The returned state holds D2's final MEWMA vector so Phase-II
    monitoring continues seamlessly.
    """
    if not 0.0 < split_frac < 1.0:
        raise ValueError("split_frac must lie in (0, 1)")
    n = stable.n
    n1 = int(round(split_frac * n))
    q = spec.n_params(stable.p)
    need = max(100, 10 * q)
    if n1 < need or n - n1 < need:
        raise ValueError(f"split {n1}/{n - n1} too small; each part needs at least {need} rows")
    d1, d2 = stable[:n1], stable[n1:]
    model = fit(d1, spec, fit_opts)
    s1 = monitoring_scores(model, d1)
    s2 = monitoring_scores(model, d2)
    state = MonitorState.from_covariance(estimate_covariance(s1), s2.mean(axis=0), cfg)
    chart = run_chart(ScoreSeries(d2.t, s2), state, cfg)
    warm = warmup_length(d2.n, cfg.init_batch)
    ucl = calibrate_ucl(chart.statistic[warm:], cfg.alpha)
    state = replace(chart.state, ucl=ucl)
    phase1_chart = Chart(d2.t, chart.statistic, ucl, state=state)
    return MonitoringSetup(model, state, cfg, (n1, n), d1, d2, phase1_chart)


def monitor_stream(setup: MonitoringSetup, stream: Dataset):
    """Chart a Phase-II stream; returns ``(chart, first_signal_t)``."""
    if stream.n == 0:
        return Chart(stream.t, np.empty(0), setup.state.ucl, state=setup.state), None
    if stream.p != setup.model.p:
        raise ValueError(f"stream has {stream.p} covariates, model expects {setup.model.p}")
    chart = run_chart(score_series(setup.model, stream), setup.state, setup.cfg)
    return chart, chart.first_signal()


def diagnose(setup: MonitoringSetup, window: Dataset, method: str | None = None,
             limit_mode: str = "empirical") -> DriftDiagnosis:
    """Fisher-decoupled component charts and the drift estimate over ``window``."""
    if setup.train is None or setup.phase1 is None:
        raise ValueError("setup has no calibration data attached; call attach() first")
    if window.n == 0:
        raise ValueError("empty window")
    model = setup.model
    fisher = fisher_info(model, setup.train, method, setup.cfg.max_condition)
    _, diag = decoupled_charts(score_series(model, window), fisher,
                               score_series(model, setup.phase1), setup.cfg, limit_mode)
    diag.delta_theta = estimate_delta(scores(model, window), fisher, window.w)
    return diag
