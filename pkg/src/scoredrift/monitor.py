"""MEWMA / Hotelling T^2 monitoring of score vectors and univariate EWMA charts."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import kernels
from .models import ScoreSeries


class NumericalError(ArithmeticError):
    """A matrix could not be stabilized or inverted."""


@dataclass(frozen=True)
class MonitorConfig:
    lam: float = 0.001
    alpha: float = 0.001
    max_condition: float = 1e4
    inverse_mode: str = "nugget"
    init_batch: int = 100

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lambda must lie in (0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.max_condition >= 1.0:
            raise ValueError("max_condition must be >= 1")
        if self.inverse_mode not in ("nugget", "pseudo"):
            raise ValueError("inverse_mode must be 'nugget' or 'pseudo'")
        if self.init_batch < 1:
            raise ValueError("init_batch must be >= 1")

    @property
    def effective_window(self) -> float:
        return 1.0 / self.lam

    def to_dict(self):
        return {"lambda": self.lam, "alpha": self.alpha, "max_condition": self.max_condition,
                "inverse_mode": self.inverse_mode, "init_batch": self.init_batch}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class MonitorState:
    """Running MEWMA state.

    The stabilized inverse covariance is stored factored as ``inv_cov = W W^T``
    (``whitener`` W), so ``T^2 = |W^T (z - s_bar)|^2`` is non-negative by
    construction.
    """

    z: np.ndarray | None
    s_bar: np.ndarray
    whitener: np.ndarray
    delta: float = 0.0
    ucl: float | None = None
    t: int = 0

    @property
    def inv_cov(self) -> np.ndarray:
        return self.whitener @ self.whitener.T

    @property
    def q(self) -> int:
        return self.s_bar.shape[0]

    @classmethod
    def from_covariance(cls, cov, s_bar, cfg: MonitorConfig | None = None, z=None, ucl=None, t=0):
        cfg = cfg or MonitorConfig()
        W, delta = stabilize(cov, cfg.max_condition, cfg.inverse_mode)
        s_bar = np.asarray(s_bar, dtype=np.float64)
        return cls(None if z is None else np.asarray(z, dtype=np.float64), s_bar, W, delta, ucl, t)

    def to_dict(self):
        return {
            "z": None if self.z is None else [float(v) for v in self.z],
            "s_bar": [float(v) for v in self.s_bar],
            "whitener": [[float(v) for v in row] for row in self.whitener],
            "delta": float(self.delta),
            "ucl": None if self.ucl is None else float(self.ucl),
            "t": int(self.t),
        }

    @classmethod
    def from_dict(cls, d):
        W = np.array(d["whitener"], dtype=np.float64)
        s_bar = np.array(d["s_bar"], dtype=np.float64)
        W = W.reshape(s_bar.shape[0], -1)
        z = None if d["z"] is None else np.array(d["z"], dtype=np.float64)
        return cls(z, s_bar, W, float(d["delta"]), None if d["ucl"] is None else float(d["ucl"]),
                   int(d["t"]))


@dataclass(frozen=True)
class ChartPoint:
    t: int
    statistic: float
    ucl: float | None
    lcl: float | None
    signal: bool

    def to_dict(self):
        return {"t": self.t, "statistic": self.statistic, "ucl": self.ucl, "lcl": self.lcl,
                "signal": self.signal}


class Chart:
    """A sequence of :class:`ChartPoint` held as parallel arrays."""

    def __init__(self, t, statistic, ucl=None, lcl=None, state=None, center=None):
        self.center = center
        self.t = np.asarray(t, dtype=np.int64)
        self.statistic = np.asarray(statistic, dtype=np.float64)
        self.ucl = None if ucl is None else float(ucl)
        self.lcl = None if lcl is None else float(lcl)
        self.state = state
        sig = np.zeros(self.statistic.shape[0], dtype=bool)
        if self.ucl is not None:
            sig |= self.statistic > self.ucl
        if self.lcl is not None:
            sig |= self.statistic < self.lcl
        self.signal = sig

    def __len__(self):
        return self.t.shape[0]

    def __getitem__(self, i) -> ChartPoint:
        return ChartPoint(int(self.t[i]), float(self.statistic[i]), self.ucl, self.lcl,
                          bool(self.signal[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def first_signal(self, start_t=None):
        """Time index of the first signal (optionally at or after ``start_t``), or None."""
        mask = self.signal if start_t is None else self.signal & (self.t >= start_t)
        idx = np.flatnonzero(mask)
        return int(self.t[idx[0]]) if idx.size else None

    @property
    def signal_rate(self) -> float:
        return float(self.signal.mean()) if len(self) else 0.0

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for pt in self:
                fh.write(json.dumps(pt.to_dict()) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "Chart":
        with open(path, encoding="utf-8") as fh:
            pts = [json.loads(line) for line in fh if line.strip()]
        ucl = pts[0]["ucl"] if pts else None
        lcl = pts[0]["lcl"] if pts else None
        return cls([p["t"] for p in pts], [p["statistic"] for p in pts], ucl, lcl)


# -- covariance and its stabilized inverse ----------------------------------

def estimate_covariance(scores, weights=None) -> np.ndarray:
    """Weighted sample covariance with the ``sum(w) - 1`` denominator."""
    s = np.asarray(getattr(scores, "s", scores), dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 2:
        raise ValueError("need at least 2 score vectors")
    w = np.ones(s.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    wsum = w.sum()
    if wsum <= 1.0:
        raise ValueError("total weight must exceed 1")
    mean = w @ s / wsum
    d = s - mean
    cov = (d * w[:, None]).T @ d / (wsum - 1.0)
    return 0.5 * (cov + cov.T)


def nugget_for(eigvals, max_condition: float) -> float:
    """Smallest delta >= 0 with (l_max + delta) / (l_min + delta) <= max_condition."""
    lmax, lmin = float(np.max(eigvals)), float(np.min(eigvals))
    if lmax <= 0.0:
        raise NumericalError("covariance matrix is zero")
    if max_condition <= 1.0:
        if lmax - lmin > 0.0:
            raise NumericalError("max_condition <= 1 requires a scalar covariance")
        return 0.0
    if lmax <= max_condition * lmin:
        return 0.0
    # pad by the eigensolver's backward error so a re-measured condition stays within the bound
    pad = 4.0 * np.finfo(float).eps * len(np.atleast_1d(eigvals)) * lmax
    delta = (lmax - max_condition * lmin + pad * (1.0 + max_condition)) / (max_condition - 1.0)
    while (lmax + delta) / (lmin + delta) > max_condition:
        delta = np.nextafter(delta * (1.0 + 4 * np.finfo(float).eps), np.inf)
    return float(delta)


def stabilize(cov, max_condition: float = 1e4, mode: str = "nugget"):
    """Return ``(W, delta)`` with the stabilized inverse covariance equal to ``W W^T``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    cov = 0.5 * (cov + cov.T)
    lam, Q = np.linalg.eigh(cov)
    if mode == "nugget":
        delta = nugget_for(lam, max_condition)
        return Q / np.sqrt(lam + delta), delta
    if mode == "pseudo":
        top = lam[-1]
        if top <= 0.0:
            raise NumericalError("covariance matrix is zero")
        keep = (lam > 0) & (top / np.where(lam > 0, lam, 1.0) <= max_condition)
        return Q[:, keep] / np.sqrt(lam[keep]), 0.0
    raise ValueError(f"unknown inverse mode {mode!r}")


def stabilize_inverse(cov, cfg: MonitorConfig):
    """Nugget- or pseudo-inverse of a covariance matrix; returns ``(inv_cov, delta)``."""
    W, delta = stabilize(cov, cfg.max_condition, cfg.inverse_mode)
    return W @ W.T, delta


# -- MEWMA --------------------------------------------------------------------

def mewma_step(state: MonitorState, s, lam: float) -> MonitorState:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != state.s_bar.shape:
        raise ValueError(f"score has shape {s.shape}, expected {state.s_bar.shape}")
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda must lie in (0, 1]")
    z_old = state.s_bar if state.z is None else state.z
    return replace(state, z=lam * s + (1.0 - lam) * z_old, t=state.t + 1)


def t2(state: MonitorState) -> float:
    """Hotelling statistic ``(z - s_bar)' inv_cov (z - s_bar)``."""
    if state.z is None:
        raise ValueError("state has no MEWMA vector yet")
    proj = (state.z - state.s_bar) @ state.whitener
    return float(proj @ proj)


def calibrate_ucl(t2_values, alpha: float) -> float:
    """The ceil((1 - alpha) m)-th smallest of the m Phase-I statistics."""
    v = np.sort(np.asarray(t2_values, dtype=np.float64).reshape(-1))
    m = v.shape[0]
    if m == 0:
        raise ValueError("cannot calibrate on an empty sequence")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(v[_order_index(m, 1.0 - alpha)])


def _order_index(m, level):
    # 0-based index of the ceil(level * m)-th order statistic; the epsilon absorbs
    # products such as 0.95 * 100 that land just above an integer.
    k = math.ceil(level * m - 1e-9)
    return min(max(k, 1), m) - 1


def warmup_length(m: int, init_batch: int) -> int:
    """Leading points excluded from calibration: init_batch, capped at half the series."""
    return min(init_batch, m // 2)


def _as_scores(scores):
    if isinstance(scores, ScoreSeries):
        return scores.t, scores.s
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 1:
        s = s.reshape(1, -1)
    return np.arange(s.shape[0]), s


def run_chart(scores, state: MonitorState, cfg: MonitorConfig) -> Chart:
    """MEWMA T^2 chart over a score series.

    A fresh state (``z is None``) starts from the mean of the first
    ``cfg.init_batch`` scores; otherwise the recursion continues from
    ``state.z``. The returned chart carries the final state in ``.state``.
    """
    t, s = _as_scores(scores)
    if s.shape[0] and s.shape[1] != state.q:
        raise ValueError(f"scores have dimension {s.shape[1]}, state has {state.q}")
    if state.z is None:
        if s.shape[0] < cfg.init_batch:
            raise ValueError(f"fresh start needs at least init_batch={cfg.init_batch} scores")
        z0 = s[: cfg.init_batch].mean(axis=0)
    else:
        z0 = state.z
    if s.shape[0] == 0:
        return Chart(t, np.empty(0), state.ucl, None, state)
    stat, z = kernels.mewma_t2(s, z0, state.s_bar, state.whitener, cfg.lam)
    return Chart(t, stat, state.ucl, None, replace(state, z=z, t=state.t + s.shape[0]))


# -- univariate EWMA ------------------------------------------------------------

@dataclass(frozen=True)
class EwmaLimits:
    center: float
    lcl: float | None
    ucl: float
    z_end: float


def ewma_limits(phase1, lam, alpha, limit_mode="empirical", sided="two", init_batch=100):
    """Control limits from the EWMA of Phase-I values (warm-up excluded)."""
    phase1 = np.asarray(phase1, dtype=np.float64).reshape(-1)
    m = phase1.shape[0]
    if m == 0:
        raise ValueError("phase1 is empty")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda must lie in (0, 1]")
    if sided not in ("two", "upper"):
        raise ValueError("sided must be 'two' or 'upper'")
    warm = warmup_length(m, init_batch)
    z0 = phase1[: max(warm, 1)].mean()
    zs = kernels.ewma(phase1, z0, lam)
    ref = zs[warm:]
    center = float(ref.mean())
    a = alpha / 2.0 if sided == "two" else alpha
    if limit_mode == "normal":
        sd = float(ref.std(ddof=1)) if ref.shape[0] > 1 else 0.0
        half = float(stats.norm.isf(a)) * sd
        ucl = center + half
        lcl = center - half if sided == "two" else None
    elif limit_mode == "empirical":
        srt = np.sort(ref)
        k = _order_index(srt.shape[0], 1.0 - a)
        ucl = float(srt[k])
        lcl = float(srt[srt.shape[0] - 1 - k]) if sided == "two" else None
    else:
        raise ValueError(f"unknown limit mode {limit_mode!r}")
    return EwmaLimits(center, lcl, ucl, float(zs[-1]))


def uni_ewma_chart(series, lam, phase1, alpha, limit_mode="empirical", sided="two", z0=None,
                   init_batch=100, t=None) -> Chart:
    """Univariate EWMA chart with limits taken from Phase-I.

    Parameters
    ----------
    series : array_like
        Values to chart.
    phase1 : array_like
        In-control reference values; their EWMA sets the limits.
    limit_mode : {"empirical", "normal"}
        Empirical alpha/2 quantiles, or ``center +- z_{alpha/2} SD``.
    sided : {"two", "upper"}
    z0 : float, optional
        Starting EWMA value; defaults to the last Phase-I EWMA value so the
        chart is continuous across the Phase-I / Phase-II boundary.
    """
    series = np.asarray(series, dtype=np.float64).reshape(-1)
    lim = ewma_limits(phase1, lam, alpha, limit_mode, sided, init_batch)
    start = lim.z_end if z0 is None else float(z0)
    values = kernels.ewma(series, start, lam) if series.shape[0] else np.empty(0)
    t = np.arange(series.shape[0]) if t is None else t
    return Chart(t, values, lim.ucl, lim.lcl, center=lim.center)
