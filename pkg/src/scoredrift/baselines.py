"""Error-based comparison monitors: EWMA of classification errors or of residuals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .models import FittedModel, classify, predict
from .monitor import Chart, uni_ewma_chart

DEFAULT_THRESHOLD = 0.1057


@dataclass(frozen=True)
class BaselineConfig:
    lam: float = 0.001
    alpha: float = 0.001
    threshold: float = DEFAULT_THRESHOLD
    sided: str = "upper"
    limit_mode: str = "empirical"
    init_batch: int = 100

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lambda must lie in (0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.sided not in ("two", "upper"):
            raise ValueError("sided must be 'two' or 'upper'")


def error_indicators(model: FittedModel, data: Dataset, threshold: float) -> np.ndarray:
    """``w_t * 1[classify(x_t) != y_t]``."""
    if not model.spec.is_classifier:
        raise ValueError("error EWMA needs a classification model")
    labels = classify(model, data.X, threshold)
    return data.w * (labels != data.y)


def residuals(model: FittedModel, data: Dataset) -> np.ndarray:
    """Weighted residuals ``w_t * (y_t - predict(x_t))``."""
    if model.spec.is_classifier:
        raise ValueError("residual EWMA needs a regression model")
    return data.w * (data.y - predict(model, data.X))


def error_ewma(model: FittedModel, data: Dataset, phase1: Dataset, cfg: BaselineConfig) -> Chart:
    return uni_ewma_chart(error_indicators(model, data, cfg.threshold), cfg.lam,
                          error_indicators(model, phase1, cfg.threshold), cfg.alpha,
                          cfg.limit_mode, cfg.sided, init_batch=cfg.init_batch, t=data.t)


def residual_ewma(model: FittedModel, data: Dataset, phase1: Dataset, cfg: BaselineConfig) -> Chart:
    """Always two-sided: the residual mean can move either way."""
    return uni_ewma_chart(residuals(model, data), cfg.lam, residuals(model, phase1), cfg.alpha,
                          cfg.limit_mode, "two", init_batch=cfg.init_batch, t=data.t)
