"""Concept drift monitoring on model score vectors."""
from .baselines import BaselineConfig, error_ewma, residual_ewma
from .data import Dataset, DataError, Observation, read_csv, write_csv
from .diagnostics import DriftDiagnosis, FisherEstimate, decouple_scores, estimate_delta, fisher_info
from .kernels import BACKEND
from .models import (FitError, FitOptions, FittedModel, ModelSpec, ScoreSeries, fit, loglik,
                     regularized_score, score, score_series, scores)
from .monitor import (Chart, ChartPoint, MonitorConfig, MonitorState, NumericalError,
                      calibrate_ucl, mewma_step, run_chart, stabilize_inverse, uni_ewma_chart)
from .pipeline import (MonitoringSetup, StabilityReport, diagnose, monitor_stream, retrospective,
                       setup_monitoring)

__version__ = "0.1.0"
