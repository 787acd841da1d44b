"""Command-line interface: ``scoredrift <command> --config run.json [paths...]``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O failure.
``SCOREDRIFT_OUTPUT_DIR`` overrides the output directory and
``SCOREDRIFT_WORKERS`` the benchmark worker count.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import datagen
from .baselines import DEFAULT_THRESHOLD, BaselineConfig, error_ewma, residual_ewma
from .data import Dataset, DataError, read_csv, write_csv
from .models import DegenerateDataError, FitError, FitOptions, ModelSpec, fit
from .monitor import MonitorConfig, NumericalError
from .pipeline import MonitoringSetup, diagnose, monitor_stream, retrospective, setup_monitoring

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("fit", "retro", "calibrate", "monitor", "diagnose", "simulate", "benchmark")


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Block):
    family: Literal["linear_gaussian", "logistic", "glm_canonical", "mlp"] = "logistic"
    glm_b_function: Literal["gaussian", "bernoulli", "poisson"] | None = None
    hidden_width: int = Field(0, ge=0)
    task: Literal["regression", "classification"] | None = None
    l2_strength: float = Field(0.0, ge=0)
    include_intercept: bool = True


class MonitorBlock(_Block):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)
    lam: float = Field(0.001, gt=0, le=1, alias="lambda")
    alpha: float = Field(0.001, gt=0, lt=1)
    max_condition: float = Field(1e4, ge=1)
    inverse_mode: Literal["nugget", "pseudo"] = "nugget"
    init_batch: int = Field(100, ge=1)


class BaselineBlock(_Block):
    threshold: float = Field(DEFAULT_THRESHOLD, gt=0, lt=1)
    sided: Literal["two", "upper"] = "upper"
    limit_mode: Literal["empirical", "normal"] = "empirical"


class FitBlock(_Block):
    grad_tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(2000, ge=1)


class PathsBlock(_Block):
    data: str | None = None
    stream: str | None = None
    setup: str | None = None
    model: str | None = None
    output_dir: str = "."


class BenchmarkBlock(_Block):
    reps: int = Field(50, ge=1)
    horizon: int = Field(5000, ge=0)
    methods: list[Literal["score_mewma", "error_ewma", "residual_ewma"]] = ["score_mewma", "error_ewma"]
    alpha: float | None = Field(None, gt=0, lt=1)
    workers: int = Field(1, ge=1)


class RunConfig(_Block):
    model: ModelBlock = ModelBlock()
    monitor: MonitorBlock = MonitorBlock()
    baseline: BaselineBlock = BaselineBlock()
    fit: FitBlock = FitBlock()
    paths: PathsBlock = PathsBlock()
    class_weight: float = Field(1.0, gt=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    split_frac: float = Field(0.5, gt=0, lt=1)
    retro_max_loops: int = Field(5, ge=1)
    fisher_method: Literal["covariance", "hessian", "analytic"] | None = None
    window: tuple[int, int] | None = None
    scenario: dict | None = None
    scenarios: list[dict] | None = None
    benchmark: BenchmarkBlock = BenchmarkBlock()

    def spec(self) -> ModelSpec:
        return _build("model", lambda: ModelSpec(**self.model.model_dump()))

    def monitor_config(self) -> MonitorConfig:
        return _build("monitor", lambda: MonitorConfig(**self.monitor.model_dump()))

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(lam=self.monitor.lam, alpha=self.monitor.alpha,
                              threshold=self.baseline.threshold, sided=self.baseline.sided,
                              limit_mode=self.baseline.limit_mode, init_batch=self.monitor.init_batch)

    def fit_options(self) -> FitOptions:
        return FitOptions(grad_tol=self.fit.grad_tol, max_iter=self.fit.max_iter, seed=self.seed)


class ConfigError(ValueError):
    pass


def _build(path, make):
    try:
        return make()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    try:
        return RunConfig.model_validate_json(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def _scenario(d: dict, where: str) -> datagen.Scenario:
    return _build(where, lambda: datagen.Scenario.from_dict(d))


def _load_data(path, cfg: RunConfig, spec: ModelSpec) -> Dataset:
    if path is None:
        raise ConfigError("paths.data: no input dataset given")
    data = read_csv(path)
    with open(path, encoding="utf-8") as fh:
        has_weight = "weight" in [h.strip() for h in fh.readline().split(",")]
    if not has_weight and cfg.class_weight != 1.0 and spec.is_classifier:
        data = Dataset.from_arrays(data.X, data.y, np.where(data.y == 1, cfg.class_weight, 1.0), data.t)
    return data


def _write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _cmd_fit(cfg, args, out):
    spec = cfg.spec()
    model = fit(_load_data(args.data, cfg, spec), spec, cfg.fit_options())
    _write_json(out / "model.json", model.to_dict())


def _cmd_retro(cfg, args, out):
    spec = cfg.spec()
    rep = retrospective(_load_data(args.data, cfg, spec), spec, cfg.monitor_config(),
                        cfg.retro_max_loops, cfg.fit_options())
    _write_json(out / "retro.json", rep.to_dict())
    rep.chart.to_jsonl(out / "retro_chart.jsonl")


def _cmd_calibrate(cfg, args, out):
    spec = cfg.spec()
    setup = setup_monitoring(_load_data(args.data, cfg, spec), cfg.split_frac, spec,
                             cfg.monitor_config(), cfg.fit_options())
    setup.to_json(out / "setup.json")
    setup.phase1_chart.to_jsonl(out / "phase1_chart.jsonl")


def _load_setup(args):
    if args.setup is None:
        raise FileNotFoundError("no setup file given (run calibrate first)")
    return MonitoringSetup.read_json(args.setup)


def _cmd_monitor(cfg, args, out):
    setup = _load_setup(args)
    if args.stream is None:
        raise ConfigError("paths.stream: no stream dataset given")
    stream = _load_data(args.stream, cfg, setup.model.spec)
    chart, first = monitor_stream(setup, stream)
    chart.to_jsonl(out / "monitor_chart.jsonl")
    summary = {"first_signal_t": first, "n": len(chart), "signal_rate": chart.signal_rate,
               "ucl": setup.state.ucl}
    if args.data is not None:
        setup = setup.attach(_load_data(args.data, cfg, setup.model.spec))
        bcfg = cfg.baseline_config()
        base = (error_ewma if setup.model.spec.is_classifier else residual_ewma)(
            setup.model, stream, setup.phase1, bcfg)
        base.to_jsonl(out / "baseline_chart.jsonl")
        summary["baseline_first_signal_t"] = base.first_signal()
    _write_json(out / "monitor.json", summary)


def _cmd_diagnose(cfg, args, out):
    setup = _load_setup(args)
    spec = setup.model.spec
    if args.stream is None:
        raise ConfigError("paths.stream: no stream dataset given")
    setup = setup.attach(_load_data(args.data, cfg, spec))
    window = _load_data(args.stream, cfg, spec)
    if cfg.window is not None:
        lo, hi = cfg.window
        window = window[(window.t >= lo) & (window.t <= hi)]
    diag = diagnose(setup, window, cfg.fisher_method)
    files = []
    for j, chart in enumerate(diag.charts):
        name = f"component_{j}.jsonl"
        chart.to_jsonl(out / name)
        files.append(name)
    diag.to_json(out / "diagnosis.json", files)


def _cmd_simulate(cfg, args, out):
    if cfg.scenario is None:
        raise ConfigError("scenario: simulate needs a scenario block")
    sc = _scenario(cfg.scenario, "scenario")
    train, phase1, phase2, truth = datagen.generate(sc)
    write_csv(out / "train.csv", train)
    write_csv(out / "phase1.csv", phase1)
    write_csv(out / "phase2.csv", phase2)
    _write_json(out / "truth.json", truth.to_dict())


def _cmd_benchmark(cfg, args, out):
    blocks = cfg.scenarios or ([cfg.scenario] if cfg.scenario else [datagen.s1().to_dict()])
    scs = [_scenario(d, f"scenarios.{i}") for i, d in enumerate(blocks)]
    b = cfg.benchmark
    workers = int(os.environ.get("SCOREDRIFT_WORKERS", b.workers))
    report = datagen.benchmark(scs, b.methods, b.reps, b.horizon, b.alpha, max(1, workers))
    report.to_json(out / "benchmark.json")
    report.to_csv(out / "benchmark.csv")


_HANDLERS = {
    "fit": _cmd_fit, "retro": _cmd_retro, "calibrate": _cmd_calibrate, "monitor": _cmd_monitor,
    "diagnose": _cmd_diagnose, "simulate": _cmd_simulate, "benchmark": _cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scoredrift",
                                     description="Score-based concept drift monitoring.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="run configuration JSON")
    parser.add_argument("--data", help="stable/training dataset CSV")
    parser.add_argument("--stream", help="Phase-II dataset CSV")
    parser.add_argument("--setup", help="MonitoringSetup JSON written by calibrate")
    parser.add_argument("--out", help="output directory")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        cfg = load_config(args.config)
        for name in ("data", "stream", "setup"):
            if getattr(args, name) is None:
                setattr(args, name, getattr(cfg.paths, name))
        out = Path(args.out or os.environ.get("SCOREDRIFT_OUTPUT_DIR") or cfg.paths.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _HANDLERS[args.command](cfg, args, out)
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FitError, NumericalError, np.linalg.LinAlgError, datagen.SearchError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DataError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
