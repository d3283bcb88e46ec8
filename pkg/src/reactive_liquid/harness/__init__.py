"""Experiment harness: configuration, failure injection, metrics and reports."""

from .compare import ComparisonError, ComparisonReport, compare_runs, fit_line
from .config import ConfigError, ExperimentConfig, parse_input
from .experiment import RecoveryCheck, RunResult, recovery_checks, run_experiment
from .failures import FailureEvent, FailurePlan, failure_ticker, install_failures
from .metrics import MetricsCollector, RunMetrics, Sample, build_metrics
from .models import (CompletionModel, ModelDomainError, model_completion_liquid,
                     model_completion_reactive)
from .reports import emit_comparison, emit_reports, read_cumulative
from .sweep import RunSummary, run_many

__all__ = [
    "ComparisonError", "ComparisonReport", "CompletionModel", "ConfigError",
    "ExperimentConfig", "FailureEvent", "FailurePlan", "MetricsCollector",
    "ModelDomainError", "RecoveryCheck", "RunMetrics", "RunResult", "RunSummary", "Sample",
    "build_metrics", "compare_runs", "emit_comparison", "emit_reports", "failure_ticker",
    "fit_line", "install_failures", "model_completion_liquid", "model_completion_reactive",
    "parse_input", "read_cumulative", "recovery_checks", "run_experiment", "run_many",
]
