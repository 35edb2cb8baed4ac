"""Monte Carlo experiment runner: accuracy sweeps, outlier and model-validation studies.

Every random draw is determined by ``(spec, seed)``: trial i consumes the
generator seeded with ``seed + i`` (re-draws after a rejected scenario use
a bumped sub-seed), and aggregation merges by trial index, so reports are
reproducible across runs and across worker counts. Wall-clock fields are
measured and therefore the one exception to bit reproducibility.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .arraymodel import Dictionary, Grid, UlaConfig, build_dictionary
from .inference import InferenceConfig, run_ogsbi
from .scenario import (
    SOURCE_MODELS,
    Scenario,
    draw_doas,
    ground_truth_map,
    inject_outliers,
    ks_gaussian_test,
    synthesize,
    total_noise,
)
from .spectrum import DoaEstimate, estimate_powers, extract_doas, lower_bound, mse_db
from .svdreduce import run_ogsbi_svd

__all__ = [
    "ExperimentSpec",
    "TrialResult",
    "AggregateReport",
    "run_experiment",
    "outlier_study",
    "ks_validation",
    "report_write",
    "report_read",
]

EXPERIMENT_KINDS = ("mmv_sweep", "smv_table", "ks_validation", "outlier_study", "single_run")
ALGORITHMS = ("ogsbi", "ogsbi-svd")

_SWEEP_COLUMNS = (
    "snr_db",
    "r_deg",
    "mse_rad2",
    "mse_db",
    "lower_bound_rad2",
    "mean_time_s",
    "convergence_rate",
)
_REPORT_COLUMNS = {
    "mmv_sweep": _SWEEP_COLUMNS,
    "smv_table": _SWEEP_COLUMNS,
    "single_run": _SWEEP_COLUMNS,
    "outlier_study": ("kappa",) + _SWEEP_COLUMNS,
    "ks_validation": ("snr_db", "r_deg", "ks_pass_rate", "n_trials"),
}
# Measured, not derived from the seed; excluded from determinism comparisons.
_TIMING_COLUMNS = frozenset({"mean_time_s"})

_MAX_SCENARIO_ATTEMPTS = 10


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative description of one experiment."""

    kind: str
    r_deg: tuple[float, ...]
    snr_db: tuple[float, ...]
    trials: int
    snapshots: int
    sources: int
    sensors: int = 8
    intervals_deg: tuple[tuple[float, float], ...] | None = None
    doas_deg: tuple[float, ...] | None = None
    algo: str = "ogsbi-svd"
    seed: int = 0
    kappas: tuple[float, ...] = (1.0,)
    outlier_count: int = 0
    workers: int = 1
    source_model: str = "gaussian"
    rho: float = 0.01
    c: float = 1e-4
    d: float = 1e-4
    tol: float = 1e-3
    max_iter: int = 1000

    def __post_init__(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.source_model not in SOURCE_MODELS:
            raise ValueError(f"unknown source model {self.source_model!r}")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if not self.r_deg or not self.snr_db:
            raise ValueError("need at least one grid interval and one SNR")
        for r in self.r_deg:
            Grid.from_interval_deg(r)  # validates divisibility
        if (self.intervals_deg is None) == (self.doas_deg is None):
            raise ValueError("specify exactly one of intervals_deg or doas_deg")
        count = len(self.intervals_deg or self.doas_deg)
        if count != self.sources:
            raise ValueError("sources must match the number of angles/intervals")

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(
            sources=self.sources,
            rho=self.rho,
            c=self.c,
            d=self.d,
            tol=self.tol,
            max_iter=self.max_iter,
        )

    def to_mapping(self) -> dict:
        out = asdict(self)
        out["snr_db"] = [_snr_out(v) for v in self.snr_db]
        if self.intervals_deg is not None:
            out["intervals_deg"] = [list(pair) for pair in self.intervals_deg]
        for key in ("r_deg", "doas_deg", "kappas"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ExperimentSpec":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ValueError(f"unknown experiment field {key!r}")
            kwargs[key] = value
        if "snr_db" in kwargs:
            kwargs["snr_db"] = tuple(_snr_in(v) for v in kwargs["snr_db"])
        if "intervals_deg" in kwargs and kwargs["intervals_deg"] is not None:
            kwargs["intervals_deg"] = tuple(tuple(float(x) for x in p) for p in kwargs["intervals_deg"])
        for key in ("r_deg", "doas_deg", "kappas"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(float(x) for x in kwargs[key])
        return cls(**kwargs)


@dataclass(eq=False)
class TrialResult:
    """Outcome of one Monte Carlo trial."""

    index: int
    true_doas: np.ndarray
    estimated_doas: np.ndarray | None
    squared_errors: np.ndarray | None
    iterations: int
    converged: bool
    seconds: float
    error: str | None = None
    ks_pass: bool | None = None


@dataclass
class AggregateReport:
    """Per-cell aggregates of an experiment, in a stable cell order."""

    kind: str
    cells: list[dict] = field(default_factory=list)

    @property
    def columns(self) -> tuple[str, ...]:
        return _REPORT_COLUMNS[self.kind]

    def cell(self, **keys) -> dict:
        """First cell matching the given column values."""
        for entry in self.cells:
            if all(entry.get(k) == v for k, v in keys.items()):
                return entry
        raise KeyError(f"no cell matching {keys!r}")

    def _rows(self, columns) -> list[tuple]:
        return [tuple(entry[c] for c in columns) for entry in self.cells]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AggregateReport):
            return NotImplemented
        return self.kind == other.kind and self._rows(self.columns) == other._rows(other.columns)

    def equals_ignoring_timing(self, other: "AggregateReport") -> bool:
        """Equality on all seed-determined fields (measured times excluded)."""
        if self.kind != other.kind:
            return False
        columns = tuple(c for c in self.columns if c not in _TIMING_COLUMNS)
        return self._rows(columns) == other._rows(columns)


def _snr_out(value: float):
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _snr_in(value) -> float:
    if isinstance(value, str):
        text = value.strip().lower().lstrip("+")
        if text == "inf" or text == "infinity":
            return math.inf
        if text == "-inf" or text == "-infinity":
            return -math.inf
        return float(text)
    return float(value)


def _trial_rng(base_seed: int, trial_index: int, attempt: int) -> np.random.Generator:
    if attempt == 0:
        return np.random.default_rng(base_seed + trial_index)
    return np.random.default_rng((base_seed + trial_index, attempt))


def _draw_trial_scenario(
    spec: ExperimentSpec,
    snr_db: float,
    grid: Grid,
    trial_index: int,
) -> tuple[Scenario, np.random.Generator]:
    """Scenario for one trial, re-drawn on a grid-point collision.

    Returns the scenario and the trial generator (already advanced past
    the scenario draws) for any further randomness such as outlier
    placement.
    """
    fixed = None if spec.doas_deg is None else np.deg2rad(np.asarray(spec.doas_deg, dtype=float))
    intervals = None
    if spec.intervals_deg is not None:
        intervals = [(math.radians(lo), math.radians(hi)) for lo, hi in spec.intervals_deg]
    for attempt in range(_MAX_SCENARIO_ATTEMPTS):
        rng = _trial_rng(spec.seed, trial_index, attempt)
        doas = fixed if fixed is not None else draw_doas(intervals, rng)
        synth_seed = int(rng.integers(0, 2**63))
        nearest = [int(np.argmin(np.abs(grid.points - th))) for th in doas]
        if len(set(nearest)) == len(nearest):
            scenario = Scenario(
                doas=doas,
                snapshot_count=spec.snapshots,
                snr_db=snr_db,
                rng_seed=synth_seed,
                source_model=spec.source_model,
            )
            return scenario, rng
        if fixed is not None:
            raise ValueError("fixed source angles collide on this grid")
    raise RuntimeError(f"no collision-free scenario in {_MAX_SCENARIO_ATTEMPTS} attempts")


def _solve_trial(
    y: np.ndarray,
    dictionary: Dictionary,
    config: InferenceConfig,
    algo: str,
    snapshot_count: int,
) -> tuple[DoaEstimate, int, bool]:
    if algo == "ogsbi-svd":
        result = run_ogsbi_svd(y, dictionary, config)
    else:
        result = run_ogsbi(y, dictionary, config)
    spec_est = estimate_powers(result.posterior, dictionary.grid, result.state.beta, snapshot_count)
    estimate = extract_doas(spec_est, config.sources)
    return estimate, len(result.trace), result.trace.converged


def _estimation_trial(
    spec: ExperimentSpec,
    snr_db: float,
    dictionary: Dictionary,
    config: InferenceConfig,
    trial_index: int,
    kappa: float | None,
) -> TrialResult:
    try:
        scenario, rng = _draw_trial_scenario(spec, snr_db, dictionary.grid, trial_index)
        data = synthesize(scenario, dictionary.ula)
        y = data.Y
        if kappa is not None and spec.outlier_count:
            y = inject_outliers(y, spec.outlier_count, kappa, rng)
        started = time.perf_counter()
        estimate, iterations, converged = _solve_trial(
            y, dictionary, config, spec.algo, scenario.snapshot_count
        )
        seconds = time.perf_counter() - started
        truth = np.sort(scenario.doas)
        sqerr = (estimate.angles - truth) ** 2
        return TrialResult(
            index=trial_index,
            true_doas=truth,
            estimated_doas=estimate.angles,
            squared_errors=sqerr,
            iterations=iterations,
            converged=converged,
            seconds=seconds,
        )
    except Exception as exc:  # recorded, not fatal for the experiment
        return TrialResult(
            index=trial_index,
            true_doas=np.array([]),
            estimated_doas=None,
            squared_errors=None,
            iterations=0,
            converged=False,
            seconds=0.0,
            error=f"{type(exc).__name__}: {exc}",
        )


def _ks_trial(
    spec: ExperimentSpec,
    snr_db: float,
    dictionary: Dictionary,
    trial_index: int,
) -> TrialResult:
    try:
        scenario, _ = _draw_trial_scenario(spec, snr_db, dictionary.grid, trial_index)
        data = synthesize(scenario, dictionary.ula)
        gt = ground_truth_map(data, dictionary.grid)
        residual = total_noise(data, dictionary, gt)
        sigma2 = scenario.noise_variance
        if sigma2 <= 0:
            # Noiseless data has no noise scale; normalize by the pooled
            # empirical power so a deterministic residual still gets tested.
            sigma2 = float(np.mean(np.abs(residual) ** 2))
        ks = ks_gaussian_test(residual, sigma2)
        return TrialResult(
            index=trial_index,
            true_doas=np.sort(scenario.doas),
            estimated_doas=None,
            squared_errors=None,
            iterations=0,
            converged=True,
            seconds=0.0,
            ks_pass=ks.passed,
        )
    except Exception as exc:
        return TrialResult(
            index=trial_index,
            true_doas=np.array([]),
            estimated_doas=None,
            squared_errors=None,
            iterations=0,
            converged=False,
            seconds=0.0,
            error=f"{type(exc).__name__}: {exc}",
        )


def _run_trials(spec: ExperimentSpec, trial_fn: Callable[[int], TrialResult]) -> list[TrialResult]:
    indices = range(spec.trials)
    if spec.workers == 1:
        results = [trial_fn(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(trial_fn, indices))
    return sorted(results, key=lambda r: r.index)


def _aggregate_estimation_cell(
    snr_db: float, r_deg: float, results: Sequence[TrialResult], kappa: float | None = None
) -> dict:
    good = [r for r in results if r.error is None]
    squared = np.concatenate([r.squared_errors for r in good]) if good else np.array([])
    mean_sq = float(squared.mean()) if squared.size else math.nan
    cell = {
        "snr_db": snr_db,
        "r_deg": r_deg,
        "mse_rad2": mean_sq,
        "mse_db": mse_db(mean_sq) if squared.size else math.nan,
        "lower_bound_rad2": lower_bound(math.radians(r_deg)),
        "mean_time_s": float(np.mean([r.seconds for r in good])) if good else math.nan,
        "convergence_rate": float(np.mean([r.converged for r in good])) if good else 0.0,
        "n_trials": len(results),
        "n_failed": len(results) - len(good),
    }
    if kappa is not None:
        cell["kappa"] = kappa
    cell["degraded"] = cell["n_failed"] > 0.05 * cell["n_trials"]
    return cell


def run_experiment(spec: ExperimentSpec) -> AggregateReport:
    """Run the experiment `spec` describes and aggregate per cell."""
    if spec.kind == "ks_validation":
        return ks_validation(spec)
    if spec.kind == "outlier_study":
        return outlier_study(spec)
    config = spec.inference_config()
    ula = UlaConfig(spec.sensors)
    report = AggregateReport(kind=spec.kind)
    for snr_db in spec.snr_db:
        for r_deg in spec.r_deg:
            dictionary = build_dictionary(Grid.from_interval_deg(r_deg), ula)
            results = _run_trials(
                spec,
                lambda i, d=dictionary, s=snr_db: _estimation_trial(spec, s, d, config, i, None),
            )
            report.cells.append(_aggregate_estimation_cell(snr_db, r_deg, results))
    return report


def outlier_study(spec: ExperimentSpec) -> AggregateReport:
    """Accuracy versus the scaling ratio of a few corrupted measurements.

    Each trial corrupts ``outlier_count`` uniformly chosen entries of the
    snapshot matrix (re-drawn every trial) by the cell's ratio.
    """
    config = spec.inference_config()
    ula = UlaConfig(spec.sensors)
    report = AggregateReport(kind="outlier_study")
    snr_db = spec.snr_db[0]
    r_deg = spec.r_deg[0]
    dictionary = build_dictionary(Grid.from_interval_deg(r_deg), ula)
    for kappa in spec.kappas:
        results = _run_trials(
            spec,
            lambda i, k=kappa: _estimation_trial(spec, snr_db, dictionary, config, i, k),
        )
        report.cells.append(_aggregate_estimation_cell(snr_db, r_deg, results, kappa=kappa))
    return report


def ks_validation(spec: ExperimentSpec) -> AggregateReport:
    """Fraction of trials whose total model residual passes the KS normality test."""
    ula = UlaConfig(spec.sensors)
    report = AggregateReport(kind="ks_validation")
    for snr_db in spec.snr_db:
        for r_deg in spec.r_deg:
            dictionary = build_dictionary(Grid.from_interval_deg(r_deg), ula)
            results = _run_trials(
                spec, lambda i, d=dictionary, s=snr_db: _ks_trial(spec, s, d, i)
            )
            good = [r for r in results if r.error is None]
            rate = float(np.mean([r.ks_pass for r in good])) if good else 0.0
            report.cells.append(
                {
                    "snr_db": snr_db,
                    "r_deg": r_deg,
                    "ks_pass_rate": rate,
                    "n_trials": len(results),
                    "n_failed": len(results) - len(good),
                    "degraded": (len(results) - len(good)) > 0.05 * len(results),
                }
            )
    return report


def _cell_value_out(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _cell_value_in(value):
    if isinstance(value, str):
        if value == "inf":
            return math.inf
        if value == "-inf":
            return -math.inf
    return value


def report_write(report: AggregateReport, path, format: str = "csv") -> None:
    """Write the report with a stable column order; angles in degrees."""
    columns = report.columns
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for entry in report.cells:
                writer.writerow([_format_csv(entry[c]) for c in columns])
    elif format == "json":
        payload = {
            "kind": report.kind,
            "columns": list(columns),
            "cells": [
                {c: _cell_value_out(entry[c]) for c in columns} for entry in report.cells
            ],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {format!r}")


def _format_csv(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def report_read(path) -> AggregateReport:
    """Read a JSON report back into an AggregateReport."""
    with open(path) as fh:
        payload = json.load(fh)
    cells = [
        {key: _cell_value_in(value) for key, value in entry.items()}
        for entry in payload["cells"]
    ]
    return AggregateReport(kind=payload["kind"], cells=cells)
