"""Latency measurement protocol and configuration sweeps.

Protocol per seed: a warm-up block of un-timed forwards (JIT compilation,
cache stabilization), then timed iterations measured individually with a
monotonic nanosecond timer. The per-seed statistic is the mean ms/sample;
the report aggregates mean/std across seeds and a 95% CI half-width of
t * std / sqrt(n) using the textbook two-sided 97.5% t-quantile for the
seed count (2.776 for the default five seeds).
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .compiler import CompiledModel, CompileConfig, compile_model, measure_memory
from .errors import ComparisonError, ConfigError
from .metrics import EvalReport, evaluate
from .model import ModelSpec, forward_reference
from .runtime import apply_thread_cap, forward_lut

BACKENDS = ("reference_bspline", "lut")

# two-sided 97.5% Student t quantiles, indexed by degrees of freedom 1..29
# (seed counts 2..30); larger counts fall back to the normal value 1.96
_T_TABLE = {
    1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 6: 2.447, 7: 2.365,
    8: 2.306, 9: 2.262, 10: 2.228, 11: 2.201, 12: 2.179, 13: 2.160,
    14: 2.145, 15: 2.131, 16: 2.120, 17: 2.110, 18: 2.101, 19: 2.093,
    20: 2.086, 21: 2.080, 22: 2.074, 23: 2.069, 24: 2.064, 25: 2.060,
    26: 2.056, 27: 2.052, 28: 2.048, 29: 2.045,
}
_T_NORMAL = 1.96

_MIN_TICKS_PER_ITER = 50  # below this, per-iteration timing is unreliable


def t_quantile(num_seeds: int) -> float:
    if num_seeds < 2:
        raise ConfigError("confidence intervals need at least 2 seeds")
    return _T_TABLE.get(num_seeds - 1, _T_NORMAL)


def summarize_seed_means(per_seed_means: Sequence[float]) -> tuple[float, float, float]:
    """(mean, sample std, 95% CI half-width) across per-seed statistics."""
    values = np.asarray(per_seed_means, dtype=np.float64)
    mean = float(np.mean(values))
    if values.shape[0] < 2:
        return mean, 0.0, 0.0
    std = float(np.std(values, ddof=1))
    ci = t_quantile(values.shape[0]) * std / math.sqrt(values.shape[0])
    return mean, std, ci


@dataclass(frozen=True)
class BenchConfig:
    batch_size: int = 256
    warmup_iters: int = 10
    timed_iters: int = 100
    seeds: int = 5
    threads: int = 1
    backend: str = "lut"

    def __post_init__(self):
        for name in ("batch_size", "warmup_iters", "timed_iters", "seeds", "threads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")


@dataclass
class BenchReport:
    ms_per_sample_mean: float
    ms_per_sample_std: float
    ci95_halfwidth: float
    ms_per_sample_median: float
    per_seed_means: list[float]
    speedup_vs_baseline: Optional[float]
    unreliable_timer: bool
    max_concurrent: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _timer_resolution_ns() -> int:
    best = None
    for _ in range(1000):
        t0 = time.perf_counter_ns()
        t1 = time.perf_counter_ns()
        while t1 == t0:
            t1 = time.perf_counter_ns()
        delta = t1 - t0
        if best is None or delta < best:
            best = delta
    return max(best, 1)


class _ConcurrencyGuard:
    """Counts in-flight forwards; single-threaded runs must never exceed 1."""

    def __init__(self):
        self.active = 0
        self.peak = 0

    def __enter__(self):
        self.active += 1
        self.peak = max(self.peak, self.active)
        return self

    def __exit__(self, *exc):
        self.active -= 1
        return False


def _resolve_forward(target) -> Callable[[np.ndarray], object]:
    if callable(target):
        return target
    if isinstance(target, CompiledModel):
        return lambda batch: forward_lut(target, batch)[0]
    if isinstance(target, ModelSpec):
        return lambda batch: forward_reference(target, batch)
    raise ConfigError(f"cannot benchmark object of type {type(target).__name__}")


def run_bench(target: Union[ModelSpec, CompiledModel, Callable], data,
              config: BenchConfig, base_seed: int = 0) -> BenchReport:
    """Measure infer-only latency of one backend under the warm-up/timed protocol.

    ``data`` is a pool of input rows; each seed draws its own batch of
    ``batch_size`` rows from the pool with a seeded generator. Loading,
    preprocessing and postprocessing stay outside the timed region.
    """
    forward = _resolve_forward(target)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError("bench data must be a non-empty 2-D row pool")

    os.environ["LUTKAN_THREADS"] = str(config.threads)
    apply_thread_cap(config.threads)

    resolution_ns = _timer_resolution_ns()
    guard = _ConcurrencyGuard()
    per_seed_means = []
    per_seed_medians = []
    min_iter_ns = None
    for seed_idx in range(config.seeds):
        rng = np.random.default_rng(base_seed + seed_idx)
        rows = rng.choice(data.shape[0], size=config.batch_size,
                          replace=data.shape[0] < config.batch_size)
        batch = np.ascontiguousarray(data[rows])
        for _ in range(config.warmup_iters):
            with guard:
                forward(batch)
        iter_ms = np.empty(config.timed_iters, dtype=np.float64)
        for it in range(config.timed_iters):
            t0 = time.perf_counter_ns()
            with guard:
                forward(batch)
            dt = time.perf_counter_ns() - t0
            if min_iter_ns is None or dt < min_iter_ns:
                min_iter_ns = dt
            iter_ms[it] = dt / 1e6 / config.batch_size
        per_seed_means.append(float(np.mean(iter_ms)))
        per_seed_medians.append(float(np.median(iter_ms)))

    mean, std, ci = summarize_seed_means(per_seed_means) if config.seeds >= 2 else (
        per_seed_means[0], 0.0, 0.0)
    unreliable = bool(min_iter_ns is not None and min_iter_ns < _MIN_TICKS_PER_ITER * resolution_ns)
    return BenchReport(
        ms_per_sample_mean=mean,
        ms_per_sample_std=std,
        ci95_halfwidth=ci,
        ms_per_sample_median=float(np.median(per_seed_medians)),
        per_seed_means=per_seed_means,
        speedup_vs_baseline=None,
        unreliable_timer=unreliable,
        max_concurrent=guard.peak,
        config=asdict(config),
    )


def speedup(baseline_report: BenchReport, candidate_report: BenchReport) -> float:
    """Ratio of cross-seed mean latencies (baseline over candidate)."""
    for key in ("batch_size", "threads"):
        if baseline_report.config.get(key) != candidate_report.config.get(key):
            raise ComparisonError(
                f"cannot compare reports with different {key}: "
                f"{baseline_report.config.get(key)} vs {candidate_report.config.get(key)}"
            )
    return baseline_report.ms_per_sample_mean / candidate_report.ms_per_sample_mean


SWEEP_COLUMNS = (
    "L", "quant", "boundary", "oob", "acc", "f1", "delta_f1", "roc_auc",
    "pr_auc", "ms_bs1_mean", "ms_bs1_std", "ms_bs256_mean", "ms_bs256_std",
    "speedup_bs1", "speedup_bs256", "lut_bytes",
)

_SWEEP_BATCH_SIZES = (1, 256)


def sweep(model: ModelSpec, features, labels,
          lut_sizes: Sequence[int],
          quant_schemes: Sequence[str] = ("sym_int8",),
          boundary_modes: Sequence[str] = ("half_open",),
          oob_policies: Sequence[str] = ("zero_spline",),
          bench_config: BenchConfig = BenchConfig(),
          out_csv=None,
          base_seed: int = 0) -> list[dict]:
    """One row per configuration: quality, latency at batch 1/256, memory.

    When ``out_csv`` is given, every finished row is written and flushed
    immediately so a crash loses at most the row in flight.
    """
    features = np.asarray(features, dtype=np.float64)
    float_report: EvalReport = evaluate(model, features, labels, model.threshold)

    reference_reports = {}
    for bs in _SWEEP_BATCH_SIZES:
        cfg = BenchConfig(batch_size=bs, warmup_iters=bench_config.warmup_iters,
                          timed_iters=bench_config.timed_iters, seeds=bench_config.seeds,
                          threads=bench_config.threads, backend="reference_bspline")
        reference_reports[bs] = run_bench(model, features, cfg, base_seed=base_seed)

    writer = None
    handle = None
    if out_csv is not None:
        handle = open(out_csv, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(handle, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        handle.flush()

    rows = []
    try:
        for lut_size in lut_sizes:
            for quant in quant_schemes:
                for boundary in boundary_modes:
                    for oob in oob_policies:
                        config = CompileConfig(
                            lut_size=int(lut_size), quant_scheme=quant,
                            boundary_mode=boundary, oob_policy=oob,
                        )
                        compiled = compile_model(model, config)
                        report = evaluate(compiled, features, labels,
                                          model.threshold, baseline=float_report)
                        lat = {}
                        for bs in _SWEEP_BATCH_SIZES:
                            cfg = BenchConfig(
                                batch_size=bs, warmup_iters=bench_config.warmup_iters,
                                timed_iters=bench_config.timed_iters,
                                seeds=bench_config.seeds, threads=bench_config.threads,
                                backend="lut",
                            )
                            lat[bs] = run_bench(compiled, features, cfg, base_seed=base_seed)
                        row = {
                            "L": int(lut_size),
                            "quant": quant,
                            "boundary": boundary,
                            "oob": oob,
                            "acc": report.accuracy,
                            "f1": report.f1,
                            "delta_f1": report.delta_f1_vs_baseline,
                            "roc_auc": report.roc_auc,
                            "pr_auc": report.pr_auc,
                            "ms_bs1_mean": lat[1].ms_per_sample_mean,
                            "ms_bs1_std": lat[1].ms_per_sample_std,
                            "ms_bs256_mean": lat[256].ms_per_sample_mean,
                            "ms_bs256_std": lat[256].ms_per_sample_std,
                            "speedup_bs1": speedup(reference_reports[1], lat[1]),
                            "speedup_bs256": speedup(reference_reports[256], lat[256]),
                            "lut_bytes": measure_memory(compiled)["total"],
                        }
                        rows.append(row)
                        if writer is not None:
                            writer.writerow(row)
                            handle.flush()
    finally:
        if handle is not None:
            handle.close()
    return rows
