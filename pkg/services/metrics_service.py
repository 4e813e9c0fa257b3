"""Сводные показатели прогона: задержка установления, CPU, джиттер медиа."""

import logging
from collections import defaultdict
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from database.metrics import MetricsStore
from errors import EmptyWindow
from services.kernel import us_to_ms
from utils.stats import describe, linear_fit, mean, percentile, stddev

logger = logging.getLogger(__name__)


class LatencySummary(BaseModel):
    count: int = 0
    mean_ms: Optional[float] = None
    stddev_ms: Optional[float] = None
    p95_ms: Optional[float] = None


class JitterSummary(BaseModel):
    frames: int = 0
    mean_ms: Optional[float] = None
    stddev_ms: Optional[float] = None
    rms_ms: Optional[float] = None
    p95_ms: Optional[float] = None
    stddev_by_pouch_ms: Dict[str, float] = Field(default_factory=dict)


class CpuSummary(BaseModel):
    samples: int = 0
    mean_utilization: Optional[float] = None
    mean_by_pouch: Dict[str, float] = Field(default_factory=dict)
    # уровень одновременных вызовов -> средняя загрузка по всем pouch
    by_concurrency: Dict[int, float] = Field(default_factory=dict)
    slope: Optional[float] = None
    intercept: Optional[float] = None
    r2: Optional[float] = None


class RunSummary(BaseModel):
    descriptor: str = ""
    scenario: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
    window_ms: List[float] = Field(default_factory=list)
    latency: LatencySummary = LatencySummary()
    jitter: JitterSummary = JitterSummary()
    cpu: CpuSummary = CpuSummary()
    outcomes: Dict[str, int] = Field(default_factory=dict)
    registrations: Dict[str, int] = Field(default_factory=dict)
    concurrency_mean: float = 0.0
    concurrency_max: int = 0
    aborts: int = 0
    counters: Dict[str, int] = Field(default_factory=dict)
    scale_decisions: List[Dict[str, Any]] = Field(default_factory=list)


def summarize_latency(samples: List[float]) -> LatencySummary:
    stats = describe(samples)
    return LatencySummary(count=stats["count"], mean_ms=stats["mean"],
                          stddev_ms=stats["stddev"], p95_ms=stats["p95"])


def summarize_jitter(store: MetricsStore) -> JitterSummary:
    samples = store.jitter_samples_ms()
    if not samples:
        return JitterSummary()
    by_pouch = {pouch: stddev(values) for pouch, values in store.jitter_by_pouch_ms().items() if values}
    return JitterSummary(
        frames=len(samples),
        mean_ms=mean(samples),
        stddev_ms=stddev(samples),
        rms_ms=float(np.sqrt(np.mean(np.square(samples)))),
        p95_ms=percentile(samples, 95),
        stddev_by_pouch_ms=by_pouch,
    )


def summarize_cpu(store: MetricsStore) -> CpuSummary:
    """Средняя загрузка по pouch и ее зависимость от числа одновременных вызовов"""
    if not store.cpu:
        return CpuSummary()
    # отчеты всех pouch за один интервал мониторинга усредняются в одну точку
    rounds: Dict[int, List] = defaultdict(list)
    by_pouch: Dict[str, List[float]] = defaultdict(list)
    for sample in store.cpu:
        rounds[sample.t_us].append(sample)
        by_pouch[sample.pouch_id].append(sample.utilization)

    levels: Dict[int, List[float]] = defaultdict(list)
    for samples in rounds.values():
        level = max(s.concurrent_calls for s in samples)
        levels[level].append(mean([s.utilization for s in samples]))

    by_level = {level: mean(values) for level, values in sorted(levels.items())}
    summary = CpuSummary(
        samples=len(store.cpu),
        mean_utilization=mean([s.utilization for s in store.cpu]),
        mean_by_pouch={p: mean(v) for p, v in by_pouch.items()},
        by_concurrency=by_level,
    )
    if len(by_level) >= 2:
        summary.slope, summary.intercept, summary.r2 = linear_fit(list(by_level), list(by_level.values()))
    return summary


def compute_metrics(store: MetricsStore, descriptor: str = "", scenario: Optional[Dict[str, Any]] = None,
                    seed: int = 0) -> RunSummary:
    """Сводка по окну измерений; пустое окно считается ошибкой"""
    latency = store.latency_samples_ms()
    if store.empty:
        raise EmptyWindow("В окне измерений нет ни одной выборки")
    window_end = store.window_end_us if store.window_end_us is not None else store.end_us
    levels = [value for t, value in store.concurrency if store.in_window(t)]
    return RunSummary(
        descriptor=descriptor,
        scenario=scenario or {},
        seed=seed,
        window_ms=[us_to_ms(store.window_start_us), us_to_ms(window_end or 0)],
        latency=summarize_latency(latency),
        jitter=summarize_jitter(store),
        cpu=summarize_cpu(store),
        outcomes=store.outcome_counts(),
        registrations=dict(store.registrations),
        concurrency_mean=store.mean_concurrency(store.end_us),
        concurrency_max=max(levels, default=0),
        aborts=store.aborts,
        counters=dict(store.counters),
    )


def empty_summary(store: MetricsStore, descriptor: str = "", scenario: Optional[Dict[str, Any]] = None,
                  seed: int = 0) -> RunSummary:
    """Сводка с нулевыми счетчиками для прогона без выборок"""
    return RunSummary(descriptor=descriptor, scenario=scenario or {}, seed=seed,
                      outcomes=store.outcome_counts(), registrations=dict(store.registrations),
                      counters=dict(store.counters))
