"""
Эксперименты: одиночный прогон, реплики, матрица конфигураций и сравнение
пулов разной скорости. Каждый прогон независим и может выполняться в
отдельном процессе.
"""

import asyncio
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel, Field, field_validator

from database.hss import load_provisioning
from errors import ConservationError, EmptyWindow
from services.descriptor import GOLDEN_DESCRIPTORS, Descriptor, load_descriptor
from services.kernel import ms_to_us
from services.metrics_service import RunSummary, compute_metrics, empty_summary
from services.orchestrator import deploy_system
from services.report_service import ReportService
from services.traffic import ScenarioConfig, load_scenario, run_traffic
from utils.stats import linear_fit, mean, ranks, spearman

logger = logging.getLogger(__name__)

POOL_SPEEDS = {"slow": 0.5, "fast": 2.0}
DEFAULT_MATRIX = ("NO1", "NO2", "NO3", "NO4", "NO5", "DIST")
CPU_LEVELS = (25, 50, 75, 100)


class ExperimentConfig(BaseModel):
    """Один прогон: Descriptor, сценарий, число реплик"""
    descriptor: str
    scenario: str = "paper"
    replicas: int = Field(default=1, ge=1)
    seed: int = 1
    speed: Optional[float] = Field(default=None, gt=0)
    kill_pouch: Optional[str] = None
    kill_at_ms: Optional[float] = Field(default=None, ge=0)

    @field_validator("descriptor")
    @classmethod
    def _known_descriptor(cls, value: str) -> str:
        if value in GOLDEN_DESCRIPTORS or value.endswith(".desc") or "/" in value:
            return value
        raise ValueError(f"неизвестный Descriptor: {value}")


@dataclass(frozen=True)
class RunJob:
    """Все, что нужно процессу-исполнителю для одного прогона"""
    descriptor: Descriptor
    scenario: ScenarioConfig
    seed: int
    out_dir: Optional[str] = None
    kill_pouch: Optional[str] = None
    kill_at_ms: Optional[float] = None
    provisioning: Optional[str] = None
    em_config: Optional[Dict[str, Any]] = None
    check_conservation: bool = True


@dataclass
class RunResult:
    summary: RunSummary
    conservation_error: Optional[str] = None


def execute_run(job: RunJob) -> RunResult:
    """Развернуть систему, прогнать сценарий, посчитать сводку и записать отчет"""
    hss = load_provisioning(Path(job.provisioning) if job.provisioning else None,
                            job.scenario.subscriber_count)
    system = deploy_system(job.descriptor, seed=job.seed, hss=hss, em_config=job.em_config)
    if job.kill_pouch is not None and job.kill_at_ms is not None:
        system.kernel.call_at(ms_to_us(job.kill_at_ms), lambda: system.kill_pouch(job.kill_pouch))
    store = run_traffic(job.scenario, system)

    scenario_echo = job.scenario.model_dump()
    try:
        summary = compute_metrics(store, job.descriptor.name, scenario_echo, job.seed)
    except EmptyWindow:
        logger.warning(f"{job.descriptor.name}: пустое окно измерений")
        summary = empty_summary(store, job.descriptor.name, scenario_echo, job.seed)
    summary.scale_decisions = [
        {"t_ms": d.t_us / 1000, "action": d.action, "pool_id": d.pool_id, "pouch_id": d.pouch_id,
         "mean_utilization": round(d.mean_utilization, 6)}
        for d in system.mmo.decisions
    ]

    error = None
    if job.check_conservation:
        counts = summary.outcomes
        if counts.get("pending", 0) or counts.get("attempted", 0) != (
                counts.get("established", 0) + counts.get("failed", 0) + counts.get("abandoned", 0)):
            error = f"исходы вызовов не сходятся: {counts}"
        else:
            try:
                system.check_conservation()
            except ConservationError as e:
                error = str(e)

    if job.out_dir is not None:
        reporter = ReportService(Path(job.out_dir))
        asyncio.run(reporter.emit_report(store, summary, system.lgs.consolidated()))
    return RunResult(summary, error)


async def run_jobs(jobs: Sequence[RunJob], parallel: int = 1) -> List[RunResult]:
    """Прогоны в пуле процессов (parallel > 1) или в фоновом потоке"""
    loop = asyncio.get_running_loop()
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [loop.run_in_executor(pool, execute_run, job) for job in jobs]
            return list(await asyncio.gather(*futures))
    results = []
    for job in jobs:
        results.append(await loop.run_in_executor(None, execute_run, job))
    return results


def merge_replicas(results: Sequence[RunResult]) -> Dict[str, Any]:
    """Средние по репликам; сами сводки сохраняются целиком"""
    summaries = [r.summary for r in results]

    def avg(values):
        values = [v for v in values if v is not None]
        return mean(values)

    return {
        "replicas": len(summaries),
        "seeds": [s.seed for s in summaries],
        "latency_mean_ms": avg(s.latency.mean_ms for s in summaries),
        "latency_stddev_ms": avg(s.latency.stddev_ms for s in summaries),
        "jitter_stddev_ms": avg(s.jitter.stddev_ms for s in summaries),
        "cpu_mean_utilization": avg(s.cpu.mean_utilization for s in summaries),
        "outcomes": {
            key: sum(s.outcomes.get(key, 0) for s in summaries)
            for key in ("attempted", "established", "failed", "abandoned", "dropped")
        },
        "runs": [s.model_dump(mode="json") for s in summaries],
    }


def rank_configs(summaries: Dict[str, RunSummary]) -> List[Dict[str, Any]]:
    """Таблица сравнения: средняя задержка управления и джиттер медиа"""
    names = list(summaries)
    latency = [summaries[n].latency.mean_ms for n in names]
    jitter = [summaries[n].jitter.stddev_ms for n in names]
    inf = float("inf")
    latency_rank = ranks([v if v is not None else inf for v in latency])
    jitter_rank = ranks([v if v is not None else inf for v in jitter])
    rows = []
    for i, name in enumerate(names):
        rows.append({
            "config": name,
            "latency_mean_ms": latency[i],
            "latency_stddev_ms": summaries[name].latency.stddev_ms,
            "jitter_stddev_ms": jitter[i],
            "cpu_mean_utilization": summaries[name].cpu.mean_utilization,
            "latency_rank": latency_rank[i],
            "jitter_rank": jitter_rank[i],
        })
    return rows


def heterogeneity(by_pool: Dict[str, Dict[str, RunSummary]]) -> Dict[str, Any]:
    """Сохраняется ли порядок конфигураций по задержке на пулах разной скорости"""
    pools = list(by_pool)
    report: Dict[str, Any] = {"pools": pools, "latency_mean_ms": {}, "established_ratio": {}}
    for pool in pools:
        summaries = by_pool[pool]
        report["latency_mean_ms"][pool] = {n: s.latency.mean_ms for n, s in summaries.items()}
        attempted = sum(s.outcomes.get("attempted", 0) for s in summaries.values())
        established = sum(s.outcomes.get("established", 0) for s in summaries.values())
        report["established_ratio"][pool] = established / attempted if attempted else None
    if len(pools) >= 2:
        a, b = pools[0], pools[1]
        names = [n for n in by_pool[a] if n in by_pool[b]]
        xs = [by_pool[a][n].latency.mean_ms for n in names]
        ys = [by_pool[b][n].latency.mean_ms for n in names]
        if all(v is not None for v in xs + ys):
            report["spearman"] = spearman(xs, ys)
    return report


def cpu_linearity(summaries: Dict[int, RunSummary]) -> Dict[str, Any]:
    """Средняя загрузка против среднего числа одновременных вызовов по уровням нагрузки"""
    points = [(s.concurrency_mean, s.cpu.mean_utilization) for s in summaries.values()
              if s.cpu.mean_utilization is not None]
    result: Dict[str, Any] = {"points": [{"concurrent_calls": x, "cpu": y} for x, y in points]}
    if len(points) >= 2:
        slope, intercept, r2 = linear_fit([p[0] for p in points], [p[1] for p in points])
        result.update(slope=slope, intercept=intercept, r2=r2)
    return result


def resolve_descriptor(ref: str, descriptor_dir: Path, speed: Optional[float] = None) -> Descriptor:
    descriptor = load_descriptor(ref, descriptor_dir)
    return descriptor.with_speed(speed) if speed is not None else descriptor


def resolve_scenario(ref: str, scenario_dir: Path) -> ScenarioConfig:
    return load_scenario(ref, scenario_dir)


def pool_speed(name: str) -> float:
    if name in POOL_SPEEDS:
        return POOL_SPEEDS[name]
    return float(name)


async def run_experiment(config: ExperimentConfig, descriptor_dir: Path, scenario_dir: Path,
                         out_dir: Path, parallel: int = 1, **job_options: Any) -> Dict[str, Any]:
    """Прогон с репликами seed, seed+1, ...; отчеты реплик в подкаталогах"""
    descriptor = resolve_descriptor(config.descriptor, descriptor_dir, config.speed)
    scenario = resolve_scenario(config.scenario, scenario_dir)
    jobs = []
    for i in range(config.replicas):
        target = out_dir if config.replicas == 1 else out_dir / f"replica-{i + 1}"
        jobs.append(RunJob(descriptor, scenario, config.seed + i, str(target),
                           kill_pouch=config.kill_pouch, kill_at_ms=config.kill_at_ms, **job_options))
    results = await run_jobs(jobs, parallel)
    merged = merge_replicas(results)
    merged["conservation_errors"] = [r.conservation_error for r in results if r.conservation_error]
    if config.replicas > 1:
        await ReportService(out_dir).write_text("replicas.json", dump_report(merged))
    return merged


async def run_experiment_matrix(configs: Sequence[ExperimentConfig], descriptor_dir: Path, scenario_dir: Path,
                                out_dir: Path, parallel: int = 1, **job_options: Any) -> Dict[str, Any]:
    """Все конфигурации с одним сценарием и seed; сводки и таблица сравнения"""
    jobs, names = [], []
    for config in configs:
        descriptor = resolve_descriptor(config.descriptor, descriptor_dir, config.speed)
        scenario = resolve_scenario(config.scenario, scenario_dir)
        for i in range(config.replicas):
            base = Path(config.descriptor).stem
            name = base if config.replicas == 1 else f"{base}#{i + 1}"
            names.append(name)
            jobs.append(RunJob(descriptor, scenario, config.seed + i, str(out_dir / name), **job_options))
    logger.info(f"Матрица: {len(jobs)} прогонов, параллельно {parallel}")
    results = await run_jobs(jobs, parallel)
    summaries = {name: result.summary for name, result in zip(names, results)}
    return {
        "summaries": summaries,
        "ranking": rank_configs(summaries),
        "conservation_errors": {n: r.conservation_error for n, r in zip(names, results) if r.conservation_error},
    }


async def run_cpu_sweep(descriptor_ref: str, scenario: ScenarioConfig, descriptor_dir: Path,
                        levels: Sequence[int] = CPU_LEVELS, seed: int = 1,
                        parallel: int = 1) -> Dict[str, Any]:
    """Частота вызовов под заданные уровни одновременных вызовов (L = частота * длительность)"""
    descriptor = resolve_descriptor(descriptor_ref, descriptor_dir)
    jobs = []
    for level in levels:
        rate = level * 60.0 / scenario.call_duration if scenario.call_duration else 0.0
        jobs.append(RunJob(descriptor, scenario.with_rate(rate), seed, check_conservation=False))
    results = await run_jobs(jobs, parallel)
    return cpu_linearity({level: r.summary for level, r in zip(levels, results)})


def _json_default(value: Any):
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    raise TypeError(f"{type(value).__name__} не сериализуется")


def dump_report(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default) + "\n"
