import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import Config
from errors import ConfigError, DescriptorError, ReportError, ScenarioError, UnityError
from services.descriptor import load_descriptor
from services.experiment import (
    CPU_LEVELS,
    DEFAULT_MATRIX,
    ExperimentConfig,
    dump_report,
    heterogeneity,
    pool_speed,
    resolve_scenario,
    run_cpu_sweep,
    run_experiment,
    run_experiment_matrix,
)
from services.report_service import ReportService
from utils.formatters import format_ms, format_table_row

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

CONFIG_ERRORS = (DescriptorError, ScenarioError, ConfigError, ValueError, OSError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unity", description="Детерминированный стенд облачного IMS")
    parser.add_argument("--log-level", default=None, help="уровень журнала процесса (INFO, DEBUG)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="один прогон конфигурации")
    run.add_argument("--descriptor", required=True, help="путь или NO1..NO5, DIST")
    run.add_argument("--scenario", default="paper", help="путь или имя сценария")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--replicas", type=int, default=1)
    run.add_argument("--jobs", type=int, default=None)
    run.add_argument("--speed", type=float, default=None, help="скорость всех пулов")
    run.add_argument("--kill-pouch", "--pouch", dest="kill_pouch", default=None)
    run.add_argument("--kill-pouch-at", "--at", dest="kill_at", type=float, default=None,
                     help="момент отказа, мс виртуального времени")
    run.add_argument("--provisioning", default=None, help="файл абонентов impu<TAB>флаги")

    matrix = sub.add_parser("matrix", help="матрица конфигураций")
    matrix.add_argument("--configs", default=",".join(DEFAULT_MATRIX))
    matrix.add_argument("--scenario", default="paper")
    matrix.add_argument("--seed", type=int, default=None)
    matrix.add_argument("--out", default=None)
    matrix.add_argument("--jobs", type=int, default=None)
    matrix.add_argument("--pools", default=None, help="сравнение пулов: slow,fast или скорости")
    matrix.add_argument("--cpu-levels", default=None,
                        help="уровни одновременных вызовов для проверки линейности CPU (DIST)")

    validate = sub.add_parser("validate", help="проверка Descriptor")
    validate.add_argument("--descriptor", required=True)
    return parser


def _split(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def cmd_validate(args, config: Config) -> int:
    logger = logging.getLogger(__name__)
    descriptor = load_descriptor(args.descriptor, Path(config.descriptor_dir))
    print(f"{descriptor.name}: OK, режим {descriptor.mode}, pouch {descriptor.initial_pouch_count}")
    if descriptor.mode == "pinned":
        print(format_table_row(descriptor.name, descriptor.table_row()))
    logger.info(f"Descriptor {descriptor.name} корректен")
    return EXIT_OK


async def cmd_run(args, config: Config) -> int:
    logger = logging.getLogger(__name__)
    if args.kill_pouch is not None and args.kill_at is None:
        raise ConfigError("--kill-pouch требует --kill-pouch-at")
    experiment = ExperimentConfig(
        descriptor=args.descriptor, scenario=args.scenario, replicas=args.replicas,
        seed=args.seed if args.seed is not None else config.default_seed,
        speed=args.speed, kill_pouch=args.kill_pouch, kill_at_ms=args.kill_at,
    )
    out_dir = Path(args.out or config.out_dir)
    result = await run_experiment(experiment, Path(config.descriptor_dir), Path(config.scenario_dir),
                                  out_dir, parallel=args.jobs or config.jobs,
                                  provisioning=args.provisioning)
    print(f"{experiment.descriptor}: задержка {format_ms(result['latency_mean_ms'])} мс, "
          f"джиттер {format_ms(result['jitter_stddev_ms'])} мс, исходы {result['outcomes']}")
    if result["conservation_errors"]:
        for error in result["conservation_errors"]:
            logger.error(f"Нарушен баланс: {error}")
        return EXIT_RUNTIME
    return EXIT_OK


def _print_ranking(rows):
    for row in rows:
        print(f"{row['config']:>6}  latency {format_ms(row['latency_mean_ms']):>10} ms "
              f"(rank {row['latency_rank']:g})  jitter {format_ms(row['jitter_stddev_ms']):>8} ms "
              f"(rank {row['jitter_rank']:g})")


async def cmd_matrix(args, config: Config) -> int:
    logger = logging.getLogger(__name__)
    seed = args.seed if args.seed is not None else config.default_seed
    out_dir = Path(args.out or config.out_dir)
    parallel = args.jobs or config.jobs
    names = _split(args.configs)
    pools = _split(args.pools) if args.pools else [None]

    report = {"seed": seed, "scenario": args.scenario, "pools": {}}
    by_pool = {}
    errors = {}
    for pool in pools:
        speed = pool_speed(pool) if pool else None
        configs = [ExperimentConfig(descriptor=n, scenario=args.scenario, seed=seed, speed=speed) for n in names]
        target = out_dir / pool if pool else out_dir
        result = await run_experiment_matrix(configs, Path(config.descriptor_dir), Path(config.scenario_dir),
                                             target, parallel=parallel)
        key = pool or "default"
        by_pool[key] = result["summaries"]
        report["pools"][key] = {"ranking": result["ranking"]}
        errors.update({f"{key}/{n}": e for n, e in result["conservation_errors"].items()})
        print(f"[{key}]")
        _print_ranking(result["ranking"])

    if len(pools) >= 2:
        report["heterogeneity"] = heterogeneity(by_pool)
        print(f"Spearman: {report['heterogeneity'].get('spearman')}")
    if args.cpu_levels:
        levels = [int(v) for v in _split(args.cpu_levels)] or list(CPU_LEVELS)
        scenario = resolve_scenario(args.scenario, Path(config.scenario_dir))
        report["cpu_linearity"] = await run_cpu_sweep("DIST", scenario, Path(config.descriptor_dir),
                                                      levels, seed, parallel)
        print(f"CPU R²: {report['cpu_linearity'].get('r2')}")

    report["conservation_errors"] = errors
    await ReportService(out_dir).write_text("matrix.json", dump_report(report))
    if errors:
        for name, error in errors.items():
            logger.error(f"Нарушен баланс в {name}: {error}")
        return EXIT_RUNTIME
    return EXIT_OK


async def main(argv: Optional[List[str]] = None) -> int:
    """Точка входа CLI"""
    args = build_parser().parse_args(argv)
    config = Config()
    logging.basicConfig(
        level=(args.log_level or config.log_level).upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(config.log_file),
            logging.StreamHandler(sys.stdout)
        ]
    )
    logger = logging.getLogger(__name__)

    try:
        if args.command == "validate":
            return cmd_validate(args, config)
        if args.command == "run":
            return await cmd_run(args, config)
        return await cmd_matrix(args, config)
    except ReportError as e:
        logger.error(f"Ошибка записи отчета: {e}")
        return EXIT_RUNTIME
    except CONFIG_ERRORS as e:
        logger.error(f"Ошибка конфигурации: {e}")
        return EXIT_CONFIG
    except UnityError as e:
        logger.error(f"Ошибка выполнения: {e}")
        return EXIT_RUNTIME


def cli():
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logging.info("Программа завершена пользователем")
        sys.exit(EXIT_RUNTIME)


if __name__ == "__main__":
    cli()
