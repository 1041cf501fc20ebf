"""
Точка входа командной строки.

Команды: gen-catalog, static-opt, che, simulate, sweep, validate.
Коды выхода: 0 - успех, 2 - некорректные входные данные, 1 - ошибка
ввода-вывода или внутренняя ошибка, 3 - validate выявил отклонение выше порогов.
"""

import argparse
import json
import os
import sys
from typing import List, Optional

from catalog import save_catalog
from che_analytics import ChunkScheme, traffic_chunk_lru
from config import logger
from errors import ChunkCacheError
from experiment import ExperimentSpec, build_catalogs, load_experiment_spec, run_experiment
from report_writer import write_file_allocation_csv, write_hit_rates_csv
from simulator import compare_sim_to_che, hit_rate_rows, run_simulation
from static_opt import (
    allocation_rows,
    brute_force_allocation_oracle,
    most_popular_baseline,
    traffic_static,
    waterfill_appendix,
    waterfill_bisection
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_VALIDATION_FAILED = 3

DEFAULT_REQUESTS = 1_000_000

STATIC_METHODS = {
    'bisection': waterfill_bisection,
    'appendix': waterfill_appendix,
    'most_popular': most_popular_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    """Создать парсер аргументов со всеми командами."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON описание эксперимента')
    common.add_argument('--seed', type=int, help='Сид генератора')
    common.add_argument('--out-dir', help='Папка для результатов')
    common.add_argument('--format', choices=['csv', 'xlsx'], help='Формат вывода')
    common.add_argument('--workers', type=int, help='Количество процессов')
    common.add_argument('--scenario', choices=['table1', 'synthetic', 'file'], help='Сценарий каталога')
    common.add_argument('--files', type=int, help='Количество файлов M')
    common.add_argument('--alpha', type=float, help='Параметр Zipf')
    common.add_argument('--watch-time', type=float, help='Средняя доля просмотра (synthetic)')
    common.add_argument('--lam', type=float, help='lambda усечённой экспоненты (synthetic)')
    common.add_argument('--catalog', help='JSON каталог (сценарий file)')
    common.add_argument('--uniform-size', action='store_true', default=None, help='Одинаковые размеры файлов')

    single = argparse.ArgumentParser(add_help=False)
    single.add_argument('--c-over-sm', type=float, help='Размер кеша C/(S M)')
    single.add_argument('--chunks', type=int, help='Количество чанков N')
    single.add_argument('--nu', type=float, help='Tail drop factor')

    parser = argparse.ArgumentParser(prog='chunkcache', description='Частичное кеширование видео: оптимум, Che, симуляция')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen-catalog', parents=[common], help='Записать каталог в JSON')
    gen.add_argument('--output', help='Путь к файлу каталога')

    static = sub.add_parser('static-opt', parents=[common, single], help='Оптимальное статическое размещение')
    static.add_argument('--method', choices=sorted(STATIC_METHODS) + ['brute_force'], default='bisection')
    static.add_argument('--grid', type=int, default=1000, help='Срезов на файл для brute_force')

    sub.add_parser('che', parents=[common, single], help='Предсказание Che для chunk-LRU')

    simulate = sub.add_parser('simulate', parents=[common, single], help='Один прогон симуляции')
    simulate.add_argument('--requests', type=int, help='Количество запросов')
    simulate.add_argument('--warmup', type=float, help='Доля прогрева')

    sweep = sub.add_parser('sweep', parents=[common], help='Полный свип по описанию эксперимента')
    sweep.add_argument('--c-over-sm', type=float, nargs='+', help='Значения C/(S M)')
    sweep.add_argument('--chunks', type=int, nargs='+', help='Значения N')

    validate = sub.add_parser('validate', parents=[common, single], help='Сравнение симуляции с Che')
    validate.add_argument('--requests', type=int, help='Запросов на прогон')
    validate.add_argument('--warmup', type=float, help='Доля прогрева')
    validate.add_argument('--runs', type=int, default=3, help='Количество независимых прогонов')
    validate.add_argument('--top-files', type=int, help='Сколько самых популярных файлов сравнивать')

    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    """Собрать описание эксперимента: JSON конфиг и поверх него флаги."""
    spec = load_experiment_spec(args.config) if args.config else ExperimentSpec()
    scenario = spec.scenario

    if args.scenario is not None:
        scenario.kind = args.scenario
    if args.files is not None:
        scenario.files = args.files
    if args.alpha is not None:
        scenario.alpha = args.alpha
    if args.watch_time is not None:
        scenario.watch_time = args.watch_time
    if args.lam is not None:
        scenario.lam = args.lam
    if args.catalog is not None:
        scenario.catalog_path = args.catalog
        if args.scenario is None:
            scenario.kind = 'file'
    if args.uniform_size:
        scenario.uniform_size = True

    if args.seed is not None:
        spec.seeds = [args.seed]
    if args.out_dir is not None:
        spec.output = args.out_dir
    if args.format is not None:
        spec.format = args.format
    if args.workers is not None:
        spec.workers = args.workers

    c_over_sm = getattr(args, 'c_over_sm', None)
    if c_over_sm is not None:
        spec.c_over_sm = list(c_over_sm) if isinstance(c_over_sm, list) else [c_over_sm]
    chunks = getattr(args, 'chunks', None)
    if chunks is not None:
        spec.chunks = list(chunks) if isinstance(chunks, list) else [chunks]
    if getattr(args, 'nu', None) is not None:
        spec.nu = args.nu
    if getattr(args, 'requests', None) is not None:
        spec.simulate_requests = args.requests
    if getattr(args, 'warmup', None) is not None:
        spec.warmup_fraction = args.warmup
    if getattr(args, 'top_files', None) is not None:
        spec.top_files = args.top_files

    spec.validate()
    return spec


def cmd_gen_catalog(args: argparse.Namespace) -> int:
    """Обработчик команды gen-catalog."""
    spec = spec_from_args(args)
    catalog, _ = build_catalogs(spec.scenario, spec.seeds[0])
    path = args.output or os.path.join(spec.output, 'catalog.json')
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    save_catalog(catalog, path)
    print(f"Каталог: {catalog.M} файлов -> {path}")
    return EXIT_OK


def cmd_static_opt(args: argparse.Namespace) -> int:
    """Обработчик команды static-opt."""
    spec = spec_from_args(args)
    catalog, _ = build_catalogs(spec.scenario, spec.seeds[0])
    C = spec.c_over_sm[0] * catalog.total_size

    if args.method == 'brute_force':
        allocation = brute_force_allocation_oracle(catalog, C, args.grid)
    else:
        allocation = STATIC_METHODS[args.method](catalog, C)
    traffic = traffic_static(catalog, allocation)

    path = write_file_allocation_csv(
        os.path.join(spec.output, f'allocation_{args.method}.csv'),
        allocation_rows(catalog, allocation)
    )
    print(f"Метод: {args.method}, C/SM = {spec.c_over_sm[0]}")
    print(f"mu = {allocation.mu:.9g}, занято {allocation.used_capacity:.9g}")
    print(f"B = {traffic.absolute:.9g}, B/B_nc = {traffic.normalized:.9g}")
    print(f"Размещение: {path}")
    return EXIT_OK


def _che_inputs(spec: ExperimentSpec):
    """Каталог с одинаковыми размерами, схема чанков и ёмкость для che, simulate и validate."""
    _, catalog = build_catalogs(spec.scenario, spec.seeds[0])
    if catalog is None:
        raise ChunkCacheError("Нужен каталог с одинаковыми размерами файлов")
    C = spec.c_over_sm[0] * catalog.total_size
    scheme = ChunkScheme.equal(spec.chunks[0], spec.nu)
    return catalog, scheme, C


def cmd_che(args: argparse.Namespace) -> int:
    """Обработчик команды che."""
    spec = spec_from_args(args)
    catalog, scheme, C = _che_inputs(spec)
    prediction = traffic_chunk_lru(catalog, scheme, C)
    path = write_hit_rates_csv(os.path.join(spec.output, 'che_hit_rates.csv'), hit_rate_rows(prediction))
    print(f"N = {scheme.N}, nu = {scheme.nu}, C/S = {prediction.capacity:.6g}")
    print(f"t_C = {prediction.t_C:.9g}{' (насыщение)' if prediction.saturated else ''}")
    print(f"B/S = {prediction.traffic.absolute / catalog.size:.9g}, B/B_nc = {prediction.traffic.normalized:.9g}")
    print(f"Вероятности попадания: {path}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    """Обработчик команды simulate."""
    spec = spec_from_args(args)
    catalog, scheme, C = _che_inputs(spec)
    requests = spec.simulate_requests or DEFAULT_REQUESTS
    report = run_simulation(catalog, scheme, C, requests, spec.seeds[0], spec.warmup_fraction)
    path = write_hit_rates_csv(os.path.join(spec.output, 'sim_hit_rates.csv'), hit_rate_rows(report))
    print(f"Запросов {report.requests}, прогрев {report.warmup_discarded}")
    print(f"B/S = {report.traffic.absolute / catalog.size:.9g}, B/B_nc = {report.traffic.normalized:.9g}")
    print(f"Вероятности попадания: {path}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Обработчик команды sweep."""
    spec = spec_from_args(args)
    result = run_experiment(spec)
    for name, path in result.files.items():
        print(f"{name}: {path}")
    gain = result.summary['peak_gain']
    if gain is not None:
        print(f"Пиковый выигрыш частичного кеширования: {gain:.2%} при C/SM = {result.summary['peak_gain_C_over_SM']}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    """Обработчик команды validate. Код 3, если пороги не пройдены."""
    spec = spec_from_args(args)
    catalog, scheme, C = _che_inputs(spec)
    requests = spec.simulate_requests or DEFAULT_REQUESTS
    report = compare_sim_to_che(
        catalog, scheme, C, requests, spec.seeds[0],
        runs=args.runs,
        top_files=spec.top_files,
        warmup_fraction=spec.warmup_fraction,
        workers=spec.workers
    )

    os.makedirs(spec.output, exist_ok=True)
    path = os.path.join(spec.output, 'validation.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report.to_dict(), f, ensure_ascii=False, indent=2)

    print(f"max |h_sim - h_che| (топ {report.top_files} файлов): {report.max_hit_rate_deviation:.4f} "
          f"(порог {report.hit_rate_threshold})")
    runs = ", ".join(f"{d:.4f}" for d in report.run_hit_rate_deviations)
    print(f"Отдельные прогоны: {runs}")
    print(f"Отклонение трафика: {report.traffic_deviation:.2%} (порог {report.traffic_threshold:.0%})")
    if report.cache_small:
        print("Внимание: кеш мал по сравнению с файлом, приближение Che не гарантируется")
    print(f"Отчёт: {path}")
    return EXIT_OK if report.passed else EXIT_VALIDATION_FAILED


COMMANDS = {
    'gen-catalog': cmd_gen_catalog,
    'static-opt': cmd_static_opt,
    'che': cmd_che,
    'simulate': cmd_simulate,
    'sweep': cmd_sweep,
    'validate': cmd_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Разобрать аргументы и выполнить команду; вернуть код выхода."""
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ChunkCacheError as e:
        logger.error(f"Некорректные входные данные: {e}")
        return EXIT_INVALID
    except OSError as e:
        logger.error(f"Ошибка ввода-вывода: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Ошибка при выполнении {args.command}: {e}", exc_info=True)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
