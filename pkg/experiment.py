"""
Модуль экспериментов.
Описание эксперимента (JSON), построение сценария, свип по размеру кеша
для набора политик и запись CSV/Excel.
"""

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from catalog import (
    TABLE1_CLASSES,
    Catalog,
    ClassSpec,
    RetentionCurve,
    build_table1_scenario,
    fit_lambda_to_watch_time,
    load_catalog,
    random_catalog,
    synthetic_catalog
)
from che_analytics import (
    ChunkScheme,
    chunk_lru_nu1,
    infinitesimal_bound,
    optimize_tail_drop,
    standard_lru_traffic,
    traffic_chunk_lru
)
from config import DEFAULT_SEED, NU_GRID_POINTS, OUTPUT_DIR, WARMUP_FRACTION, WORKERS, logger
from errors import ChunkCacheError, ValidationError
from report_writer import (
    create_summary_excel,
    write_allocation_csv,
    write_che_sweep_csv,
    write_nu_star_csv,
    write_traffic_csv
)
from simulator import run_simulation
from static_opt import most_popular_baseline, partial_caching_gain, traffic_static, waterfill_bisection
from worker_pool import parallel_map

OPTIMAL_STATIC = 'optimal_static'
MOST_POPULAR = 'most_popular'
CHUNK_LRU = 'chunk_lru'
CHUNK_LRU_NU1 = 'chunk_lru_nu1'
STANDARD_LRU = 'standard_lru'
INFINITESIMAL_BOUND = 'infinitesimal_bound'

POLICIES = (OPTIMAL_STATIC, MOST_POPULAR, CHUNK_LRU, CHUNK_LRU_NU1, STANDARD_LRU, INFINITESIMAL_BOUND)
CHE_POLICIES = (CHUNK_LRU, CHUNK_LRU_NU1, STANDARD_LRU, INFINITESIMAL_BOUND)

SCENARIO_KINDS = ('table1', 'synthetic', 'file')
OUTPUT_FORMATS = ('csv', 'xlsx')

# Обозначение N = бесконечности в CSV
INFINITE_N = 'inf'


@dataclass
class ScenarioSpec:
    """
    Сценарий каталога.

    kind:
        table1 - классы видео из измерений (class_table, по умолчанию встроенная таблица)
        synthetic - однородный каталог (watch_time, lam или retention = 'constant')
        file - каталог из JSON файла (catalog_path)
    """
    kind: str = 'table1'
    files: int = 1000
    alpha: float = 0.8
    watch_time: Optional[float] = None
    lam: Optional[float] = None
    retention: str = 'truncated_exponential'
    uniform_size: bool = False
    size: float = 1.0
    randomize: bool = False
    class_table: Optional[List[Dict]] = None
    catalog_path: Optional[str] = None

    def validate(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValidationError(f"Неизвестный сценарий: {self.kind!r} (ожидается один из {SCENARIO_KINDS})")
        if self.kind == 'file':
            if not self.catalog_path:
                raise ValidationError("Для сценария 'file' нужен catalog_path")
            return
        if self.files < 1:
            raise ValidationError(f"Количество файлов должно быть >= 1: {self.files}")
        if self.alpha < 0:
            raise ValidationError(f"Параметр Zipf должен быть >= 0: {self.alpha}")
        if self.size <= 0:
            raise ValidationError(f"Размер файла должен быть > 0: {self.size}")
        if self.retention not in ('truncated_exponential', 'constant'):
            raise ValidationError(f"Неизвестный тип удержания: {self.retention!r}")
        if self.watch_time is not None and not (0.0 < self.watch_time < 1.0):
            raise ValidationError(f"watch_time должна лежать в (0; 1): {self.watch_time}")


@dataclass
class ExperimentSpec:
    """Описание эксперимента: сценарий, ось свипа C/SM, политики, сиды и вывод."""
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    c_over_sm: List[float] = field(default_factory=lambda: [0.01, 0.1])
    policies: List[str] = field(default_factory=lambda: [OPTIMAL_STATIC, MOST_POPULAR])
    chunks: List[int] = field(default_factory=lambda: [1, 4, 20])
    seeds: List[int] = field(default_factory=lambda: [DEFAULT_SEED])
    output: str = OUTPUT_DIR
    simulate_requests: int = 0
    warmup_fraction: float = WARMUP_FRACTION
    workers: int = WORKERS
    format: str = 'csv'
    nu_grid_points: int = NU_GRID_POINTS
    # Для одиночных команд (che, simulate, validate)
    nu: float = 1.0
    top_files: Optional[int] = None

    def validate(self):
        """Проверить описание до начала вычислений."""
        self.scenario.validate()
        if not self.policies:
            raise ValidationError("Нужна хотя бы одна политика")
        for policy in self.policies:
            if policy not in POLICIES:
                raise ValidationError(f"Неизвестная политика: {policy!r} (ожидается одна из {POLICIES})")
        if not self.c_over_sm:
            raise ValidationError("Список C/SM пуст")
        for c in self.c_over_sm:
            if not (isinstance(c, (int, float)) and 0.0 < c <= 1.0):
                raise ValidationError(f"Значения C/SM должны лежать в (0; 1]: {c}")
        if not self.chunks or any(int(n) < 1 for n in self.chunks):
            raise ValidationError(f"Количество чанков должно быть >= 1: {self.chunks}")
        if not self.seeds or any(int(s) < 0 for s in self.seeds):
            raise ValidationError(f"Сиды должны быть неотрицательными: {self.seeds}")
        if self.simulate_requests < 0:
            raise ValidationError(f"simulate_requests должно быть >= 0: {self.simulate_requests}")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ValidationError(f"Доля прогрева должна лежать в [0; 1): {self.warmup_fraction}")
        if self.workers < 1:
            raise ValidationError(f"workers должно быть >= 1: {self.workers}")
        if self.format not in OUTPUT_FORMATS:
            raise ValidationError(f"Неизвестный формат вывода: {self.format!r}")
        if self.nu_grid_points < 2:
            raise ValidationError(f"nu_grid_points должно быть >= 2: {self.nu_grid_points}")
        if not (0.0 < self.nu <= 1.0):
            raise ValidationError(f"nu должно лежать в (0; 1]: {self.nu}")
        if self.top_files is not None and self.top_files < 1:
            raise ValidationError(f"top_files должно быть >= 1: {self.top_files}")

    @classmethod
    def from_dict(cls, data: Dict) -> 'ExperimentSpec':
        if not isinstance(data, dict):
            raise ValidationError("Описание эксперимента должно быть JSON объектом")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"Неизвестные поля эксперимента: {sorted(unknown)}")

        scenario_data = data.get('scenario', {})
        scenario_known = set(ScenarioSpec.__dataclass_fields__)
        unknown = set(scenario_data) - scenario_known
        if unknown:
            raise ValidationError(f"Неизвестные поля сценария: {sorted(unknown)}")

        try:
            values = {k: v for k, v in data.items() if k != 'scenario'}
            spec = cls(scenario=ScenarioSpec(**scenario_data), **values)
        except TypeError as e:
            raise ValidationError(f"Некорректное описание эксперимента: {e}")
        spec.c_over_sm = [float(c) for c in spec.c_over_sm]
        spec.chunks = [int(n) for n in spec.chunks]
        spec.seeds = [int(s) for s in spec.seeds]
        return spec

    def to_dict(self) -> Dict:
        return asdict(self)


def load_experiment_spec(path: str) -> ExperimentSpec:
    """Загрузить описание эксперимента из JSON."""
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"Ошибка парсинга JSON {path}: {e}")
    spec = ExperimentSpec.from_dict(data)
    logger.info(f"Загружено описание эксперимента: {path}")
    return spec


@dataclass
class ExperimentResult:
    """Строки всех CSV, пути к файлам и итоги."""
    traffic_rows: List[Dict]
    allocation_rows: List[Dict]
    nu_rows: List[Dict]
    che_rows: List[Dict]
    files: Dict[str, str]
    summary: Dict


def _scenario_curve(scenario: ScenarioSpec) -> RetentionCurve:
    if scenario.retention == 'constant':
        return RetentionCurve.constant()
    if scenario.lam is not None:
        return RetentionCurve.truncated_exponential(scenario.lam)
    watch_time = scenario.watch_time if scenario.watch_time is not None else 0.5
    return RetentionCurve.truncated_exponential(fit_lambda_to_watch_time(watch_time))


def build_catalogs(scenario: ScenarioSpec, seed: int) -> Tuple[Catalog, Optional[Catalog]]:
    """
    Построить каталоги сценария.

    Returns:
        (каталог для статических политик, каталог с одинаковыми размерами для
        chunk-LRU или None, если его нет)
    """
    if scenario.kind == 'file':
        catalog = load_catalog(scenario.catalog_path)
        return catalog, catalog if catalog.uniform_size else None

    if scenario.kind == 'synthetic':
        if scenario.randomize:
            catalog = random_catalog(scenario.files, seed, uniform_size=True)
        else:
            catalog = synthetic_catalog(scenario.files, scenario.alpha, _scenario_curve(scenario), scenario.size)
        return catalog, catalog

    table = TABLE1_CLASSES
    if scenario.class_table is not None:
        table = [ClassSpec.from_dict(item) for item in scenario.class_table]
    static_catalog = build_table1_scenario(
        scenario.files, scenario.alpha, table,
        uniform_size=scenario.uniform_size, size=scenario.size
    )
    if scenario.uniform_size:
        return static_catalog, static_catalog
    che_catalog = build_table1_scenario(scenario.files, scenario.alpha, table, uniform_size=True, size=scenario.size)
    return static_catalog, che_catalog


def _na_rows(policy: str, c: float, ns: List, rows: Dict[str, List[Dict]]):
    for n in ns:
        rows['traffic'].append({'C_over_SM': c, 'policy': policy, 'N': n, 'B_normalized': None})
        if policy in (CHUNK_LRU, INFINITESIMAL_BOUND):
            rows['nu_star'].append({'C_over_SM': c, 'N': n, 'nu_star': None})
            rows['che_sweep'].append({'C_over_SM': c, 'N': n, 'nu_star': None, 'B_normalized': None, 't_C': None})


def _simulated_traffic(spec: ExperimentSpec, catalog: Catalog, scheme: ChunkScheme, C: float) -> Optional[float]:
    """Нормированный трафик симуляции, усреднённый по сидам (None, если симуляция невозможна)."""
    try:
        values = [
            run_simulation(catalog, scheme, C, spec.simulate_requests, seed, spec.warmup_fraction).traffic.normalized
            for seed in spec.seeds
        ]
    except ChunkCacheError as e:
        logger.warning(f"Симуляция невозможна ({e}), строка NA")
        return None
    return float(np.mean(values))


def _evaluate_policy(
    spec: ExperimentSpec,
    policy: str,
    static_catalog: Catalog,
    che_catalog: Optional[Catalog],
    c: float,
    rows: Dict[str, List[Dict]]
):
    if policy in (OPTIMAL_STATIC, MOST_POPULAR):
        C = c * static_catalog.total_size
        if policy == OPTIMAL_STATIC:
            allocation = waterfill_bisection(static_catalog, C)
            M = static_catalog.M
            for i, eta in enumerate(allocation.eta):
                rows['allocation'].append({'C_over_SM': c, 'popularity_rank_fraction': (i + 1) / M, 'eta': float(eta)})
        else:
            allocation = most_popular_baseline(static_catalog, C)
        normalized = traffic_static(static_catalog, allocation).normalized
        rows['traffic'].append({'C_over_SM': c, 'policy': policy, 'N': '', 'B_normalized': normalized})
        return

    catalog = che_catalog
    C = c * catalog.total_size

    if policy == STANDARD_LRU:
        prediction = standard_lru_traffic(catalog, C)
        rows['traffic'].append({'C_over_SM': c, 'policy': policy, 'N': 1, 'B_normalized': prediction.traffic.normalized})
        if spec.simulate_requests > 0:
            simulated = _simulated_traffic(spec, catalog, ChunkScheme.equal(1, 1.0), C)
            rows['traffic'].append({'C_over_SM': c, 'policy': f'{policy}_sim', 'N': 1, 'B_normalized': simulated})
        return

    if policy == INFINITESIMAL_BOUND:
        bound = infinitesimal_bound(catalog, C, spec.nu_grid_points)
        rows['traffic'].append({'C_over_SM': c, 'policy': policy, 'N': INFINITE_N, 'B_normalized': bound.normalized})
        rows['nu_star'].append({'C_over_SM': c, 'N': INFINITE_N, 'nu_star': bound.nu})
        rows['che_sweep'].append({'C_over_SM': c, 'N': INFINITE_N, 'nu_star': bound.nu,
                                  'B_normalized': bound.normalized, 't_C': bound.t_C})
        return

    for n in spec.chunks:
        try:
            if policy == CHUNK_LRU_NU1:
                prediction = chunk_lru_nu1(catalog, C, n)
                rows['traffic'].append({'C_over_SM': c, 'policy': policy, 'N': n,
                                        'B_normalized': prediction.traffic.normalized})
                continue

            nu_star, _ = optimize_tail_drop(catalog, C, n, nu_grid=spec.nu_grid_points)
            scheme = ChunkScheme.equal(n, nu_star)
            prediction = traffic_chunk_lru(catalog, scheme, C)
            normalized = prediction.traffic.normalized
            rows['traffic'].append({'C_over_SM': c, 'policy': policy, 'N': n, 'B_normalized': normalized})
            rows['nu_star'].append({'C_over_SM': c, 'N': n, 'nu_star': nu_star})
            rows['che_sweep'].append({'C_over_SM': c, 'N': n, 'nu_star': nu_star,
                                      'B_normalized': normalized, 't_C': prediction.t_C})
            if spec.simulate_requests > 0:
                simulated = _simulated_traffic(spec, catalog, scheme, C)
                rows['traffic'].append({'C_over_SM': c, 'policy': f'{policy}_sim', 'N': n, 'B_normalized': simulated})
        except ChunkCacheError as e:
            logger.warning(f"C/SM = {c}: политика {policy}, N = {n} недопустима ({e}), строка NA")
            _na_rows(policy, c, [n], rows)


def _policy_chunk_counts(spec: ExperimentSpec, policy: str) -> List:
    if policy == INFINITESIMAL_BOUND:
        return [INFINITE_N]
    if policy in (CHUNK_LRU, CHUNK_LRU_NU1):
        return list(spec.chunks)
    if policy == STANDARD_LRU:
        return [1]
    return ['']


def _evaluate_point(task: Tuple) -> Dict[str, List[Dict]]:
    """Все политики для одного значения C/SM."""
    spec, static_catalog, che_catalog, c = task
    rows = {'traffic': [], 'allocation': [], 'nu_star': [], 'che_sweep': []}
    for policy in spec.policies:
        try:
            _evaluate_policy(spec, policy, static_catalog, che_catalog, c, rows)
        except ChunkCacheError as e:
            logger.warning(f"C/SM = {c}: политика {policy} недопустима ({e}), строка NA")
            _na_rows(policy, c, _policy_chunk_counts(spec, policy), rows)
    logger.info(f"Точка C/SM = {c} готова")
    return rows


def summarize(traffic_rows: List[Dict]) -> Dict:
    """
    Итоги свипа: пиковый выигрыш оптимального частичного кеширования
    над хранением популярных видео целиком.
    """
    optimal = {r['C_over_SM']: r['B_normalized'] for r in traffic_rows
               if r['policy'] == OPTIMAL_STATIC and r['B_normalized'] is not None}
    popular = {r['C_over_SM']: r['B_normalized'] for r in traffic_rows
               if r['policy'] == MOST_POPULAR and r['B_normalized'] is not None}

    best_gain, best_c = None, None
    for c in sorted(set(optimal) & set(popular)):
        gain = partial_caching_gain(popular[c], optimal[c])
        if best_gain is None or gain > best_gain:
            best_gain, best_c = gain, c
    return {'peak_gain': best_gain, 'peak_gain_C_over_SM': best_c}


def run_experiment(spec: ExperimentSpec, write: bool = True) -> ExperimentResult:
    """
    Выполнить эксперимент: свип по C/SM для всех политик.

    Точки свипа считаются независимо (при workers > 1 - в пуле процессов),
    результаты собираются в порядке описания. Недопустимая точка даёт строку NA.

    Args:
        spec: Описание эксперимента
        write: Записать CSV (и Excel при format = 'xlsx')

    Returns:
        Результат эксперимента
    """
    spec.validate()
    static_catalog, che_catalog = build_catalogs(spec.scenario, spec.seeds[0])
    if che_catalog is None and any(p in CHE_POLICIES for p in spec.policies):
        raise ValidationError("Политики chunk-LRU требуют каталога с одинаковыми размерами файлов")

    logger.info(f"Эксперимент: {len(spec.c_over_sm)} точек C/SM, политики {spec.policies}, "
                f"M = {static_catalog.M}")

    tasks = [(spec, static_catalog, che_catalog, c) for c in spec.c_over_sm]
    results = parallel_map(_evaluate_point, tasks, spec.workers)

    traffic_rows = [row for r in results for row in r['traffic']]
    allocation_rows = [row for r in results for row in r['allocation']]
    nu_rows = [row for r in results for row in r['nu_star']]
    che_rows = [row for r in results for row in r['che_sweep']]
    summary = summarize(traffic_rows)

    if summary['peak_gain'] is not None:
        logger.info(f"Пиковый выигрыш частичного кеширования: {summary['peak_gain']:.1%} "
                    f"при C/SM = {summary['peak_gain_C_over_SM']}")

    files = {}
    if write:
        out = spec.output
        files['traffic'] = write_traffic_csv(out, traffic_rows)
        files['allocation'] = write_allocation_csv(out, allocation_rows)
        files['nu_star'] = write_nu_star_csv(out, nu_rows)
        files['che_sweep'] = write_che_sweep_csv(out, che_rows)
        if spec.format == 'xlsx':
            files['summary'] = create_summary_excel(os.path.join(out, 'summary.xlsx'), traffic_rows, nu_rows, summary)

    return ExperimentResult(
        traffic_rows=traffic_rows,
        allocation_rows=allocation_rows,
        nu_rows=nu_rows,
        che_rows=che_rows,
        files=files,
        summary=summary
    )
