"""
Событийная симуляция chunk-LRU.
Запросы по модели IRM, точка ухода зрителя по кривой удержания,
LRU по чанкам с вытеснением минимального числа давно не использованных.
"""

import functools
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Tuple, Union

import numpy as np

from catalog import Catalog
from che_analytics import ChePrediction, ChunkScheme, traffic_chunk_lru
from config import (
    CHE_MIN_CACHE_FILES,
    HIT_RATE_THRESHOLD,
    SIM_BATCH_SIZE,
    TRAFFIC_THRESHOLD,
    WARMUP_FRACTION,
    logger
)
from errors import ChunkCacheError, ConfigurationError, ValidationError
from numerics import make_rng
from static_opt import TrafficResult, no_cache_traffic
from worker_pool import parallel_map

# Допуск сравнения занятого объёма с ёмкостью
_OCCUPANCY_EPS = 1e-9


class CacheState:
    """
    Содержимое кеша: чанки (файл, номер) в порядке давности использования.

    Размеры чанков дробные (доли файла), занятый объём не превышает ёмкость.
    """

    def __init__(self, capacity: float):
        if capacity < 0:
            raise ConfigurationError(f"Ёмкость кеша отрицательна: {capacity}")
        self._capacity = float(capacity)
        self._entries: 'OrderedDict[Hashable, float]' = OrderedDict()
        self._occupancy = 0.0

    @property
    def capacity(self) -> float:
        return self._capacity

    @property
    def occupancy(self) -> float:
        return self._occupancy

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def keys_lru_order(self) -> List:
        """Ключи от давно использованного к недавнему."""
        return list(self._entries.keys())

    def touch(self, key) -> bool:
        """
        Отметить обращение к чанку.

        Returns:
            True - чанк в кеше (попадание), False - чанка нет, кеш не изменён
        """
        if key in self._entries:
            self._entries.move_to_end(key)
            return True
        return False

    def insert(self, key, size: float) -> List:
        """
        Положить чанк в кеш, вытеснив минимальное число давно не использованных.

        Args:
            key: Ключ (файл, номер чанка)
            size: Размер чанка

        Returns:
            Список вытесненных ключей
        """
        if size > self._capacity + _OCCUPANCY_EPS:
            raise ConfigurationError(f"Чанк размера {size:.6g} больше ёмкости кеша {self._capacity:.6g}")
        if key in self._entries:
            self._entries.move_to_end(key)
            return []

        evicted = []
        while self._entries and self._occupancy + size > self._capacity + _OCCUPANCY_EPS:
            old_key, old_size = self._entries.popitem(last=False)
            self._occupancy -= old_size
            evicted.append(old_key)
        if not self._entries:
            self._occupancy = 0.0

        self._entries[key] = float(size)
        self._occupancy += size
        return evicted

    def check_invariants(self, max_chunk: Optional[int] = None):
        """
        Проверить инварианты: объём не больше ёмкости, объём равен сумме размеров,
        номера чанков не больше max_chunk (хвост не кешируется).
        """
        if self._occupancy > self._capacity + _OCCUPANCY_EPS:
            raise ChunkCacheError(f"Занятый объём {self._occupancy:.9g} больше ёмкости {self._capacity:.9g}")
        total = math.fsum(self._entries.values())
        if abs(total - self._occupancy) > 1e-6 * max(1.0, self._capacity):
            raise ChunkCacheError(f"Учёт объёма разошёлся: {self._occupancy:.9g} != {total:.9g}")
        if max_chunk is not None:
            for key in self._entries:
                if key[1] >= max_chunk:
                    raise ChunkCacheError(f"В кеше чанк хвоста: {key}")


def lru_touch(state: CacheState, key) -> bool:
    """Обращение к чанку: True при попадании."""
    return state.touch(key)


def lru_insert_with_eviction(state: CacheState, key, size: float) -> List:
    """Вставка чанка с вытеснением; возвращает вытесненные ключи."""
    return state.insert(key, size)


@dataclass
class SimReport:
    """
    Результат одного прогона симуляции.

    accesses/hits - счётчики обращений и попаданий по чанкам, форма (N, M).
    miss_mass/tail_mass - суммарный объём промахов и хвоста (в долях файла).
    """
    requests: int
    warmup_discarded: int
    accesses: np.ndarray
    hits: np.ndarray
    miss_mass: float
    tail_mass: float
    traffic: TrafficResult
    scheme: ChunkScheme
    capacity: float
    seed: int
    stream: int = 0

    @property
    def recorded_requests(self) -> int:
        return self.requests - self.warmup_discarded

    @property
    def hit_rates(self) -> np.ndarray:
        """Эмпирические h[k, i]; NaN, если к чанку не обращались."""
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(self.accesses > 0, self.hits / np.maximum(self.accesses, 1), np.nan)


def _sample_files(rng: np.random.Generator, cdf: np.ndarray, n: int) -> np.ndarray:
    files = np.searchsorted(cdf, rng.random(n), side='right')
    return np.minimum(files, len(cdf) - 1)


def run_simulation(
    catalog: Catalog,
    scheme: ChunkScheme,
    C: float,
    num_requests: int,
    seed: int,
    warmup_fraction: float = WARMUP_FRACTION,
    stream: int = 0,
    check_invariants: bool = False
) -> SimReport:
    """
    Прогнать chunk-LRU на последовательности запросов.

    На каждый запрос: файл i ~ p, точка ухода b ~ R_i, зритель запрашивает
    чанки 1..k, k = min{k: x_k >= b}. Попадание не даёт трафика, промах
    добавляет dx_k S и кладёт чанк в кеш. Если b > nu, хвост (b - nu) S
    идёт из core-сети без обновления кеша.

    Args:
        catalog: Каталог с одинаковыми размерами
        scheme: Схема чанков
        C: Ёмкость кеша
        num_requests: Количество запросов
        seed: Сид
        warmup_fraction: Доля запросов прогрева (не учитываются)
        stream: Номер независимого потока генератора
        check_invariants: Проверять инварианты кеша после каждого запроса

    Returns:
        Отчёт симуляции
    """
    if not catalog.uniform_size:
        raise ValidationError("Симуляция требует одинаковых размеров файлов")
    if num_requests < 1:
        raise ConfigurationError(f"Количество запросов должно быть >= 1: {num_requests}")
    if not (0.0 <= warmup_fraction < 1.0):
        raise ConfigurationError(f"Доля прогрева должна лежать в [0; 1): {warmup_fraction}")

    size = catalog.size
    capacity = float(C) / size
    deltas = scheme.deltas
    if float(deltas.max()) > capacity + _OCCUPANCY_EPS:
        raise ConfigurationError(
            f"Чанк размера {float(deltas.max()):.4g} S не помещается в кеш ёмкости {capacity:.4g} S"
        )

    N, M, nu = scheme.N, catalog.M, scheme.nu
    warmup = int(num_requests * warmup_fraction)
    rng = make_rng(seed, stream)
    cdf = np.cumsum(catalog.popularity)
    cdf[-1] = 1.0
    ends = scheme.x[1:]

    state = CacheState(capacity)
    accesses = np.zeros((N, M), dtype=np.int64)
    hits = np.zeros((N, M), dtype=np.int64)
    miss_mass = 0.0
    tail_mass = 0.0

    logger.info(f"Симуляция: M={M}, N={N}, nu={nu:.4g}, C/S={capacity:.4g}, "
                f"запросов {num_requests}, прогрев {warmup}, seed={seed}, поток {stream}")

    for start in range(0, num_requests, SIM_BATCH_SIZE):
        n = min(SIM_BATCH_SIZE, num_requests - start)
        files = _sample_files(rng, cdf, n)
        points = catalog.sample_abandonment_many(files, rng.random(n))
        last_chunks = np.minimum(np.searchsorted(ends, points, side='left') + 1, N)

        for j in range(n):
            recorded = start + j >= warmup
            i = int(files[j])
            for k in range(int(last_chunks[j])):
                key = (i, k)
                if state.touch(key):
                    if recorded:
                        hits[k, i] += 1
                else:
                    state.insert(key, deltas[k])
                    if recorded:
                        miss_mass += deltas[k]
                if recorded:
                    accesses[k, i] += 1
            if recorded and points[j] > nu:
                tail_mass += points[j] - nu
            if check_invariants:
                state.check_invariants(max_chunk=N)

    recorded_requests = num_requests - warmup
    absolute = size * (miss_mass + tail_mass) / recorded_requests
    baseline = no_cache_traffic(catalog)
    report = SimReport(
        requests=num_requests,
        warmup_discarded=warmup,
        accesses=accesses,
        hits=hits,
        miss_mass=float(miss_mass),
        tail_mass=float(tail_mass),
        traffic=TrafficResult(absolute=absolute, normalized=absolute / baseline, no_cache=baseline),
        scheme=scheme,
        capacity=capacity,
        seed=seed,
        stream=stream
    )
    logger.info(f"Симуляция завершена: B/B_nc = {report.traffic.normalized:.4f}")
    return report


def _simulation_task(task: Tuple, catalog: Catalog, scheme: ChunkScheme, C: float,
                     num_requests: int, warmup_fraction: float) -> SimReport:
    seed, stream = task
    return run_simulation(catalog, scheme, C, num_requests, seed, warmup_fraction, stream=stream)


def run_simulations(
    catalog: Catalog,
    scheme: ChunkScheme,
    C: float,
    num_requests: int,
    seed: int,
    runs: int = 1,
    warmup_fraction: float = WARMUP_FRACTION,
    workers: int = 1
) -> List[SimReport]:
    """
    Независимые прогоны (seed, 0), (seed, 1), ... в пуле процессов.

    Returns:
        Отчёты в порядке номеров прогонов
    """
    if runs < 1:
        raise ConfigurationError(f"Количество прогонов должно быть >= 1: {runs}")
    task = functools.partial(
        _simulation_task,
        catalog=catalog,
        scheme=scheme,
        C=C,
        num_requests=num_requests,
        warmup_fraction=warmup_fraction
    )
    return parallel_map(task, [(seed, stream) for stream in range(runs)], workers)


@dataclass
class DeviationReport:
    """
    Сравнение симуляции с предсказанием Che.

    max_hit_rate_deviation - max |h_sim - h_che| по чанкам самых популярных файлов
    (попадания и обращения сложены по всем прогонам),
    run_hit_rate_deviations - тот же максимум для каждого прогона отдельно,
    traffic_deviation - относительное отклонение нормированного трафика.
    """
    max_hit_rate_deviation: float
    run_hit_rate_deviations: List[float]
    traffic_deviation: float
    sim_traffic: float
    che_traffic: float
    top_files: int
    cache_small: bool
    prediction: ChePrediction
    reports: List[SimReport] = field(default_factory=list)
    hit_rate_threshold: float = HIT_RATE_THRESHOLD
    traffic_threshold: float = TRAFFIC_THRESHOLD

    @property
    def worst_run_hit_rate_deviation(self) -> float:
        """Худший из максимумов по отдельным прогонам (обычно выше сводного)."""
        return max(self.run_hit_rate_deviations, default=0.0)

    @property
    def passed(self) -> bool:
        return (self.max_hit_rate_deviation <= self.hit_rate_threshold
                and self.traffic_deviation <= self.traffic_threshold)

    def to_dict(self) -> Dict:
        return {
            'max_hit_rate_deviation': self.max_hit_rate_deviation,
            'run_hit_rate_deviations': self.run_hit_rate_deviations,
            'worst_run_hit_rate_deviation': self.worst_run_hit_rate_deviation,
            'traffic_deviation': self.traffic_deviation,
            'sim_traffic_normalized': self.sim_traffic,
            'che_traffic_normalized': self.che_traffic,
            'top_files': self.top_files,
            'cache_small': self.cache_small,
            'passed': self.passed
        }


def _max_hit_rate_deviation(empirical: np.ndarray, predicted: np.ndarray, top: int) -> float:
    deviations = np.abs(empirical[:, :top] - predicted[:, :top])
    return float(np.nanmax(deviations)) if np.any(~np.isnan(deviations)) else 0.0


def compare_sim_to_che(
    catalog: Catalog,
    scheme: ChunkScheme,
    C: float,
    num_requests: int,
    seed: int,
    runs: int = 1,
    top_files: Optional[int] = None,
    warmup_fraction: float = WARMUP_FRACTION,
    workers: int = 1
) -> DeviationReport:
    """
    Сравнить симуляцию с приближением Che.

    Попадания суммируются по всем прогонам; трафик усредняется. Максимум
    отклонения отдельного прогона тоже сохраняется: он шире сводного.
    По умолчанию сравниваются чанки верхнего дециля файлов по популярности.

    Args:
        catalog: Каталог с одинаковыми размерами
        scheme: Схема чанков
        C: Ёмкость кеша
        num_requests: Запросов на прогон
        seed: Сид
        runs: Количество независимых прогонов
        top_files: Сколько самых популярных файлов сравнивать
        warmup_fraction: Доля прогрева
        workers: Процессов для прогонов

    Returns:
        Отчёт об отклонениях
    """
    prediction = traffic_chunk_lru(catalog, scheme, C)
    reports = run_simulations(catalog, scheme, C, num_requests, seed, runs, warmup_fraction, workers)

    top = top_files if top_files is not None else max(1, math.ceil(catalog.M / 10))
    top = min(top, catalog.M)

    accesses = sum(r.accesses for r in reports)
    hits = sum(r.hits for r in reports)
    with np.errstate(invalid='ignore', divide='ignore'):
        empirical = np.where(accesses > 0, hits / np.maximum(accesses, 1), np.nan)
    max_hit = _max_hit_rate_deviation(empirical, prediction.hit_rates, top)
    run_max = [_max_hit_rate_deviation(r.hit_rates, prediction.hit_rates, top) for r in reports]

    sim_traffic = float(np.mean([r.traffic.normalized for r in reports]))
    che_traffic = prediction.traffic.normalized
    traffic_dev = abs(sim_traffic - che_traffic) / che_traffic if che_traffic > 0 else abs(sim_traffic)

    cache_small = prediction.capacity < CHE_MIN_CACHE_FILES
    report = DeviationReport(
        max_hit_rate_deviation=max_hit,
        run_hit_rate_deviations=run_max,
        traffic_deviation=traffic_dev,
        sim_traffic=sim_traffic,
        che_traffic=che_traffic,
        top_files=top,
        cache_small=cache_small,
        prediction=prediction,
        reports=reports
    )

    logger.info(f"Симуляция vs Che: max |dh| = {max_hit:.4f} (по прогонам до {report.worst_run_hit_rate_deviation:.4f}), "
                f"отклонение трафика {traffic_dev:.2%}")
    if cache_small:
        logger.warning(f"Кеш на {prediction.capacity:.3g} файла: приближение Che может заметно расходиться")
    elif not report.passed:
        logger.warning("Отклонение симуляции от Che выше порогов")
    return report


def hit_rate_rows(
    source: Union[ChePrediction, SimReport],
    top_files: Optional[int] = None,
    label: Optional[str] = None
) -> List[Dict]:
    """
    Строки CSV с вероятностями попадания: (source, file_rank, chunk, hit_rate).

    Один формат для предсказания Che и для симуляции.
    """
    if isinstance(source, ChePrediction):
        rates, default_label = source.hit_rates, 'che'
    else:
        rates, default_label = source.hit_rates, 'sim'
    name = label or default_label
    N, M = rates.shape
    files = M if top_files is None else min(top_files, M)
    rows = []
    for i in range(files):
        for k in range(N):
            value = rates[k, i]
            rows.append({
                'source': name,
                'file_rank': i + 1,
                'chunk': k + 1,
                'hit_rate': '' if np.isnan(value) else float(value)
            })
    return rows
