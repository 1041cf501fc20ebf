"""
Тестовый скрипт для проверки событийной симуляции chunk-LRU.
"""

import sys

import numpy as np
import pytest

from catalog import (
    RetentionCurve,
    build_table1_scenario,
    fit_lambda_to_watch_time,
    random_catalog,
    synthetic_catalog
)
from che_analytics import ChunkScheme, standard_lru_traffic
from errors import ChunkCacheError, ConfigurationError, ValidationError
from numerics import make_rng
from simulator import (
    CacheState,
    compare_sim_to_che,
    hit_rate_rows,
    lru_insert_with_eviction,
    lru_touch,
    run_simulation,
    run_simulations
)

STEP_AT_08 = RetentionCurve.tabulated([(0.0, 1.0), (0.8, 1.0), (0.8, 0.0), (1.0, 0.0)])


def test_lru_eviction_examples():
    """Тест вытеснения: один давно не использованный чанк уходит."""
    state = CacheState(1.0)
    assert lru_insert_with_eviction(state, 'a', 0.5) == []
    assert lru_insert_with_eviction(state, 'b', 0.5) == []
    assert lru_insert_with_eviction(state, 'c', 0.5) == ['a']
    assert state.keys_lru_order() == ['b', 'c']
    assert state.occupancy == pytest.approx(1.0)


def test_lru_minimal_eviction():
    """Тест: вытесняется минимальное число чанков."""
    state = CacheState(1.0)
    state.insert('a', 0.3)
    state.insert('b', 0.5)
    assert state.insert('c', 0.4) == ['a']
    assert state.keys_lru_order() == ['b', 'c']
    assert state.occupancy == pytest.approx(0.9)


def test_lru_touch():
    """Тест обращения: попадание переносит чанк в конец, промах не меняет кеш."""
    state = CacheState(1.0)
    state.insert('a', 0.4)
    state.insert('b', 0.4)
    assert lru_touch(state, 'a')
    assert state.keys_lru_order() == ['b', 'a']
    assert not lru_touch(state, 'z')
    assert state.keys_lru_order() == ['b', 'a']
    assert 'z' not in state
    assert state.insert('a', 0.4) == []
    assert len(state) == 2


def test_chunk_larger_than_cache():
    """Тест ошибки: чанк больше ёмкости."""
    state = CacheState(0.5)
    with pytest.raises(ConfigurationError):
        state.insert('a', 0.6)

    catalog = synthetic_catalog(3, 0.8, RetentionCurve.constant())
    with pytest.raises(ConfigurationError):
        run_simulation(catalog, ChunkScheme.equal(1), 0.5, 100, seed=1)


def test_invariants_detect_tail_chunk():
    """Тест проверки инвариантов: чанк хвоста в кеше - ошибка."""
    state = CacheState(2.0)
    state.insert((0, 0), 0.5)
    state.check_invariants(max_chunk=2)
    state.insert((0, 2), 0.5)
    with pytest.raises(ChunkCacheError):
        state.check_invariants(max_chunk=2)


def test_random_event_sequence_keeps_invariants():
    """Тест: случайная последовательность обращений не нарушает инварианты."""
    rng = make_rng(5)
    state = CacheState(3.0)
    sizes = rng.uniform(0.01, 0.5, size=500)
    keys = rng.integers(0, 500, size=200_000)
    for step, key in enumerate(keys):
        key = int(key)
        if not state.touch(key):
            state.insert(key, float(sizes[key]))
        if step % 100 == 0:
            state.check_invariants()
    state.check_invariants()
    assert state.occupancy <= 3.0 + 1e-9


@pytest.mark.slow
def test_ten_million_events_keep_invariants():
    """Тест: 10^7 случайных обращений к чанкам, инварианты после каждой операции."""
    N = 4
    rng = make_rng(11)
    state = CacheState(3.0)
    sizes = rng.uniform(0.05, 0.4, size=(200, N))
    batch = 1_000_000
    for _ in range(10):
        files = rng.integers(0, 200, size=batch)
        chunks = rng.integers(0, N, size=batch)
        for i, k in zip(files.tolist(), chunks.tolist()):
            key = (i, k)
            hit = state.touch(key)
            state.check_invariants(max_chunk=N)
            if not hit:
                state.insert(key, float(sizes[i, k]))
                state.check_invariants(max_chunk=N)
    assert state.occupancy <= state.capacity + 1e-9


@pytest.mark.slow
def test_tail_never_cached_in_long_run():
    """Тест: в длинном прогоне с tail drop чанки хвоста не попадают в кеш."""
    catalog = synthetic_catalog(50, 0.8, RetentionCurve.truncated_exponential(-1.36))
    report = run_simulation(catalog, ChunkScheme.equal(5, 0.6), 6.0, 200_000, seed=8, check_invariants=True)
    assert report.tail_mass > 0.0
    assert report.accesses.shape == (5, 50)


def test_single_file_full_cache():
    """Тест: один файл, R = 1, кеш на весь файл - после прогрева трафик нулевой."""
    catalog = synthetic_catalog(1, 0.8, RetentionCurve.constant())
    report = run_simulation(catalog, ChunkScheme.equal(1), 1.0, 1000, seed=1)
    assert report.traffic.absolute == 0.0
    assert report.traffic.normalized == 0.0
    assert report.warmup_discarded == 200
    assert report.hits[0, 0] == 800


def test_tail_drop_deterministic_abandonment():
    """Тест: все уходят на 0.8, nu = 0.5 - трафик равен хвосту 0.3."""
    catalog = synthetic_catalog(1, 0.8, STEP_AT_08)
    report = run_simulation(catalog, ChunkScheme.equal(1, 0.5), 0.5, 1000, seed=2)
    assert report.traffic.absolute == pytest.approx(0.3, abs=1e-12)
    assert report.traffic.normalized == pytest.approx(0.375, abs=1e-9)
    assert report.miss_mass == 0.0


def test_simulation_is_deterministic():
    """Тест воспроизводимости: одинаковые (seed, поток) дают одинаковый результат."""
    catalog = synthetic_catalog(30, 0.8, RetentionCurve.truncated_exponential(-1.0))
    scheme = ChunkScheme.equal(4, 0.7)
    first = run_simulation(catalog, scheme, 5.0, 5000, seed=7)
    second = run_simulation(catalog, scheme, 5.0, 5000, seed=7)
    assert np.array_equal(first.hits, second.hits)
    assert np.array_equal(first.accesses, second.accesses)
    assert first.traffic.absolute == second.traffic.absolute

    other = run_simulation(catalog, scheme, 5.0, 5000, seed=7, stream=1)
    assert not np.array_equal(first.accesses, other.accesses)


def test_traffic_identity_and_invariants():
    """Тест: трафик равен объёму промахов и хвостов, инварианты кеша держатся."""
    catalog = synthetic_catalog(20, 0.8, RetentionCurve.truncated_exponential(-1.36))
    scheme = ChunkScheme.equal(5, 0.6)
    report = run_simulation(catalog, scheme, 4.0, 3000, seed=3, check_invariants=True)

    missed = float(np.dot(scheme.deltas, (report.accesses - report.hits).sum(axis=1)))
    assert report.miss_mass == pytest.approx(missed, rel=1e-9)
    expected = catalog.size * (report.miss_mass + report.tail_mass) / report.recorded_requests
    assert report.traffic.absolute == pytest.approx(expected, rel=1e-12)
    assert np.all(report.hits <= report.accesses)
    assert np.all(np.diff(report.accesses, axis=0) <= 0)


def test_simulation_requires_uniform_sizes():
    """Тест: симуляция требует одинаковых размеров файлов."""
    with pytest.raises(ValidationError):
        run_simulation(random_catalog(5, seed=1), ChunkScheme.equal(1), 2.0, 100, seed=1)


def test_hit_rate_rows():
    """Тест строк CSV вероятностей попадания."""
    catalog = synthetic_catalog(5, 0.8, RetentionCurve.constant())
    report = run_simulation(catalog, ChunkScheme.equal(2), 2.0, 500, seed=1)
    rows = hit_rate_rows(report, top_files=2)
    assert len(rows) == 4
    assert rows[0]['source'] == 'sim'
    assert (rows[0]['file_rank'], rows[0]['chunk']) == (1, 1)


def test_run_simulations_streams():
    """Тест нескольких прогонов: потоки 0..runs-1 по порядку."""
    catalog = synthetic_catalog(10, 0.8, RetentionCurve.constant())
    reports = run_simulations(catalog, ChunkScheme.equal(2), 3.0, 2000, seed=4, runs=3)
    assert [r.stream for r in reports] == [0, 1, 2]
    single = run_simulation(catalog, ChunkScheme.equal(2), 3.0, 2000, seed=4, stream=2)
    assert np.array_equal(reports[2].hits, single.hits)


def test_deviation_reported_per_run():
    """Тест: отчёт сравнения хранит максимум отклонения каждого прогона."""
    catalog = synthetic_catalog(30, 0.8, RetentionCurve.truncated_exponential(-1.0))
    report = compare_sim_to_che(catalog, ChunkScheme.equal(2, 0.8), 5.0, 3000, seed=6, runs=3, top_files=10)
    assert len(report.run_hit_rate_deviations) == 3
    assert all(d >= 0.0 for d in report.run_hit_rate_deviations)
    # Сводная частота - взвешенное среднее частот прогонов
    assert report.max_hit_rate_deviation <= report.worst_run_hit_rate_deviation + 1e-12
    data = report.to_dict()
    assert data['run_hit_rate_deviations'] == report.run_hit_rate_deviations
    assert data['worst_run_hit_rate_deviation'] == max(report.run_hit_rate_deviations)


@pytest.mark.slow
def test_simulation_matches_che():
    """Тест: симуляция согласуется с приближением Che (M = 200, C/S = 50)."""
    lam = fit_lambda_to_watch_time(0.61)
    catalog = synthetic_catalog(200, 0.8, RetentionCurve.truncated_exponential(lam))
    report = compare_sim_to_che(
        catalog, ChunkScheme.equal(4, 0.6), 50.0, 1_000_000, seed=2024, runs=3, top_files=50
    )
    assert not report.cache_small
    assert report.max_hit_rate_deviation <= 0.02
    assert report.traffic_deviation <= 0.03
    assert report.passed
    assert len(report.run_hit_rate_deviations) == 3


@pytest.mark.slow
def test_simulated_standard_lru_pathology():
    """Тест: симуляция обычного LRU с малым кешем даёт трафик больше, чем без кеша."""
    catalog = build_table1_scenario(1000, 0.8, uniform_size=True)
    report = run_simulation(catalog, ChunkScheme.equal(1), 10.0, 200_000, seed=1)
    assert report.traffic.normalized > 1.0
    assert report.traffic.normalized == pytest.approx(
        standard_lru_traffic(catalog, 10.0).traffic.normalized, rel=0.1
    )


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
