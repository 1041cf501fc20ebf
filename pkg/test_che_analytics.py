"""
Тестовый скрипт для проверки аналитики chunk-LRU (приближение Che).
"""

import sys

import numpy as np
import pytest

from catalog import Catalog, RetentionCurve, build_table1_scenario, random_catalog, synthetic_catalog
from che_analytics import (
    ChunkScheme,
    characteristic_time_bounds,
    check_subsplit_condition,
    chunk_lru_nu1,
    infinitesimal_bound,
    nu_direction_derivative,
    optimize_tail_drop,
    solve_characteristic_time,
    standard_lru_traffic,
    traffic_chunk_lru
)
from errors import CapacityError, ValidationError
from numerics import make_rng

CONSTANT = RetentionCurve.constant()
LINEAR_TO_ZERO = RetentionCurve.tabulated([(0.0, 1.0), (0.5, 0.7), (1.0, 0.0)])


def two_constant_files() -> Catalog:
    """Два файла размера 1, p = (0.8, 0.2), R = 1."""
    return Catalog.create([1.0, 1.0], [0.8, 0.2], [CONSTANT, CONSTANT], uniform_size=True)


def table1_uniform(M: int = 200) -> Catalog:
    return build_table1_scenario(M, 0.8, uniform_size=True)


def test_characteristic_time_example():
    """Тест примера: p = (0.8, 0.2), R = 1, C/S = 1 -> t_C = 1.611, B/S = 0.365."""
    catalog = two_constant_files()
    t = solve_characteristic_time(catalog, ChunkScheme.equal(1), 1.0)
    assert t == pytest.approx(1.611, abs=1e-3)
    assert np.exp(-0.8 * t) + np.exp(-0.2 * t) == pytest.approx(1.0, abs=1e-9)

    prediction = traffic_chunk_lru(catalog, ChunkScheme.equal(1), 1.0)
    assert prediction.traffic.absolute == pytest.approx(0.365, abs=2e-3)
    assert prediction.traffic.normalized == pytest.approx(prediction.traffic.absolute)


def test_constant_curves_ignore_chunking():
    """Тест: при R = 1 разбиение на чанки не меняет t_C и трафик."""
    catalog = two_constant_files()
    one = traffic_chunk_lru(catalog, ChunkScheme.equal(1), 1.0)
    two = traffic_chunk_lru(catalog, ChunkScheme.equal(2), 1.0)
    assert two.t_C == pytest.approx(one.t_C, rel=1e-9)
    assert two.traffic.absolute == pytest.approx(one.traffic.absolute, rel=1e-9)

    lower, upper = characteristic_time_bounds(catalog, 1.0, 1.0)
    assert upper == pytest.approx(lower, rel=1e-8)


def test_zero_capacity():
    """Тест: пустой кеш - t_C = 0, трафик без кеша."""
    catalog = two_constant_files()
    prediction = traffic_chunk_lru(catalog, ChunkScheme.equal(3), 0.0)
    assert prediction.t_C == 0.0
    assert np.all(prediction.hit_rates == 0.0)
    assert prediction.traffic.normalized == pytest.approx(1.0)
    assert solve_characteristic_time(catalog, ChunkScheme.equal(1), 1e-9) < 1e-6


def test_capacity_identity():
    """Тест: заполненный объём по Che совпадает с ёмкостью."""
    catalog = table1_uniform()
    prediction = traffic_chunk_lru(catalog, ChunkScheme.equal(4, 0.6), 20.0)
    assert not prediction.saturated
    assert prediction.cached_mass == pytest.approx(20.0, rel=1e-8)
    assert prediction.hit_rates.shape == (4, 200)
    assert np.all(np.diff(prediction.hit_rates, axis=0) <= 1e-15)
    assert np.all((prediction.hit_rates >= 0.0) & (prediction.hit_rates < 1.0))


def test_saturated_cache_tail_only():
    """Тест насыщения: кеш вмещает все чанки, остаётся только хвост."""
    linear = RetentionCurve.truncated_exponential(0.0)
    catalog = Catalog.create([1.0, 1.0], [0.5, 0.5], [linear, linear], uniform_size=True)
    prediction = traffic_chunk_lru(catalog, ChunkScheme.equal(1, 0.5), 1.0)
    assert prediction.saturated
    assert np.isinf(prediction.t_C)
    assert np.all(prediction.hit_rates == 1.0)
    assert prediction.traffic.absolute == pytest.approx(0.125, abs=1e-12)


def test_bounds_order():
    """Тест границ t_C: для убывающих кривых верхняя строго больше нижней."""
    catalog = table1_uniform()
    lower, upper = characteristic_time_bounds(catalog, 0.8, 10.0)
    assert 0.0 < lower < upper
    for N in (2, 5, 17):
        t = solve_characteristic_time(catalog, ChunkScheme.equal(N, 0.8), 10.0)
        assert lower - 1e-9 * lower <= t <= upper + 1e-9 * upper


def test_che_requires_uniform_sizes():
    """Тест: аналитика Che требует одинаковых размеров."""
    catalog = random_catalog(5, seed=1)
    with pytest.raises(ValidationError):
        traffic_chunk_lru(catalog, ChunkScheme.equal(2), 1.0)


def test_chunk_scheme_validation():
    """Тест проверки схемы чанков."""
    with pytest.raises(ValidationError):
        ChunkScheme.from_splits([0.1, 0.5, 1.0])
    with pytest.raises(ValidationError):
        ChunkScheme.equal(0)
    with pytest.raises(ValidationError):
        ChunkScheme.equal(2, 1.5)
    with pytest.raises(ValidationError):
        ChunkScheme(x=np.array([0.0, 0.6, 0.4, 1.0]), nu=1.0)

    scheme = ChunkScheme.equal(4, 0.8)
    assert scheme.N == 4
    assert scheme.deltas == pytest.approx([0.2] * 4)
    finer = scheme.subsplit(3, make_rng(1))
    assert finer.N == 7
    assert set(scheme.x.tolist()) <= set(finer.x.tolist())


def test_standard_lru_is_single_chunk():
    """Тест: обычный LRU совпадает с chunk-LRU при N = 1, nu = 1."""
    catalog = table1_uniform()
    standard = standard_lru_traffic(catalog, 15.0)
    chunk = chunk_lru_nu1(catalog, 15.0, 1)
    assert standard.traffic.absolute == chunk.traffic.absolute
    assert standard.t_C == chunk.t_C


def test_standard_lru_pathology():
    """Тест: обычный LRU с малым кешем даёт трафик больше, чем без кеша."""
    catalog = build_table1_scenario(1000, 0.8, uniform_size=True)
    assert standard_lru_traffic(catalog, 10.0).traffic.normalized > 1.0
    assert chunk_lru_nu1(catalog, 10.0, 20).traffic.normalized < 1.0


def test_subsplit_condition_fails_for_constant_curves():
    """Тест: при R = 1 условие измельчения не выполняется (запас 0)."""
    catalog = synthetic_catalog(20, 0.8, CONSTANT)
    holds, margin = check_subsplit_condition(catalog, 1.0, 5.0, grid=(50, 10))
    assert not holds
    assert margin == 0.0


def test_subsplit_condition_single_file():
    """Тест: один файл, R = 1 - tau, маленький кеш - условие выполняется."""
    catalog = synthetic_catalog(1, 0.0, RetentionCurve.truncated_exponential(0.0))
    holds, margin = check_subsplit_condition(catalog, 1.0, 0.1)
    assert holds
    assert margin > 0.0


@pytest.mark.slow
def test_subsplit_condition_table1():
    """Тест: условие измельчения выполняется для сценария классов видео."""
    catalog = build_table1_scenario(1000, 0.8, uniform_size=True)
    holds, _ = check_subsplit_condition(catalog, 1.0, 50.0)
    assert holds


@pytest.mark.slow
def test_subsplit_reduces_traffic():
    """Тест: на сценарии классов видео (M = 1000, C/S = 50) измельчение чанков уменьшает трафик и увеличивает t_C."""
    catalog = build_table1_scenario(1000, 0.8, uniform_size=True)
    C, nu = 50.0, 1.0
    holds, _ = check_subsplit_condition(catalog, nu, C)
    assert holds

    rng = make_rng(3)
    for _ in range(100):
        coarse = ChunkScheme.random_splits(int(rng.integers(1, 7)), nu, rng)
        fine = coarse.subsplit(int(rng.integers(1, 4)), rng)
        before = traffic_chunk_lru(catalog, coarse, C)
        after = traffic_chunk_lru(catalog, fine, C)
        assert after.traffic.absolute < before.traffic.absolute
        assert after.t_C > before.t_C


def test_infinitesimal_bound_constant_curves():
    """Тест: при R = 1 оптимальный nu* = 1."""
    catalog = synthetic_catalog(50, 0.8, CONSTANT)
    bound = infinitesimal_bound(catalog, 5.0, nu_grid=64)
    assert bound.nu == 1.0
    assert bound.normalized == pytest.approx(standard_lru_traffic(catalog, 5.0).traffic.normalized, rel=1e-6)


@pytest.mark.parametrize('N', [1, 4])
def test_tail_drop_constant_curves(N):
    """Тест: при R = 1 tail drop не нужен, nu* = 1."""
    catalog = synthetic_catalog(50, 0.8, CONSTANT)
    nu_star, _ = optimize_tail_drop(catalog, 5.0, N, nu_grid=64)
    assert nu_star == pytest.approx(1.0, abs=1e-3)


def test_tail_drop_when_everyone_leaves():
    """Тест: если R(1) = 0, выгодно отбросить хвост (nu* < 1)."""
    catalog = synthetic_catalog(100, 0.8, LINEAR_TO_ZERO)
    bound = infinitesimal_bound(catalog, 10.0, nu_grid=64)
    assert bound.nu < 1.0 - 1e-3
    assert nu_direction_derivative(catalog, 1.0 - 1e-3, 10.0) > 0.0


def test_direction_derivative_constant_curves():
    """Тест: при R = 1 производная по nu отрицательна."""
    catalog = two_constant_files()
    assert nu_direction_derivative(catalog, 0.8, 1.0) < 0.0
    assert nu_direction_derivative(catalog, 0.5, 1.0) < 0.0


SWEPT_C_OVER_SM = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5]


@pytest.mark.slow
@pytest.mark.parametrize('c_over_sm', SWEPT_C_OVER_SM)
def test_bound_below_finite_chunking(c_over_sm):
    """Тест: нижняя граница не больше трафика chunk-LRU при любом N, удвоение N не ухудшает."""
    catalog = table1_uniform()
    C = c_over_sm * catalog.total_size
    bound = infinitesimal_bound(catalog, C, nu_grid=32)

    optimal = {}
    for N in (1, 2, 4, 8, 16, 20):
        _, optimal[N] = optimize_tail_drop(catalog, C, N, nu_grid=32)
        assert bound.traffic <= optimal[N] * (1.0 + 1e-9)
    for N in (1, 2, 4, 8):
        assert optimal[2 * N] <= optimal[N] * (1.0 + 1e-9)

    proxy = traffic_chunk_lru(catalog, ChunkScheme.equal(512, bound.nu), C)
    assert bound.traffic <= proxy.traffic.absolute * (1.0 + 1e-9)
    assert proxy.traffic.absolute == pytest.approx(bound.traffic, rel=5e-3)


def _q_scale(catalog: Catalog, nu: float) -> float:
    """Масштаб q(nu): суммарная интенсивность запросов в точке nu."""
    return float(np.sum(catalog.popularity * catalog.retention_at(nu)))


@pytest.mark.slow
@pytest.mark.parametrize('c_over_sm', SWEPT_C_OVER_SM)
def test_bound_stationarity(c_over_sm):
    """Тест: во внутреннем оптимуме nu* производная q(nu*) почти нулевая."""
    catalog = table1_uniform()
    C = c_over_sm * catalog.total_size
    bound = infinitesimal_bound(catalog, C, nu_grid=64)
    q = nu_direction_derivative(catalog, bound.nu, C)
    if bound.nu < 1.0:
        assert abs(q) <= 1e-3 * _q_scale(catalog, bound.nu)
    else:
        assert q <= 0.0


@pytest.mark.slow
def test_table1_nu_star():
    """Тест: для сценария классов видео tail drop внутренний, nu* около 0.9 (M = 500, C/SM = 0.1)."""
    catalog = build_table1_scenario(500, 0.8, uniform_size=True)
    C = 0.1 * catalog.total_size
    bound = infinitesimal_bound(catalog, C, nu_grid=64)
    assert bound.nu < 1.0 - 1e-3
    assert bound.nu == pytest.approx(0.896, abs=0.02)
    q = nu_direction_derivative(catalog, bound.nu, C)
    assert abs(q) <= 1e-3 * _q_scale(catalog, bound.nu)


@pytest.mark.slow
def test_table1_nu_star_grows_with_cache():
    """Тест: nu* для сценария классов видео растёт с размером кеша и остаётся ниже 1."""
    catalog = build_table1_scenario(1000, 0.8, uniform_size=True)
    values = [infinitesimal_bound(catalog, c * catalog.total_size, nu_grid=64).nu
              for c in (0.05, 0.1, 0.2, 0.3, 0.5)]
    assert all(0.85 <= v < 1.0 - 1e-3 for v in values)
    assert all(b >= a - 1e-3 for a, b in zip(values, values[1:]))


def test_tail_drop_validation():
    """Тест ошибок оптимизации tail drop."""
    catalog = synthetic_catalog(20, 0.8, CONSTANT)
    with pytest.raises(NotImplementedError):
        optimize_tail_drop(catalog, 5.0, 4, equal_chunks=False)
    with pytest.raises(CapacityError):
        optimize_tail_drop(catalog, 20.0, 4)
    with pytest.raises(CapacityError):
        infinitesimal_bound(catalog, 0.0)


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
