"""
Тестовый скрипт для проверки описания экспериментов и свипа по размеру кеша.
"""

import json
import os
import sys

import pytest

from errors import ValidationError
from experiment import (
    CHUNK_LRU,
    INFINITESIMAL_BOUND,
    MOST_POPULAR,
    OPTIMAL_STATIC,
    STANDARD_LRU,
    ExperimentSpec,
    ScenarioSpec,
    build_catalogs,
    load_experiment_spec,
    run_experiment,
    summarize
)
from report_writer import format_value, read_csv


def small_spec(output: str, **overrides) -> ExperimentSpec:
    """Небольшой синтетический эксперимент для быстрых проверок."""
    values = dict(
        scenario=ScenarioSpec(kind='synthetic', files=20, alpha=0.8, watch_time=0.61),
        c_over_sm=[0.1, 1.0],
        policies=[OPTIMAL_STATIC, MOST_POPULAR],
        chunks=[1, 4],
        output=output,
        nu_grid_points=16,
        workers=1
    )
    values.update(overrides)
    return ExperimentSpec(**values)


def test_spec_validation():
    """Тест проверки описания эксперимента."""
    small_spec('out').validate()
    with pytest.raises(ValidationError):
        small_spec('out', policies=[]).validate()
    with pytest.raises(ValidationError):
        small_spec('out', policies=['fifo']).validate()
    with pytest.raises(ValidationError):
        small_spec('out', c_over_sm=[0.0]).validate()
    with pytest.raises(ValidationError):
        small_spec('out', c_over_sm=[1.5]).validate()
    with pytest.raises(ValidationError):
        small_spec('out', format='pdf').validate()
    with pytest.raises(ValidationError):
        small_spec('out', scenario=ScenarioSpec(kind='youtube')).validate()


def test_spec_from_dict_rejects_unknown_fields():
    """Тест: неизвестные поля описания - ошибка."""
    with pytest.raises(ValidationError):
        ExperimentSpec.from_dict({'c_over_sm': [0.1], 'cache': 'lru'})
    with pytest.raises(ValidationError):
        ExperimentSpec.from_dict({'scenario': {'kind': 'table1', 'zipf': 0.8}})


def test_load_experiment_spec(tmp_path):
    """Тест загрузки описания из JSON."""
    path = tmp_path / 'spec.json'
    path.write_text(json.dumps({
        'scenario': {'kind': 'synthetic', 'files': 50, 'watch_time': 0.6},
        'c_over_sm': [0.05, 0.2],
        'policies': ['optimal_static'],
        'seeds': [7]
    }), encoding='utf-8')
    spec = load_experiment_spec(str(path))
    assert spec.scenario.files == 50
    assert spec.c_over_sm == [0.05, 0.2]
    assert spec.seeds == [7]

    broken = tmp_path / 'broken.json'
    broken.write_text('{"c_over_sm": [0.1', encoding='utf-8')
    with pytest.raises(ValidationError):
        load_experiment_spec(str(broken))


def test_full_cache_gives_zero_traffic(tmp_path):
    """Тест: при C/SM = 1 оптимальное размещение даёт нулевой трафик."""
    result = run_experiment(small_spec(str(tmp_path)))
    full = [r for r in result.traffic_rows if r['C_over_SM'] == 1.0 and r['policy'] == OPTIMAL_STATIC]
    assert full[0]['B_normalized'] == 0.0
    assert len(result.allocation_rows) == 2 * 20
    assert [r['policy'] for r in result.traffic_rows] == [OPTIMAL_STATIC, MOST_POPULAR] * 2


def test_csv_schema_and_determinism(tmp_path):
    """Тест: CSV начинаются со строки схемы и воспроизводимы байт в байт."""
    first = run_experiment(small_spec(str(tmp_path / 'a')))
    second = run_experiment(small_spec(str(tmp_path / 'b')))
    for name in ('traffic', 'allocation', 'nu_star', 'che_sweep'):
        with open(first.files[name], 'rb') as f:
            content = f.read()
        with open(second.files[name], 'rb') as f:
            assert f.read() == content
        assert content.startswith(f'# schema: {name} v1\r\n'.encode())

    rows = read_csv(first.files['traffic'])
    assert list(rows[0]) == ['C_over_SM', 'policy', 'N', 'B_normalized']
    assert rows[0]['N'] == 'NA'


def test_infeasible_points_give_na_rows(tmp_path):
    """Тест: недопустимая точка свипа даёт строку NA, свип продолжается."""
    spec = small_spec(str(tmp_path), policies=[CHUNK_LRU, INFINITESIMAL_BOUND, STANDARD_LRU])
    result = run_experiment(spec)

    full = [r for r in result.traffic_rows if r['C_over_SM'] == 1.0]
    assert [r['policy'] for r in full] == [CHUNK_LRU, CHUNK_LRU, INFINITESIMAL_BOUND, STANDARD_LRU]
    assert all(r['B_normalized'] is None for r in full[:3])
    assert full[3]['B_normalized'] == pytest.approx(0.0, abs=1e-12)

    feasible = [r for r in result.traffic_rows if r['C_over_SM'] == 0.1]
    assert all(r['B_normalized'] is not None for r in feasible)
    assert len(result.nu_rows) == 2 * 3

    rows = read_csv(result.files['traffic'])
    assert [r['B_normalized'] for r in rows if r['C_over_SM'] == '1'][:3] == ['NA'] * 3


def test_chunk_policies_need_uniform_sizes(tmp_path):
    """Тест: chunk-LRU на каталоге из файла с разными размерами - ошибка."""
    path = tmp_path / 'catalog.json'
    path.write_text(json.dumps({'files': [
        {'size': 1.0, 'popularity': 0.6, 'retention': {'kind': 'constant'}},
        {'size': 2.0, 'popularity': 0.4, 'retention': {'kind': 'constant'}},
    ]}), encoding='utf-8')
    spec = small_spec(str(tmp_path), scenario=ScenarioSpec(kind='file', catalog_path=str(path)),
                      policies=[CHUNK_LRU])
    with pytest.raises(ValidationError):
        run_experiment(spec)


def test_build_catalogs_table1():
    """Тест: для сценария классов строится отдельный каталог с одинаковыми размерами."""
    static, che = build_catalogs(ScenarioSpec(kind='table1', files=100), seed=1)
    assert not static.uniform_size
    assert che.uniform_size
    assert list(static.popularity) == list(che.popularity)


def test_summarize_peak_gain():
    """Тест итогов: пиковый выигрыш над хранением популярных видео целиком."""
    rows = [
        {'C_over_SM': 0.1, 'policy': OPTIMAL_STATIC, 'N': '', 'B_normalized': 0.6},
        {'C_over_SM': 0.1, 'policy': MOST_POPULAR, 'N': '', 'B_normalized': 0.8},
        {'C_over_SM': 0.2, 'policy': OPTIMAL_STATIC, 'N': '', 'B_normalized': 0.3},
        {'C_over_SM': 0.2, 'policy': MOST_POPULAR, 'N': '', 'B_normalized': 0.6},
        {'C_over_SM': 0.5, 'policy': OPTIMAL_STATIC, 'N': '', 'B_normalized': None},
    ]
    summary = summarize(rows)
    assert summary['peak_gain'] == pytest.approx(0.5)
    assert summary['peak_gain_C_over_SM'] == 0.2
    assert summarize([])['peak_gain'] is None


def test_excel_summary(tmp_path):
    """Тест: формат xlsx дополнительно пишет сводную книгу."""
    result = run_experiment(small_spec(str(tmp_path), format='xlsx', c_over_sm=[0.1]))
    assert os.path.exists(result.files['summary'])


def test_format_value():
    """Тест форматирования ячеек CSV."""
    assert format_value(None) == 'NA'
    assert format_value(float('nan')) == 'NA'
    assert format_value(0.1) == '0.1'
    assert format_value(1.0) == '1'
    assert format_value(True) == 'true'
    assert format_value('inf') == 'inf'


@pytest.mark.slow
def test_partial_caching_gain_table1(tmp_path):
    """Тест: оптимальное частичное кеширование лучше хранения популярных видео целиком."""
    spec = ExperimentSpec(
        scenario=ScenarioSpec(kind='table1', files=2000, alpha=0.8),
        c_over_sm=[0.01, 0.02, 0.05, 0.1, 0.2, 0.5],
        policies=[OPTIMAL_STATIC, MOST_POPULAR],
        output=str(tmp_path),
        workers=1
    )
    result = run_experiment(spec, write=False)
    by_point = {}
    for row in result.traffic_rows:
        by_point.setdefault(row['C_over_SM'], {})[row['policy']] = row['B_normalized']
    for values in by_point.values():
        assert values[OPTIMAL_STATIC] < values[MOST_POPULAR]
    assert result.summary['peak_gain'] >= 0.2


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
