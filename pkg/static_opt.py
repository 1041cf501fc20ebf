"""
Модуль оптимального статического размещения (waterfilling).
Находит, какую начальную часть каждого видео хранить в кеше, чтобы
минимизировать трафик в core-сети, и считает трафик базовых политик.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import numpy as np
from scipy import optimize

from catalog import Catalog, RetentionCurve, retention_eval
from config import (
    KKT_TOL,
    WATERFILL_CAPACITY_RTOL,
    WATERFILL_MAX_STEPS,
    logger
)
from errors import CapacityError, DomainError, ResourceError

# Наибольший размер задачи для перебора по срезам
BRUTE_FORCE_MAX_SLICES = 1_000_000

# Если наклон R на границе почти нулевой, продолжение строим с наклоном -1
_FLAT_SLOPE = 1e-12


@dataclass
class PrefixAllocation:
    """
    Размещение префиксов: в кеше лежит [0; eta_i] каждого файла.

    Attributes:
        eta: Длины префиксов в [0; 1]
        mu: Уровень воды (порог маргинальной ценности p_i R_i)
        used_capacity: Занятый объём sum S_i eta_i
        method: Каким алгоритмом получено
    """
    eta: np.ndarray
    mu: float
    used_capacity: float
    method: str = ''


@dataclass
class TrafficResult:
    """Трафик в core-сети на один запрос: абсолютный и нормированный на B_nc."""
    absolute: float
    normalized: float
    no_cache: float


def _check_capacity(catalog: Catalog, C: float) -> float:
    total = catalog.total_size
    C = float(C)
    if not math.isfinite(C) or C < 0:
        raise CapacityError(f"Ёмкость кеша должна быть неотрицательной: {C}")
    if C > total * (1.0 + 1e-12):
        raise CapacityError(f"Ёмкость кеша {C:.6g} больше суммарного размера каталога {total:.6g}")
    return min(C, total)


def _allocation(catalog: Catalog, eta: np.ndarray, mu: float, method: str) -> PrefixAllocation:
    eta = np.clip(np.asarray(eta, dtype=float), 0.0, 1.0)
    return PrefixAllocation(
        eta=eta,
        mu=float(mu),
        used_capacity=float(np.dot(catalog.sizes, eta)),
        method=method
    )


def _trivial_allocation(catalog: Catalog, C: float, method: str) -> Optional[PrefixAllocation]:
    if C >= catalog.total_size:
        return _allocation(catalog, np.ones(catalog.M), 0.0, method)
    if C == 0.0:
        return _allocation(catalog, np.zeros(catalog.M), float(catalog.popularity.max()), method)
    return None


def no_cache_traffic(catalog: Catalog) -> float:
    """
    Трафик без кеша: B_nc = sum S_i p_i * (интеграл R_i по [0; 1]).

    Args:
        catalog: Каталог

    Returns:
        Байт на запрос
    """
    return float(np.sum(catalog.sizes * catalog.popularity * catalog.mean_watch_times()))


def traffic_static(
    catalog: Catalog,
    allocation: Union[PrefixAllocation, np.ndarray]
) -> TrafficResult:
    """
    Трафик статического размещения префиксов.

    B = sum S_i p_i * (интеграл R_i по [eta_i; 1]).

    Args:
        catalog: Каталог
        allocation: Размещение или вектор eta

    Returns:
        Абсолютный и нормированный трафик
    """
    eta = allocation.eta if isinstance(allocation, PrefixAllocation) else np.asarray(allocation, dtype=float)
    if eta.shape != (catalog.M,):
        raise DomainError(f"Длина вектора eta {eta.shape} не совпадает с числом файлов {catalog.M}")
    if np.any(eta < 0.0) or np.any(eta > 1.0):
        raise DomainError("Длины префиксов eta должны лежать в [0; 1]")

    absolute = float(np.sum(catalog.sizes * catalog.popularity * catalog.tail_integrals(eta)))
    baseline = no_cache_traffic(catalog)
    return TrafficResult(absolute=absolute, normalized=absolute / baseline, no_cache=baseline)


def _thresholds(catalog: Catalog, mu: float) -> np.ndarray:
    """Пороги y_i = mu / p_i для множеств уровня {p_i R_i >= mu}."""
    p = catalog.popularity
    if mu <= 0.0:
        return np.zeros(catalog.M)
    with np.errstate(divide='ignore'):
        return np.where(p > 0, mu / np.where(p > 0, p, 1.0), np.inf)


def _fill_plateaus(
    sizes: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    C: float
) -> np.ndarray:
    """
    Дозаполнить плато на уровне воды до ёмкости C (по порядку индексов файлов).

    lower - префиксы {p R > mu}, upper - префиксы {p R >= mu}.
    """
    eta = lower.copy()
    residual = C - float(np.dot(sizes, lower))
    if residual <= 0.0:
        return eta
    for i in np.flatnonzero(upper > lower):
        if residual <= 0.0:
            break
        add = min(upper[i] - lower[i], residual / sizes[i])
        eta[i] += add
        residual -= add * sizes[i]
    return eta


def waterfill_bisection(catalog: Catalog, C: float) -> PrefixAllocation:
    """
    Оптимальное размещение: бисекция по уровню воды mu.

    Объём sum S_i |{tau: p_i R_i(tau) >= mu}| не возрастает по mu; ищем mu,
    при котором он совпадает с ёмкостью. Если уровень воды попадает на плато
    кривой, плато заполняется частично, по порядку индексов файлов.

    Args:
        catalog: Каталог
        C: Ёмкость кеша (в единицах размера файлов)

    Returns:
        Оптимальное размещение
    """
    C = _check_capacity(catalog, C)
    trivial = _trivial_allocation(catalog, C, 'bisection')
    if trivial is not None:
        return trivial

    sizes = catalog.sizes
    tol = WATERFILL_CAPACITY_RTOL * min(C, catalog.total_size)
    low, high = 0.0, float(catalog.popularity.max())

    mu = high
    lower = upper = None
    for step in range(1, WATERFILL_MAX_STEPS + 1):
        mu = 0.5 * (low + high)
        thresholds = _thresholds(catalog, mu)
        upper = catalog.level_lengths(thresholds, strict=False)
        lower = catalog.level_lengths(thresholds, strict=True)
        volume_upper = float(np.dot(sizes, upper))
        volume_lower = float(np.dot(sizes, lower))

        if volume_lower > C + tol:
            low = mu
        elif volume_upper < C - tol:
            high = mu
        else:
            logger.debug(f"Waterfilling: mu = {mu:.6g} за {step} шагов")
            break

        if high - low <= 4.0 * np.finfo(float).eps * high:
            # Уровень воды совпал с плато: между low и high лежит только оно
            logger.debug(f"Waterfilling: плато на уровне mu = {high:.6g}")
            mu = high
            lower = catalog.level_lengths(_thresholds(catalog, high), strict=True)
            upper = catalog.level_lengths(_thresholds(catalog, low), strict=False)
            break
    else:
        logger.warning(f"Waterfilling: не сошлось за {WATERFILL_MAX_STEPS} шагов, mu = {mu:.6g}")
        lower = catalog.level_lengths(_thresholds(catalog, high), strict=True)
        upper = catalog.level_lengths(_thresholds(catalog, low), strict=False)

    eta = _fill_plateaus(sizes, lower, upper, C)
    return _allocation(catalog, eta, mu, 'bisection')


def exponential_level(p, lam, mu) -> np.ndarray:
    """
    Длина префикса для усечённой экспоненты в замкнутой форме.

    eta = [-(1/lam) ln(mu (1 - e^{-lam}) / p + e^{-lam})]^+, при lam = 0 это 1 - mu/p.

    Args:
        p: Популярность (или массив)
        lam: Параметр кривой (или массив)
        mu: Уровень воды (или массив)

    Returns:
        eta в [0; 1]
    """
    p, lam, mu = np.broadcast_arrays(
        np.asarray(p, dtype=float), np.asarray(lam, dtype=float), np.asarray(mu, dtype=float)
    )
    ratio = mu / p
    out = np.zeros(p.shape)
    zero = lam == 0.0
    out[zero] = 1.0 - ratio[zero]

    nz = ~zero & (ratio < 1.0)
    l, r = lam[nz], ratio[nz]
    # ln(r (1 - e^{-l}) + e^{-l}) = log1p(expm1(-l) (1 - r))
    with np.errstate(over='ignore', invalid='ignore'):
        out[nz] = -np.log1p(np.expm1(-l) * (1.0 - r)) / l
    return np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0)


def level_by_search(curve: RetentionCurve, p: float, mu: float, tol: float = 1e-13) -> float:
    """
    Длина множества {tau: p R(tau) >= mu} двоичным поиском по монотонной R.

    Не использует обратных функций: служит независимой проверкой замкнутых форм.
    """
    if mu <= 0.0:
        return 1.0
    if p * retention_eval(curve, 0.0) < mu:
        return 0.0
    if p * retention_eval(curve, 1.0) >= mu:
        return 1.0
    low, high = 0.0, 1.0
    while high - low > tol:
        mid = 0.5 * (low + high)
        if p * retention_eval(curve, mid) >= mu:
            low = mid
        else:
            high = mid
    return 0.5 * (low + high)


class _ExtendedLevels:
    """
    Обратная функция к строго убывающему продолжению p_i R_i на всю ось.

    Вне [0; 1] кривая продолжается линейно с наклоном на границе.
    """

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.p = catalog.popularity
        self.r_end = catalog.retention_at(1.0)
        self.slope_start = self._safe_slopes(catalog.retention_derivative_at(0.0))
        self.slope_end = self._safe_slopes(catalog.retention_derivative_at(1.0))

    @staticmethod
    def _safe_slopes(slopes: np.ndarray) -> np.ndarray:
        return np.where(slopes < -_FLAT_SLOPE, slopes, -1.0)

    def __call__(self, mu: float, active: np.ndarray) -> np.ndarray:
        y = np.full(self.catalog.M, 0.5)
        y[active] = mu / self.p[active]
        inside = self.catalog.level_lengths(np.clip(y, 0.0, 1.0))

        out = inside.copy()
        before = y > 1.0
        out[before] = (y[before] - 1.0) / self.slope_start[before]
        after = y < self.r_end
        out[after] = 1.0 + (y[after] - self.r_end[after]) / self.slope_end[after]
        return out[active]


def _solve_interior(levels: _ExtendedLevels, active: np.ndarray, sizes: np.ndarray, capacity: float) -> float:
    def excess(mu: float) -> float:
        return float(np.dot(sizes[active], levels(mu, active))) - capacity

    p = levels.p[active]
    low = float(np.min(p * levels.r_end[active])) - 1.0
    high = float(np.max(p)) + 1.0
    while excess(low) < 0.0:
        low -= 2.0 * (high - low)
    while excess(high) > 0.0:
        high += 2.0 * (high - low)
    return float(optimize.brentq(excess, low, high, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500))


def waterfill_appendix(catalog: Catalog, C: float) -> PrefixAllocation:
    """
    Оптимальное размещение итеративным алгоритмом с активным множеством.

    На каждой итерации решается уравнение sum S_i eta_i(mu) = C^(k) для
    продолженных кривых; файлы с eta < 0 фиксируются в 0, с eta > 1 в 1
    (в зависимости от знака невязки delta), и итерация повторяется.
    Каждая итерация фиксирует хотя бы один файл, поэтому итераций не больше M.

    Args:
        catalog: Каталог
        C: Ёмкость кеша

    Returns:
        Оптимальное размещение
    """
    C = _check_capacity(catalog, C)
    trivial = _trivial_allocation(catalog, C, 'appendix')
    if trivial is not None:
        return trivial

    if catalog.has_plateaus:
        logger.warning("Кривые с плато: алгоритм с активным множеством заменён бисекцией")
        allocation = waterfill_bisection(catalog, C)
        allocation.method = 'appendix'
        return allocation

    sizes = catalog.sizes
    tol = WATERFILL_CAPACITY_RTOL * min(C, catalog.total_size)
    levels = _ExtendedLevels(catalog)

    eta = np.zeros(catalog.M)
    active = np.flatnonzero(catalog.popularity > 0)
    capacity = C
    mu = float(catalog.popularity.max())

    for iteration in range(1, catalog.M + 1):
        if len(active) == 0:
            break
        mu = _solve_interior(levels, active, sizes, capacity)
        extended = levels(mu, active)
        below = extended < 0.0
        above = extended > 1.0
        interior = ~below & ~above

        delta = (float(np.sum(sizes[active][above]))
                 + float(np.dot(sizes[active][interior], extended[interior]))
                 - capacity)
        logger.debug(f"Итерация {iteration}: mu = {mu:.6g}, delta = {delta:.3g}, "
                     f"активных {len(active)}")

        if abs(delta) <= tol:
            eta[active[above]] = 1.0
            eta[active[interior]] = extended[interior]
            active = active[:0]
            break
        if delta > 0.0:
            active = active[~below]
        else:
            eta[active[above]] = 1.0
            capacity -= float(np.sum(sizes[active][above]))
            active = active[~above]

    if len(active) > 0 or abs(float(np.dot(sizes, eta)) - C) > max(tol, 1e-12):
        logger.warning("Алгоритм с активным множеством не сошёлся, используется бисекция")
        allocation = waterfill_bisection(catalog, C)
        allocation.method = 'appendix'
        return allocation

    return _allocation(catalog, eta, mu, 'appendix')


def most_popular_baseline(catalog: Catalog, C: float) -> PrefixAllocation:
    """
    Хранить самые популярные видео целиком; первый не поместившийся - частично.

    Args:
        catalog: Каталог
        C: Ёмкость кеша

    Returns:
        Размещение
    """
    C = _check_capacity(catalog, C)
    eta = np.zeros(catalog.M)
    remaining = C
    for i, size in enumerate(catalog.sizes):
        if remaining <= 0.0:
            break
        if size <= remaining:
            eta[i] = 1.0
            remaining -= size
        else:
            eta[i] = remaining / size
            remaining = 0.0
    return _allocation(catalog, eta, float('nan'), 'most_popular')


def brute_force_allocation_oracle(catalog: Catalog, C: float, grid: int) -> PrefixAllocation:
    """
    Оракул перебором: нарезать файлы на grid срезов и заполнить кеш самыми ценными.

    Ценность среза - p_i R_i(середина среза) на единицу объёма. Так как R_i
    не возрастает, срезы одного файла выбираются префиксом.

    Args:
        catalog: Каталог
        C: Ёмкость кеша
        grid: Число срезов на файл

    Returns:
        Размещение с точностью 1/grid
    """
    if grid < 1:
        raise DomainError(f"Число срезов должно быть >= 1: {grid}")
    if catalog.M * grid > BRUTE_FORCE_MAX_SLICES:
        raise ResourceError(
            f"Слишком большая задача для перебора: {catalog.M} x {grid} > {BRUTE_FORCE_MAX_SLICES}"
        )
    C = _check_capacity(catalog, C)

    midpoints = (np.arange(grid) + 0.5) / grid
    density = catalog.popularity[:, None] * catalog.retention_at(midpoints)
    files = np.repeat(np.arange(catalog.M), grid)
    slices = np.tile(np.arange(grid), catalog.M)
    flat_density = density.ravel()

    order = np.lexsort((slices, files, -flat_density))
    cost = (catalog.sizes / grid)[files[order]]
    filled = np.cumsum(cost)

    taken = np.zeros(len(order))
    full = filled <= C * (1.0 + 1e-12)
    taken[full] = 1.0
    first_partial = int(np.searchsorted(~full, True)) if not full.all() else len(order)
    if first_partial < len(order):
        before = filled[first_partial - 1] if first_partial > 0 else 0.0
        taken[first_partial] = max(0.0, C - before) / cost[first_partial]

    eta = np.zeros(catalog.M)
    np.add.at(eta, files[order], taken / grid)

    selected = np.flatnonzero(taken > 0)
    mu = float(flat_density[order][selected[-1]]) if len(selected) else float(flat_density.max())
    return _allocation(catalog, eta, mu, 'brute_force')


def check_kkt(
    catalog: Catalog,
    allocation: PrefixAllocation,
    capacity: Optional[float] = None,
    tol: float = KKT_TOL
) -> List[str]:
    """
    Проверить условия оптимальности размещения.

    Args:
        catalog: Каталог
        allocation: Размещение
        capacity: Ёмкость (если задана, проверяется sum S_i eta_i = C)
        tol: Допуск

    Returns:
        Список нарушений (пустой - условия выполнены)
    """
    violations = []
    eta, mu = allocation.eta, allocation.mu
    p = catalog.popularity

    if capacity is not None:
        used = float(np.dot(catalog.sizes, eta))
        if abs(used - capacity) > 1e-6 * max(capacity, 1e-300):
            violations.append(f"Занятый объём {used:.9g} != ёмкость {capacity:.9g}")

    at_start = p * catalog.retention_at(0.0)
    at_end = p * catalog.retention_at(1.0)
    at_eta = np.array([p[i] * retention_eval(catalog.curves[i], eta[i]) for i in range(catalog.M)])
    left_of_eta = np.array([
        p[i] * retention_eval(catalog.curves[i], max(eta[i] - 1e-12, 0.0)) for i in range(catalog.M)
    ])

    for i in range(catalog.M):
        if eta[i] >= 1.0:
            if at_end[i] < mu - tol:
                violations.append(f"Файл {i + 1}: eta = 1, но p R(1) = {at_end[i]:.6g} < mu = {mu:.6g}")
        elif eta[i] <= 0.0:
            if at_start[i] > mu + tol:
                violations.append(f"Файл {i + 1}: eta = 0, но p R(0) = {at_start[i]:.6g} > mu = {mu:.6g}")
        else:
            if at_eta[i] > mu + tol or left_of_eta[i] < mu - tol:
                violations.append(
                    f"Файл {i + 1}: 0 < eta = {eta[i]:.6g} < 1, но p R(eta) = {at_eta[i]:.6g} != mu = {mu:.6g}"
                )
    return violations


def allocation_rows(catalog: Catalog, allocation: PrefixAllocation) -> List[Dict]:
    """Строки для CSV: ранг файла, популярность, eta и вклад в трафик."""
    contributions = catalog.sizes * catalog.popularity * catalog.tail_integrals(allocation.eta)
    return [
        {
            'file_rank': i + 1,
            'p': float(catalog.popularity[i]),
            'eta': float(allocation.eta[i]),
            'contribution_to_B': float(contributions[i])
        }
        for i in range(catalog.M)
    ]


def partial_caching_gain(traffic_most_popular: float, traffic_optimal: float) -> float:
    """Относительный выигрыш частичного кеширования над хранением популярных видео целиком."""
    if traffic_most_popular <= 0.0:
        return 0.0
    return (traffic_most_popular - traffic_optimal) / traffic_most_popular
