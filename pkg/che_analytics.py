"""
Аналитика chunk-LRU на основе приближения Che.
Характеристическое время кеша, вероятности попадания по чанкам,
трафик в core-сеть, нижняя граница для бесконечно малых чанков
и поиск оптимального tail drop factor.
"""

import functools
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from catalog import Catalog
from config import (
    HIT_RATE_CLAMP,
    NU_GRID_POINTS,
    NU_TOL,
    SUBSPLIT_T_POINTS,
    SUBSPLIT_TAU_POINTS,
    logger
)
from errors import CapacityError, DomainError, InfiniteCharacteristicTimeError, ValidationError
from numerics import grid_then_golden, increasing_root, integrate_scalar
from static_opt import TrafficResult, no_cache_traffic

# Допуск сравнения ёмкости с кешируемой массой
_MASS_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class ChunkScheme:
    """
    Разбиение файла на чанки: 0 = x_0 <= x_1 <= ... <= x_N = nu.

    Первые N чанков кешируются, хвост [nu; 1] не кешируется никогда.
    """
    x: np.ndarray
    nu: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        nu = float(self.nu)
        if x.ndim != 1 or len(x) < 2:
            raise ValidationError("Схеме чанков нужно не менее двух точек разбиения (N >= 1)")
        if not (0.0 < nu <= 1.0):
            raise ValidationError(f"Tail drop factor должен лежать в (0; 1]: {nu}")
        if x[0] != 0.0:
            raise ValidationError(f"Первая точка разбиения должна быть 0: {x[0]}")
        if abs(x[-1] - nu) > 1e-12:
            raise ValidationError(f"Последняя точка разбиения {x[-1]} не совпадает с nu = {nu}")
        if np.any(np.diff(x) < 0):
            raise ValidationError("Точки разбиения должны быть упорядочены")
        x[-1] = nu
        x.setflags(write=False)
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'nu', nu)

    @classmethod
    def equal(cls, N: int, nu: float = 1.0) -> 'ChunkScheme':
        """N чанков одинакового размера на [0; nu]."""
        if N < 1:
            raise ValidationError(f"Количество чанков должно быть >= 1: {N}")
        return cls(x=np.linspace(0.0, nu, int(N) + 1), nu=nu)

    @classmethod
    def from_splits(cls, x: Sequence[float]) -> 'ChunkScheme':
        x = np.asarray(x, dtype=float)
        return cls(x=x, nu=float(x[-1]))

    @classmethod
    def random_splits(cls, N: int, nu: float, rng: np.random.Generator) -> 'ChunkScheme':
        """Случайное разбиение [0; nu] на N чанков."""
        if N < 1:
            raise ValidationError(f"Количество чанков должно быть >= 1: {N}")
        inner = np.sort(rng.uniform(0.0, nu, size=int(N) - 1))
        return cls(x=np.concatenate(([0.0], inner, [nu])), nu=nu)

    def subsplit(self, extra: int, rng: np.random.Generator) -> 'ChunkScheme':
        """
        Случайное измельчение: добавить extra новых точек разбиения.

        Args:
            extra: Количество новых точек (>= 1)
            rng: Генератор

        Returns:
            Схема, точки которой - строгое надмножество точек текущей
        """
        if extra < 1:
            raise ValidationError(f"Измельчение должно добавлять хотя бы одну точку: {extra}")
        points = set(self.x.tolist())
        while len(points) < len(set(self.x.tolist())) + extra:
            points.add(float(rng.uniform(0.0, self.nu)))
        return ChunkScheme(x=np.array(sorted(points)), nu=self.nu)

    @property
    def N(self) -> int:
        return len(self.x) - 1

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.x)

    @property
    def starts(self) -> np.ndarray:
        """Начала чанков x_{k-1}, k = 1..N."""
        return self.x[:-1]

    def to_dict(self):
        return {'x': self.x.tolist(), 'nu': self.nu}


@dataclass
class ChePrediction:
    """
    Предсказание Che для chunk-LRU.

    Attributes:
        t_C: Характеристическое время (inf при насыщении)
        hit_rates: h[k, i], форма (N, M)
        traffic: Трафик в core-сеть
        scheme: Схема чанков
        capacity: Ёмкость C/S в долях файла
        saturated: Ёмкость достигла кешируемой массы
    """
    t_C: float
    hit_rates: np.ndarray
    traffic: TrafficResult
    scheme: ChunkScheme
    capacity: float
    saturated: bool = False

    @property
    def cached_mass(self) -> float:
        """sum_k dx_k sum_i h_{k,i} (должно совпадать с C/S)."""
        return float(np.dot(self.scheme.deltas, self.hit_rates.sum(axis=1)))


class InfinitesimalBound(NamedTuple):
    """Нижняя граница трафика chunk-LRU (бесконечно малые чанки)."""
    traffic: float
    nu: float
    t_C: float
    normalized: float


def _capacity_in_files(catalog: Catalog, C: float) -> float:
    if not catalog.uniform_size:
        raise ValidationError("Аналитика Che требует одинаковых размеров файлов")
    C = float(C)
    if not np.isfinite(C) or C < 0:
        raise CapacityError(f"Ёмкость кеша должна быть неотрицательной: {C}")
    return C / catalog.size


def _chunk_rates(catalog: Catalog, scheme: ChunkScheme) -> np.ndarray:
    """Интенсивности запросов к чанкам a[k, i] = p_i R_i(x_{k-1}), форма (N, M)."""
    return (catalog.popularity[:, None] * catalog.retention_at(scheme.starts)).T


def _cacheable_mass(rates: np.ndarray, deltas: np.ndarray) -> float:
    return float(np.dot(deltas, (rates > 0).sum(axis=1)))


def _hit_rates(rates: np.ndarray, t: float) -> np.ndarray:
    if np.isinf(t):
        return (rates > 0).astype(float)
    return np.minimum(-np.expm1(-rates * t), HIT_RATE_CLAMP)


def _solve_for_rates(rates: np.ndarray, deltas: np.ndarray, c: float) -> float:
    if c <= 0.0:
        return 0.0
    mass = _cacheable_mass(rates, deltas)
    if c >= mass * (1.0 - _MASS_RTOL):
        raise InfiniteCharacteristicTimeError(c, mass)

    def occupancy_gap(t: float) -> float:
        return float(np.dot(deltas, (-np.expm1(-rates * t)).sum(axis=1))) - c

    return increasing_root(occupancy_gap, initial_upper=1.0 / max(float(rates.max()), 1e-300))


def solve_characteristic_time(catalog: Catalog, scheme: ChunkScheme, C: float) -> float:
    """
    Характеристическое время t_C из уравнения ёмкости.

    C/S = sum_k dx_k sum_i (1 - exp(-p_i R_i(x_{k-1}) t_C)).

    Args:
        catalog: Каталог с одинаковыми размерами
        scheme: Схема чанков
        C: Ёмкость кеша

    Returns:
        t_C (в единицах числа запросов)
    """
    c = _capacity_in_files(catalog, C)
    t = _solve_for_rates(_chunk_rates(catalog, scheme), scheme.deltas, c)
    logger.debug(f"t_C = {t:.6g} (N={scheme.N}, nu={scheme.nu:.4g}, C/S={c:.4g})")
    return t


class _RetentionProfile:
    """
    Интенсивности p_i R_i(tau) как функция tau с кешированием.

    Квадратуры по tau для разных t_C используют одни и те же узлы.
    """

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.breakpoints = catalog.breakpoints
        self._rates = functools.lru_cache(maxsize=8192)(self._compute)

    def _compute(self, tau: float) -> np.ndarray:
        rates = self.catalog.popularity * self.catalog.retention_at(tau)
        rates.setflags(write=False)
        return rates

    def rates(self, tau: float) -> np.ndarray:
        return self._rates(float(tau))

    def integrate(self, fn, nu: float) -> float:
        """Интеграл sum_i fn(a_i(tau)) по [0; nu]."""
        return integrate_scalar(lambda tau: float(np.sum(fn(self.rates(tau)))), 0.0, nu, points=self.breakpoints)

    def cacheable_mass(self, nu: float) -> float:
        return self.integrate(lambda a: a > 0, nu)

    def occupancy(self, nu: float, t: float) -> float:
        return self.integrate(lambda a: -np.expm1(-a * t), nu)

    def miss_traffic(self, nu: float, t: float) -> float:
        if np.isinf(t):
            return 0.0
        return self.integrate(lambda a: a * np.exp(-a * t), nu)

    def second_moment(self, nu: float, t: float) -> float:
        return self.integrate(lambda a: a * a * np.exp(-a * t), nu)

    def tail_traffic(self, nu: float) -> float:
        return float(np.dot(self.catalog.popularity, self.catalog.tail_integrals(nu)))

    def solve_t(self, nu: float, c: float) -> float:
        """t_C для бесконечно малых чанков на [0; nu]."""
        if c <= 0.0:
            return 0.0
        mass = self.cacheable_mass(nu)
        if c >= mass * (1.0 - _MASS_RTOL):
            raise InfiniteCharacteristicTimeError(c, mass)
        return increasing_root(
            lambda t: self.occupancy(nu, t) - c,
            initial_upper=1.0 / float(self.catalog.popularity.max())
        )


def characteristic_time_bounds(catalog: Catalog, nu: float, C: float) -> Tuple[float, float]:
    """
    Границы t_C для любой схемы чанков на [0; nu].

    Нижняя - один чанк [0; nu], верхняя - бесконечно малые чанки.

    Args:
        catalog: Каталог с одинаковыми размерами
        nu: Tail drop factor
        C: Ёмкость кеша

    Returns:
        (t_lower, t_upper)
    """
    lower = solve_characteristic_time(catalog, ChunkScheme.equal(1, nu), C)
    upper = _RetentionProfile(catalog).solve_t(nu, _capacity_in_files(catalog, C))
    return lower, max(lower, upper)


def traffic_chunk_lru(catalog: Catalog, scheme: ChunkScheme, C: float) -> ChePrediction:
    """
    Трафик chunk-LRU в приближении Che.

    B = S sum_i p_i (sum_k R_i(x_{k-1}) (1 - h_{k,i}) dx_k + интеграл R_i по [nu; 1]).
    Если ёмкость достигает кешируемой массы, кеш насыщается: t_C = inf,
    все кешируемые чанки попадают, остаётся только трафик хвоста.

    Args:
        catalog: Каталог с одинаковыми размерами
        scheme: Схема чанков
        C: Ёмкость кеша

    Returns:
        Предсказание Che
    """
    c = _capacity_in_files(catalog, C)
    rates = _chunk_rates(catalog, scheme)
    deltas = scheme.deltas

    saturated = False
    try:
        t = _solve_for_rates(rates, deltas, c)
    except InfiniteCharacteristicTimeError as e:
        logger.info(f"Кеш насыщен (C/S = {c:.4g}, кешируемая масса {e.cacheable_mass:.4g}): "
                    f"остаётся только трафик хвоста")
        t = float('inf')
        saturated = True

    hits = _hit_rates(rates, t)
    chunk_part = float(np.dot(deltas, (rates * (1.0 - hits)).sum(axis=1)))
    tail_part = float(np.dot(catalog.popularity, catalog.tail_integrals(scheme.nu)))
    absolute = catalog.size * (chunk_part + tail_part)
    baseline = no_cache_traffic(catalog)

    return ChePrediction(
        t_C=t,
        hit_rates=hits,
        traffic=TrafficResult(absolute=absolute, normalized=absolute / baseline, no_cache=baseline),
        scheme=scheme,
        capacity=c,
        saturated=saturated
    )


def standard_lru_traffic(catalog: Catalog, C: float) -> ChePrediction:
    """Обычный LRU по целым файлам: один чанк, nu = 1."""
    return traffic_chunk_lru(catalog, ChunkScheme.equal(1, 1.0), C)


def chunk_lru_nu1(catalog: Catalog, C: float, N: int) -> ChePrediction:
    """chunk-LRU с N равными чанками без отбрасывания хвоста."""
    return traffic_chunk_lru(catalog, ChunkScheme.equal(N, 1.0), C)


def check_subsplit_condition(
    catalog: Catalog,
    nu: float,
    C: float,
    grid: Tuple[int, int] = (SUBSPLIT_TAU_POINTS, SUBSPLIT_T_POINTS)
) -> Tuple[bool, float]:
    """
    Достаточное условие выгоды от измельчения чанков.

    xi(tau, t) = sum_i p_i R_i(tau) exp(-p_i R_i(tau) t) должна строго убывать
    по tau на [0; nu] для всех t из [t_lower; t_upper]. Проверяется конечными
    разностями на сетке.

    Args:
        catalog: Каталог с одинаковыми размерами
        nu: Tail drop factor
        C: Ёмкость кеша
        grid: (точек по tau, точек по t)

    Returns:
        (выполняется ли условие, минимальное убывание между соседними узлами)
    """
    tau_points, t_points = grid
    t_lower, t_upper = characteristic_time_bounds(catalog, nu, C)

    taus = np.linspace(0.0, nu, tau_points)
    rates = catalog.popularity[:, None] * catalog.retention_at(taus)
    times = np.linspace(t_lower, t_upper, t_points)

    margin = np.inf
    for t in times:
        xi = np.sum(rates * np.exp(-rates * t), axis=0)
        margin = min(margin, float(np.min(xi[:-1] - xi[1:])))

    holds = margin > 0.0
    logger.debug(f"Условие измельчения: {holds}, запас {margin:.3g}, t в [{t_lower:.4g}; {t_upper:.4g}]")
    return holds, margin


def _nu_grid(c: float, M: int, nu_grid: Optional[Union[int, Sequence[float]]]) -> np.ndarray:
    if nu_grid is None:
        nu_grid = NU_GRID_POINTS
    if isinstance(nu_grid, (int, np.integer)):
        if nu_grid < 2:
            raise DomainError(f"Сетке по nu нужно не менее двух точек: {nu_grid}")
        return np.linspace(c / M, 1.0, int(nu_grid))
    grid = np.asarray(nu_grid, dtype=float)
    if np.any(grid <= 0.0) or np.any(grid > 1.0):
        raise DomainError("Точки сетки по nu должны лежать в (0; 1]")
    return np.sort(grid)


def _feasible_capacity(catalog: Catalog, C: float) -> float:
    c = _capacity_in_files(catalog, C)
    if not (0.0 < c < catalog.M):
        raise CapacityError(f"Ёмкость C/S = {c:.6g} должна лежать в (0; M = {catalog.M})")
    return c


def infinitesimal_bound(
    catalog: Catalog,
    C: float,
    nu_grid: Optional[Union[int, Sequence[float]]] = None
) -> InfinitesimalBound:
    """
    Нижняя граница трафика chunk-LRU при бесконечно малых чанках.

    Для каждого nu из сетки решается интегральное уравнение ёмкости и
    считается трафик; лучшая точка уточняется золотым сечением.

    Args:
        catalog: Каталог с одинаковыми размерами
        C: Ёмкость кеша
        nu_grid: Число точек на [C/(MS); 1] или явная сетка

    Returns:
        (трафик, nu*, t_C*, нормированный трафик)
    """
    c = _feasible_capacity(catalog, C)
    profile = _RetentionProfile(catalog)
    grid = _nu_grid(c, catalog.M, nu_grid)
    times = {}

    def objective(nu: float) -> float:
        nu = min(max(float(nu), grid[0]), 1.0)
        try:
            t = profile.solve_t(nu, c)
        except InfiniteCharacteristicTimeError:
            t = float('inf')
        times[nu] = t
        return profile.miss_traffic(nu, t) + profile.tail_traffic(nu)

    nu_star, value = grid_then_golden(objective, grid, NU_TOL)
    nu_star = min(max(nu_star, grid[0]), 1.0)
    t_star = times.get(nu_star)
    if t_star is None:
        objective(nu_star)
        t_star = times[nu_star]

    absolute = catalog.size * value
    normalized = absolute / no_cache_traffic(catalog)
    logger.info(f"Нижняя граница (бесконечно малые чанки): C/S = {c:.4g}, nu* = {nu_star:.4f}, "
                f"B/B_nc = {normalized:.4f}")
    return InfinitesimalBound(traffic=absolute, nu=nu_star, t_C=t_star, normalized=normalized)


def optimize_tail_drop(
    catalog: Catalog,
    C: float,
    N: int,
    equal_chunks: bool = True,
    nu_grid: Optional[Union[int, Sequence[float]]] = None
) -> Tuple[float, float]:
    """
    Оптимальный tail drop factor для chunk-LRU с N равными чанками.

    Args:
        catalog: Каталог с одинаковыми размерами
        C: Ёмкость кеша
        N: Количество чанков
        equal_chunks: Только равные чанки (произвольные разбиения не поддерживаются)
        nu_grid: Число точек или явная сетка по nu

    Returns:
        (nu*, трафик при nu*)
    """
    if not equal_chunks:
        raise NotImplementedError("Оптимизация по произвольным разбиениям не реализована")
    if N < 1:
        raise ValidationError(f"Количество чанков должно быть >= 1: {N}")
    c = _feasible_capacity(catalog, C)
    grid = _nu_grid(c, catalog.M, nu_grid)

    def objective(nu: float) -> float:
        nu = min(max(float(nu), grid[0]), 1.0)
        return traffic_chunk_lru(catalog, ChunkScheme.equal(N, nu), C).traffic.absolute

    nu_star, value = grid_then_golden(objective, grid, NU_TOL)
    nu_star = min(max(nu_star, grid[0]), 1.0)
    logger.info(f"Tail drop: N = {N}, C/S = {c:.4g}, nu* = {nu_star:.4f}")
    return nu_star, value


def nu_direction_derivative(catalog: Catalog, nu: float, C: float) -> float:
    """
    Производная трафика по nu вдоль ограничения ёмкости (бесконечно малые чанки).

    q(nu) = -sum_i (1 - e^{-a_i(nu) t}) a_i(nu)
            + A * sum_i (1 - e^{-a_i(nu) t}) / B,
    где a_i = p_i R_i, A = интеграл sum a_i^2 e^{-a_i t}, B = интеграл sum a_i e^{-a_i t}
    по [0; nu]. При насыщенном кеше остаётся только первое слагаемое.

    Args:
        catalog: Каталог с одинаковыми размерами
        nu: Tail drop factor
        C: Ёмкость кеша

    Returns:
        q(nu)
    """
    if not (0.0 < nu <= 1.0):
        raise DomainError(f"nu должно лежать в (0; 1]: {nu}")
    c = _capacity_in_files(catalog, C)
    profile = _RetentionProfile(catalog)
    try:
        t = profile.solve_t(nu, c)
    except InfiniteCharacteristicTimeError:
        t = float('inf')

    a = profile.rates(nu)
    if np.isinf(t):
        return -float(np.sum(a[a > 0]))

    filled = -np.expm1(-a * t)
    direct = -float(np.sum(filled * a))
    second = profile.second_moment(nu, t)
    first = profile.miss_traffic(nu, t)
    if first <= 0.0:
        return direct
    return direct + second * float(np.sum(filled)) / first
