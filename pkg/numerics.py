"""
Численные утилиты: квадратуры, поиск корня монотонной функции,
уточнение минимума по сетке и генераторы случайных чисел.
"""

import warnings
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize

from config import QUAD_EPSABS, QUAD_EPSREL, QUAD_LIMIT, ROOT_RTOL, logger
from errors import DomainError


def integrate_scalar(
    fn: Callable[[float], float],
    a: float,
    b: float,
    points: Optional[Iterable[float]] = None,
    epsabs: float = QUAD_EPSABS
) -> float:
    """
    Адаптивная квадратура scipy.integrate.quad на отрезке [a; b].

    Args:
        fn: Подынтегральная функция одного аргумента
        a: Левая граница
        b: Правая граница
        points: Точки излома подынтегральной функции (узлы таблиц)
        epsabs: Абсолютная точность

    Returns:
        Значение интеграла (0 при b <= a)
    """
    if b <= a:
        return 0.0

    inner = None
    if points is not None:
        inner = sorted({float(x) for x in points if a < x < b})

    with warnings.catch_warnings():
        warnings.simplefilter('error', integrate.IntegrationWarning)
        try:
            value, _ = integrate.quad(
                fn, a, b,
                epsabs=epsabs,
                epsrel=QUAD_EPSREL,
                limit=QUAD_LIMIT,
                points=inner or None
            )
        except integrate.IntegrationWarning as e:
            # Повторяем без превращения предупреждения в ошибку
            logger.debug(f"quad на [{a:.6g}; {b:.6g}]: {e}")
            warnings.simplefilter('ignore', integrate.IntegrationWarning)
            value, _ = integrate.quad(
                fn, a, b,
                epsabs=epsabs,
                epsrel=QUAD_EPSREL,
                limit=QUAD_LIMIT,
                points=inner or None
            )
    return float(value)


def increasing_root(
    fn: Callable[[float], float],
    initial_upper: float = 1.0,
    max_doublings: int = 1100
) -> float:
    """
    Найти корень возрастающей функции на [0; +inf), если fn(0) <= 0.

    Верхняя граница удваивается, пока fn не станет положительной,
    затем корень уточняется методом Брента.

    Args:
        fn: Строго возрастающая функция
        initial_upper: Начальная верхняя граница
        max_doublings: Предел удвоений

    Returns:
        Корень t >= 0
    """
    low_value = fn(0.0)
    if low_value >= 0.0:
        return 0.0

    upper = max(float(initial_upper), np.finfo(float).tiny)
    for _ in range(max_doublings):
        if fn(upper) > 0.0:
            break
        upper *= 2.0
    else:
        raise DomainError(f"Не удалось найти верхнюю границу корня (последняя: {upper:.3g})")

    return float(optimize.brentq(fn, 0.0, upper, rtol=ROOT_RTOL, xtol=1e-300, maxiter=500))


def grid_then_golden(
    objective: Callable[[float], float],
    grid: Sequence[float],
    xtol: float
) -> Tuple[float, float]:
    """
    Минимизация функции одного аргумента: перебор по сетке, затем золотое сечение.

    Args:
        objective: Минимизируемая функция
        grid: Возрастающая сетка точек
        xtol: Требуемая точность по аргументу

    Returns:
        (аргумент минимума, значение минимума)
    """
    grid = np.asarray(grid, dtype=float)
    values = np.array([objective(x) for x in grid])
    finite = np.isfinite(values)
    if not finite.any():
        raise DomainError("Целевая функция не определена ни в одной точке сетки")

    best = int(np.nanargmin(np.where(finite, values, np.inf)))
    best_x, best_value = float(grid[best]), float(values[best])

    if 0 < best < len(grid) - 1:
        bracket = (grid[best - 1], grid[best], grid[best + 1])
        try:
            result = optimize.minimize_scalar(
                objective,
                bracket=bracket,
                method='golden',
                tol=xtol / max(abs(grid[best]), xtol)
            )
            if np.isfinite(result.fun) and result.fun < best_value:
                best_x, best_value = float(result.x), float(result.fun)
        except ValueError as e:
            logger.warning(f"Золотое сечение не применимо около {best_x:.6g}: {e}")

    return best_x, best_value


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """
    Создать генератор на основе счётчика (Philox) для потока (seed, stream).

    Args:
        seed: Сид эксперимента
        stream: Номер независимого потока (номер прогона)

    Returns:
        Генератор numpy
    """
    if seed < 0 or stream < 0:
        raise DomainError(f"Сид и номер потока должны быть неотрицательны: {seed}, {stream}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))
