"""
Модуль каталога видео.
Кривые удержания аудитории (retention), популярность по закону Zipf,
сценарий с классами видео из реальных данных и выборка точки ухода зрителя.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from config import logger
from errors import DomainError, ValidationError
from numerics import integrate_scalar, make_rng

CONSTANT = 'constant'
TRUNCATED_EXPONENTIAL = 'truncated_exponential'
TABULATED = 'tabulated'

CURVE_KINDS = (CONSTANT, TRUNCATED_EXPONENTIAL, TABULATED)

CATALOG_SCHEMA_VERSION = 1

# Ниже этого |lambda| используется разложение в ряд вокруг lambda = 0
_SMALL_LAMBDA = 1e-6

# Точность интегралов от табличных кривых
_TABULATED_EPSABS = 1e-10


@dataclass(frozen=True)
class RetentionCurve:
    """
    Кривая удержания R(tau): доля зрителей, досмотревших до позиции tau.

    kind:
        constant - R = 1 (все смотрят до конца)
        truncated_exponential - R(tau) = (e^{-lam*tau} - e^{-lam}) / (1 - e^{-lam})
        tabulated - кусочно-линейная по узлам (tau, r)
    """
    kind: str
    lam: float = 0.0
    knots: Tuple[Tuple[float, float], ...] = ()

    @classmethod
    def constant(cls) -> 'RetentionCurve':
        return cls(kind=CONSTANT)

    @classmethod
    def truncated_exponential(cls, lam: float) -> 'RetentionCurve':
        lam = float(lam)
        if not math.isfinite(lam):
            raise ValidationError(f"lambda должна быть конечной: {lam}")
        return cls(kind=TRUNCATED_EXPONENTIAL, lam=lam)

    @classmethod
    def tabulated(cls, knots: Iterable[Sequence[float]]) -> 'RetentionCurve':
        """
        Создать табличную кривую с проверкой узлов.

        Узлы должны покрывать [0; 1], начинаться с (0, 1), не возрастать по r.
        Два узла с одинаковым tau задают вертикальный скачок (вниз).

        Args:
            knots: Последовательность пар (tau, r)

        Returns:
            Кривая удержания
        """
        pairs = tuple((float(t), float(r)) for t, r in knots)
        if len(pairs) < 2:
            raise ValidationError("Табличной кривой нужно не менее двух узлов")

        xs = [t for t, _ in pairs]
        ys = [r for _, r in pairs]

        if xs[0] != 0.0 or ys[0] != 1.0:
            raise ValidationError(f"Первый узел должен быть (0, 1), получено {pairs[0]}")
        if xs[-1] != 1.0:
            raise ValidationError(f"Последний узел должен иметь tau = 1, получено {xs[-1]}")
        if xs[1] == 0.0:
            raise ValidationError("Скачок в tau = 0 нарушает R(0) = 1")
        for t, r in pairs:
            if not (0.0 <= t <= 1.0) or not (0.0 <= r <= 1.0):
                raise ValidationError(f"Узел ({t}, {r}) вне [0; 1] x [0; 1]")
        for k in range(1, len(pairs)):
            if xs[k] < xs[k - 1]:
                raise ValidationError(f"Узлы не упорядочены по tau: {xs[k - 1]} > {xs[k]}")
            if ys[k] > ys[k - 1]:
                raise ValidationError(
                    f"Кривая возрастает между tau={xs[k - 1]} и tau={xs[k]}: {ys[k - 1]} -> {ys[k]}"
                )
            if k >= 2 and xs[k] == xs[k - 1] == xs[k - 2]:
                raise ValidationError(f"Больше двух узлов с tau = {xs[k]}")

        return cls(kind=TABULATED, knots=pairs)

    @property
    def xs(self) -> np.ndarray:
        return np.array([t for t, _ in self.knots], dtype=float)

    @property
    def ys(self) -> np.ndarray:
        return np.array([r for _, r in self.knots], dtype=float)

    @property
    def has_plateau(self) -> bool:
        """Есть ли у кривой участок постоянства (нарушает строгую выпуклость задачи)."""
        if self.kind == CONSTANT:
            return True
        if self.kind == TRUNCATED_EXPONENTIAL:
            return False
        xs, ys = self.xs, self.ys
        return bool(np.any((np.diff(xs) > 0) & (np.diff(ys) == 0)))

    def to_dict(self) -> Dict:
        if self.kind == CONSTANT:
            return {'kind': CONSTANT}
        if self.kind == TRUNCATED_EXPONENTIAL:
            return {'kind': TRUNCATED_EXPONENTIAL, 'lam': self.lam}
        return {'kind': TABULATED, 'knots': [list(p) for p in self.knots]}

    @classmethod
    def from_dict(cls, data: Dict) -> 'RetentionCurve':
        kind = data.get('kind')
        if kind == CONSTANT:
            return cls.constant()
        if kind == TRUNCATED_EXPONENTIAL:
            if 'lam' not in data:
                raise ValidationError("Для truncated_exponential нужен параметр 'lam'")
            return cls.truncated_exponential(data['lam'])
        if kind == TABULATED:
            return cls.tabulated(data.get('knots', []))
        raise ValidationError(f"Неизвестный тип кривой: {kind!r} (ожидается один из {CURVE_KINDS})")


# --- Усечённая экспонента: формулы, устойчивые при любом знаке lambda ---

def _split_by_lambda(lam: np.ndarray):
    small = np.abs(lam) < _SMALL_LAMBDA
    positive = lam >= _SMALL_LAMBDA
    negative = lam <= -_SMALL_LAMBDA
    return small, positive, negative


def _truncexp_values(lam, tau) -> np.ndarray:
    lam, tau = np.broadcast_arrays(np.asarray(lam, dtype=float), np.asarray(tau, dtype=float))
    out = np.empty(lam.shape)
    small, positive, negative = _split_by_lambda(lam)

    l, t = lam[small], tau[small]
    out[small] = (1.0 - t) * (1.0 - l * t / 2.0)

    l, t = lam[positive], tau[positive]
    out[positive] = (np.expm1(-l * t) - np.expm1(-l)) / (-np.expm1(-l))

    l, t = lam[negative], tau[negative]
    out[negative] = np.expm1(l * (1.0 - t)) / np.expm1(l)

    return np.clip(out, 0.0, 1.0)


def _truncexp_derivative(lam, tau) -> np.ndarray:
    lam, tau = np.broadcast_arrays(np.asarray(lam, dtype=float), np.asarray(tau, dtype=float))
    out = np.empty(lam.shape)
    small, positive, negative = _split_by_lambda(lam)

    l, t = lam[small], tau[small]
    out[small] = -1.0 - l / 2.0 + l * t

    l, t = lam[positive], tau[positive]
    out[positive] = l * np.exp(-l * t) / np.expm1(-l)

    l, t = lam[negative], tau[negative]
    out[negative] = -l * np.exp(l * (1.0 - t)) / np.expm1(l)

    return out


def _truncexp_tail_integral(lam, a) -> np.ndarray:
    """Интеграл R по [a; 1]."""
    lam, a = np.broadcast_arrays(np.asarray(lam, dtype=float), np.asarray(a, dtype=float))
    out = np.empty(lam.shape)
    small, positive, negative = _split_by_lambda(lam)

    l, x = lam[small], a[small]
    out[small] = (1.0 - x) ** 2 / 2.0 - (l / 12.0) * (1.0 - x) ** 2 * (1.0 + 2.0 * x)

    l, x = lam[positive], a[positive]
    numerator = (np.expm1(-l * x) - np.expm1(-l)) / l - (1.0 - x) * np.exp(-l)
    out[positive] = numerator / (-np.expm1(-l))

    l, x = lam[negative], a[negative]
    out[negative] = (np.expm1(l * (1.0 - x)) / l - (1.0 - x)) / np.expm1(l)

    return np.clip(out, 0.0, None)


def _truncexp_inverse(lam, y) -> np.ndarray:
    """tau, при котором R(tau) = y, для y из [0; 1]."""
    lam, y = np.broadcast_arrays(np.asarray(lam, dtype=float), np.asarray(y, dtype=float))
    y = np.clip(y, 0.0, 1.0)
    out = np.empty(lam.shape)
    small, positive, negative = _split_by_lambda(lam)

    l, v = lam[small], y[small]
    first = 1.0 - v
    out[small] = first - v * l * first / 2.0

    l, v = lam[positive], y[positive]
    out[positive] = -np.log1p((1.0 - v) * np.expm1(-l)) / l

    l, v = lam[negative], y[negative]
    out[negative] = 1.0 - np.log1p(v * np.expm1(l)) / l

    return np.clip(out, 0.0, 1.0)


def _truncexp_mean(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    out = np.empty(lam.shape)
    small = np.abs(lam) < _SMALL_LAMBDA
    out[small] = 0.5 - lam[small] / 12.0
    big = ~small
    with np.errstate(over='ignore'):
        out[big] = 1.0 / lam[big] - 1.0 / np.expm1(lam[big])
    return out


# --- Табличные кривые ---

def _tabulated_values(xs: np.ndarray, ys: np.ndarray, tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    j = np.clip(np.searchsorted(xs, tau, side='right') - 1, 0, len(xs) - 2)
    x0, x1 = xs[j], xs[j + 1]
    y0, y1 = ys[j], ys[j + 1]
    width = x1 - x0
    safe = np.where(width > 0, width, 1.0)
    frac = np.where(width > 0, (tau - x0) / safe, 1.0)
    return y0 + (y1 - y0) * np.clip(frac, 0.0, 1.0)


def _tabulated_derivative(xs: np.ndarray, ys: np.ndarray, tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    widths = np.diff(xs)
    slopes = np.where(widths > 0, np.diff(ys) / np.where(widths > 0, widths, 1.0), 0.0)
    last_regular = int(np.flatnonzero(widths > 0)[-1])
    j = np.searchsorted(xs, tau, side='right') - 1
    j = np.where(j >= len(xs) - 1, last_regular, j)
    return slopes[np.clip(j, 0, len(slopes) - 1)]


def _tabulated_level_length(xs: np.ndarray, ys: np.ndarray, y, strict: bool) -> np.ndarray:
    """
    Длина множества {tau: R(tau) >= y} (или > y при strict).

    Так как R не возрастает, множество является префиксом [0; tau*].
    """
    y = np.asarray(y, dtype=float)
    above = ys > y[..., None] if strict else ys >= y[..., None]
    j = above.sum(axis=-1) - 1
    n = len(xs)

    inner = np.clip(j, 0, n - 2)
    y0, y1 = ys[inner], ys[inner + 1]
    drop = np.where(y0 > y1, y0 - y1, 1.0)
    tau = xs[inner] + (y0 - y) / drop * (xs[inner + 1] - xs[inner])

    out = np.where(j < 0, 0.0, np.where(j >= n - 1, 1.0, tau))
    return np.clip(out, 0.0, 1.0)


def _check_tau(tau) -> np.ndarray:
    arr = np.asarray(tau, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"tau должно лежать в [0; 1], получено {tau}")
    return arr


def _scalar_or_array(value: np.ndarray, like):
    return float(value) if np.ndim(like) == 0 else value


# --- Операции над кривыми ---

def retention_eval(curve: RetentionCurve, tau):
    """
    Вычислить R(tau).

    Args:
        curve: Кривая удержания
        tau: Позиция (число или массив) в [0; 1]

    Returns:
        Доля зрителей, досмотревших до tau
    """
    arr = _check_tau(tau)
    if curve.kind == CONSTANT:
        values = np.ones_like(arr)
    elif curve.kind == TRUNCATED_EXPONENTIAL:
        values = _truncexp_values(curve.lam, arr)
    else:
        values = _tabulated_values(curve.xs, curve.ys, arr)
    return _scalar_or_array(values, tau)


def retention_derivative(curve: RetentionCurve, tau):
    """Производная R'(tau) (правая в изломах табличной кривой)."""
    arr = _check_tau(tau)
    if curve.kind == CONSTANT:
        values = np.zeros_like(arr)
    elif curve.kind == TRUNCATED_EXPONENTIAL:
        values = _truncexp_derivative(curve.lam, arr)
    else:
        values = _tabulated_derivative(curve.xs, curve.ys, arr)
    return _scalar_or_array(values, tau)


def tail_integral(curve: RetentionCurve, a: float) -> float:
    """
    Интеграл R по [a; 1].

    Args:
        curve: Кривая удержания
        a: Левая граница в [0; 1]

    Returns:
        Значение интеграла
    """
    a = float(_check_tau(a))
    if curve.kind == CONSTANT:
        return 1.0 - a
    if curve.kind == TRUNCATED_EXPONENTIAL:
        return float(_truncexp_tail_integral(curve.lam, a))
    xs, ys = curve.xs, curve.ys
    return integrate_scalar(
        lambda t: float(_tabulated_values(xs, ys, t)),
        a, 1.0,
        points=xs,
        epsabs=_TABULATED_EPSABS
    )


def mean_watch_time(curve: RetentionCurve) -> float:
    """Средняя доля просмотра: интеграл R по [0; 1]."""
    if curve.kind == TRUNCATED_EXPONENTIAL:
        return float(_truncexp_mean(curve.lam))
    return tail_integral(curve, 0.0)


def fit_lambda_to_watch_time(target: float) -> float:
    """
    Подобрать lambda усечённой экспоненты под среднюю долю просмотра.

    Средняя доля убывает по lambda; при target > 0.5 получается lambda < 0.

    Args:
        target: Средняя доля просмотра в (0; 1)

    Returns:
        lambda
    """
    target = float(target)
    if not (0.0 < target < 1.0):
        raise DomainError(f"Средняя доля просмотра должна быть в (0; 1), получено {target}")
    if target == 0.5:
        return 0.0

    def gap(lam: float) -> float:
        return float(_truncexp_mean(lam)) - target

    low, high = -1.0, 1.0
    while gap(low) < 0.0:
        low *= 2.0
        if low < -1e9:
            raise DomainError(f"Не удалось подобрать lambda для {target}")
    while gap(high) > 0.0:
        high *= 2.0
        if high > 1e9:
            raise DomainError(f"Не удалось подобрать lambda для {target}")

    lam = optimize.brentq(gap, low, high, xtol=1e-14, rtol=1e-14, maxiter=500)
    logger.debug(f"Средняя доля {target} -> lambda = {lam:.6f}")
    return float(lam)


def sample_abandonment(curve: RetentionCurve, u):
    """
    Точка ухода зрителя b по методу обратной функции: 1 - R(b) = u.

    Args:
        curve: Кривая удержания
        u: Равномерное число (или массив) из [0; 1)

    Returns:
        b из [0; 1]
    """
    arr = np.asarray(u, dtype=float)
    if curve.kind == CONSTANT:
        values = np.ones_like(arr)
    elif curve.kind == TRUNCATED_EXPONENTIAL:
        values = _truncexp_inverse(curve.lam, 1.0 - arr)
    else:
        values = _tabulated_level_length(curve.xs, curve.ys, 1.0 - arr, strict=True)
    return _scalar_or_array(values, u)


def zipf_popularity(M: int, alpha: float) -> np.ndarray:
    """
    Популярность по закону Zipf: p_i ~ i^{-alpha}.

    Args:
        M: Количество файлов
        alpha: Параметр закона (>= 0)

    Returns:
        Нормированный убывающий вектор популярностей
    """
    if M < 1:
        raise DomainError(f"Количество файлов должно быть >= 1, получено {M}")
    if alpha < 0:
        raise DomainError(f"Параметр Zipf должен быть >= 0, получено {alpha}")
    ranks = np.arange(1, M + 1, dtype=float)
    weights = np.power(ranks, -float(alpha))
    return weights / weights.sum()


# --- Каталог ---

@dataclass(frozen=True, eq=False)
class Catalog:
    """
    Каталог из M файлов: размеры S_i, популярности p_i (по убыванию), кривые R_i.

    Создавать через Catalog.create - он сортирует файлы по популярности.
    """
    sizes: np.ndarray
    popularity: np.ndarray
    curves: Tuple[RetentionCurve, ...]
    uniform_size: bool = False
    _exp_idx: np.ndarray = field(init=False, repr=False)
    _exp_lam: np.ndarray = field(init=False, repr=False)
    _const_idx: np.ndarray = field(init=False, repr=False)
    _tab_idx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sizes = np.array(self.sizes, dtype=float)
        popularity = np.array(self.popularity, dtype=float)
        curves = tuple(self.curves)
        M = len(curves)

        if M == 0:
            raise ValidationError("Каталог пуст")
        if sizes.shape != (M,) or popularity.shape != (M,):
            raise ValidationError(
                f"Несогласованные длины: sizes {sizes.shape}, popularity {popularity.shape}, curves {M}"
            )
        if np.any(~np.isfinite(sizes)) or np.any(sizes <= 0):
            raise ValidationError("Размеры файлов должны быть положительны")
        if np.any(~np.isfinite(popularity)) or np.any(popularity < 0):
            raise ValidationError("Популярности должны быть неотрицательны")
        if abs(popularity.sum() - 1.0) > 1e-12:
            raise ValidationError(f"Сумма популярностей {popularity.sum():.15f} != 1")
        if np.any(np.diff(popularity) > 0):
            raise ValidationError("Популярности должны быть упорядочены по убыванию")
        if self.uniform_size and np.any(sizes != sizes[0]):
            raise ValidationError("Флаг uniform_size задан, но размеры различаются")

        sizes.setflags(write=False)
        popularity.setflags(write=False)

        kinds = np.array([c.kind for c in curves])
        exp_idx = np.flatnonzero(kinds == TRUNCATED_EXPONENTIAL)
        exp_lam = np.array([curves[i].lam for i in exp_idx], dtype=float)
        for arr in (exp_idx, exp_lam):
            arr.setflags(write=False)

        object.__setattr__(self, 'sizes', sizes)
        object.__setattr__(self, 'popularity', popularity)
        object.__setattr__(self, 'curves', curves)
        object.__setattr__(self, '_exp_idx', exp_idx)
        object.__setattr__(self, '_exp_lam', exp_lam)
        object.__setattr__(self, '_const_idx', np.flatnonzero(kinds == CONSTANT))
        object.__setattr__(self, '_tab_idx', np.flatnonzero(kinds == TABULATED))

    @classmethod
    def create(
        cls,
        sizes: Sequence[float],
        popularity: Sequence[float],
        curves: Sequence[RetentionCurve],
        uniform_size: bool = False
    ) -> 'Catalog':
        """
        Создать каталог, упорядочив файлы по убыванию популярности.

        Args:
            sizes: Размеры S_i
            popularity: Популярности p_i (сумма 1)
            curves: Кривые удержания R_i
            uniform_size: Все файлы одного размера

        Returns:
            Каталог
        """
        popularity = np.asarray(popularity, dtype=float)
        order = np.argsort(-popularity, kind='stable')
        return cls(
            sizes=np.asarray(sizes, dtype=float)[order],
            popularity=popularity[order],
            curves=tuple(curves[i] for i in order),
            uniform_size=uniform_size
        )

    @property
    def M(self) -> int:
        return len(self.curves)

    @property
    def total_size(self) -> float:
        return float(self.sizes.sum())

    @property
    def size(self) -> float:
        """Общий размер S для каталога с одинаковыми размерами."""
        if not self.uniform_size:
            raise ValidationError("Каталог с разными размерами файлов: S не определён")
        return float(self.sizes[0])

    @property
    def mean_size(self) -> float:
        return float(self.sizes.mean())

    @property
    def has_plateaus(self) -> bool:
        return any(c.has_plateau for c in self.curves)

    @property
    def breakpoints(self) -> np.ndarray:
        """Изломы табличных кривых (для квадратур)."""
        if len(self._tab_idx) == 0:
            return np.empty(0)
        return np.unique(np.concatenate([self.curves[i].xs for i in self._tab_idx]))

    def retention_at(self, tau) -> np.ndarray:
        """
        R_i(tau) для всех файлов.

        Args:
            tau: Число или массив формы (T,)

        Returns:
            Массив (M,) или (M, T)
        """
        arr = _check_tau(tau)
        out = np.ones((self.M,) + arr.shape)
        if len(self._exp_idx):
            lam = self._exp_lam.reshape((-1,) + (1,) * arr.ndim)
            out[self._exp_idx] = _truncexp_values(lam, arr)
        for i in self._tab_idx:
            curve = self.curves[i]
            out[i] = _tabulated_values(curve.xs, curve.ys, arr)
        return out

    def retention_derivative_at(self, tau: float) -> np.ndarray:
        """R_i'(tau) для всех файлов (массив (M,))."""
        tau = float(_check_tau(tau))
        out = np.zeros(self.M)
        if len(self._exp_idx):
            out[self._exp_idx] = _truncexp_derivative(self._exp_lam, tau)
        for i in self._tab_idx:
            curve = self.curves[i]
            out[i] = float(_tabulated_derivative(curve.xs, curve.ys, tau))
        return out

    def tail_integrals(self, start) -> np.ndarray:
        """
        Интегралы R_i по [start_i; 1].

        Args:
            start: Число или массив (M,) левых границ

        Returns:
            Массив (M,)
        """
        start = np.broadcast_to(_check_tau(start), (self.M,)).astype(float)
        out = 1.0 - start
        if len(self._exp_idx):
            out[self._exp_idx] = _truncexp_tail_integral(self._exp_lam, start[self._exp_idx])
        for i in self._tab_idx:
            out[i] = tail_integral(self.curves[i], start[i])
        return out

    def mean_watch_times(self) -> np.ndarray:
        return self.tail_integrals(0.0)

    def level_lengths(self, thresholds, strict: bool = False) -> np.ndarray:
        """
        Длины множеств {tau: R_i(tau) >= y_i} (или > y_i при strict).

        Args:
            thresholds: Пороги y_i (массив (M,), допускается inf)
            strict: Строгое неравенство

        Returns:
            Массив (M,) длин из [0; 1]
        """
        y = np.broadcast_to(np.asarray(thresholds, dtype=float), (self.M,))
        out = np.empty(self.M)

        if len(self._exp_idx):
            ye = y[self._exp_idx]
            lengths = _truncexp_inverse(self._exp_lam, np.clip(ye, 0.0, 1.0))
            lengths = np.where(ye >= 1.0, 0.0, lengths)
            out[self._exp_idx] = np.where(ye <= 0.0, 1.0, lengths)

        yc = y[self._const_idx]
        out[self._const_idx] = np.where(yc < 1.0 if strict else yc <= 1.0, 1.0, 0.0)

        for i in self._tab_idx:
            curve = self.curves[i]
            out[i] = float(_tabulated_level_length(curve.xs, curve.ys, y[i], strict))
        return out

    def sample_abandonment_many(self, files: np.ndarray, u: np.ndarray) -> np.ndarray:
        """
        Точки ухода для пачки запросов.

        Args:
            files: Индексы запрошенных файлов
            u: Равномерные числа из [0; 1) той же длины

        Returns:
            Массив точек ухода b
        """
        files = np.asarray(files)
        u = np.asarray(u, dtype=float)
        b = np.ones(len(files))

        if len(self._exp_idx):
            lam_of = np.full(self.M, np.nan)
            lam_of[self._exp_idx] = self._exp_lam
            lam = lam_of[files]
            mask = ~np.isnan(lam)
            b[mask] = _truncexp_inverse(lam[mask], 1.0 - u[mask])

        for i in self._tab_idx:
            mask = files == i
            if mask.any():
                curve = self.curves[i]
                b[mask] = _tabulated_level_length(curve.xs, curve.ys, 1.0 - u[mask], strict=True)
        return b

    def to_dict(self) -> Dict:
        return {
            'schema_version': CATALOG_SCHEMA_VERSION,
            'uniform_size': self.uniform_size,
            'files': [
                {'size': float(s), 'popularity': float(p), 'retention': c.to_dict()}
                for s, p, c in zip(self.sizes, self.popularity, self.curves)
            ]
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Catalog':
        version = data.get('schema_version', CATALOG_SCHEMA_VERSION)
        if version != CATALOG_SCHEMA_VERSION:
            raise ValidationError(f"Неподдерживаемая версия схемы каталога: {version}")
        files = data.get('files')
        if not files:
            raise ValidationError("В каталоге нет файлов")
        try:
            sizes = [float(f['size']) for f in files]
            popularity = [float(f['popularity']) for f in files]
            curves = [RetentionCurve.from_dict(f['retention']) for f in files]
        except (KeyError, TypeError) as e:
            raise ValidationError(f"Некорректная запись файла в каталоге: {e}")
        return cls.create(sizes, popularity, curves, uniform_size=bool(data.get('uniform_size', False)))


def save_catalog(catalog: Catalog, path: str):
    """Сохранить каталог в JSON."""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(catalog.to_dict(), f, ensure_ascii=False, indent=2)
    logger.info(f"Каталог из {catalog.M} файлов сохранён: {path}")


def load_catalog(path: str) -> Catalog:
    """Загрузить каталог из JSON."""
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"Ошибка парсинга JSON каталога {path}: {e}")
    catalog = Catalog.from_dict(data)
    logger.info(f"Загружен каталог из {catalog.M} файлов: {path}")
    return catalog


# --- Классы видео и сценарий с реальными параметрами ---

@dataclass(frozen=True)
class ClassSpec:
    """
    Класс видео: средняя доля просмотра, доля в популяции, средняя длительность.

    band - полоса популярности (0 - самая популярная),
    duration_class - 'small' или 'large'.
    """
    avg_watch_time: float
    population_fraction: float
    avg_duration_sec: float
    band: int = 0
    duration_class: str = 'small'

    def validate(self):
        if not (0.0 < self.avg_watch_time < 1.0):
            raise ValidationError(f"avg_watch_time вне (0; 1): {self.avg_watch_time}")
        if not (0.0 <= self.population_fraction <= 1.0):
            raise ValidationError(f"population_fraction вне [0; 1]: {self.population_fraction}")
        if not (self.avg_duration_sec > 0):
            raise ValidationError(f"avg_duration_sec должна быть > 0: {self.avg_duration_sec}")
        if self.band < 0:
            raise ValidationError(f"Номер полосы популярности отрицателен: {self.band}")

    def to_dict(self) -> Dict:
        return {
            'avg_watch_time': self.avg_watch_time,
            'population_fraction': self.population_fraction,
            'avg_duration_sec': self.avg_duration_sec,
            'band': self.band,
            'duration_class': self.duration_class
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ClassSpec':
        try:
            return cls(
                avg_watch_time=float(data['avg_watch_time']),
                population_fraction=float(data['population_fraction']),
                avg_duration_sec=float(data['avg_duration_sec']),
                band=int(data.get('band', 0)),
                duration_class=str(data.get('duration_class', 'small'))
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"Некорректное описание класса видео: {e}")


def validate_class_table(class_table: Sequence[ClassSpec]):
    """Проверить таблицу классов: поля и сумму долей (1 с точностью 1e-9)."""
    if not class_table:
        raise ValidationError("Таблица классов пуста")
    for spec in class_table:
        spec.validate()
    total = sum(spec.population_fraction for spec in class_table)
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"Сумма долей классов {total:.12f} != 1")


def normalize_class_fractions(class_table: Sequence[ClassSpec]) -> List[ClassSpec]:
    """Перенормировать доли классов к сумме 1."""
    total = sum(spec.population_fraction for spec in class_table)
    if total <= 0:
        raise ValidationError("Сумма долей классов должна быть положительна")
    return [
        ClassSpec(
            avg_watch_time=spec.avg_watch_time,
            population_fraction=spec.population_fraction / total,
            avg_duration_sec=spec.avg_duration_sec,
            band=spec.band,
            duration_class=spec.duration_class
        )
        for spec in class_table
    ]


def class_table_to_json(class_table: Sequence[ClassSpec]) -> str:
    return json.dumps([spec.to_dict() for spec in class_table], ensure_ascii=False, indent=2)


def class_table_from_json(text: str) -> List[ClassSpec]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"Ошибка парсинга JSON таблицы классов: {e}")
    if not isinstance(data, list):
        raise ValidationError("Таблица классов должна быть JSON списком")
    return [ClassSpec.from_dict(item) for item in data]


# Классы видео из измерений (полосы популярности от самой высокой к самой низкой).
# Опубликованные доли дают в сумме 0.992, поэтому таблица перенормирована.
TABLE1_RAW = [
    # (полоса, длительность, доля просмотра, доля популяции, длительность, сек)
    (0, 'small', 0.72, 0.145, 124), (0, 'large', 0.65, 0.053, 235),
    (1, 'small', 0.67, 0.152, 130), (1, 'large', 0.60, 0.047, 222),
    (2, 'small', 0.64, 0.153, 128), (2, 'large', 0.57, 0.045, 223),
    (3, 'small', 0.60, 0.162, 112), (3, 'large', 0.47, 0.036, 220),
    (4, 'small', 0.52, 0.179, 81), (4, 'large', 0.37, 0.020, 220),
]

TABLE1_BAND_NAMES = ('Highest', 'High', 'Medium', 'Low', 'Lowest')

TABLE1_CLASSES = normalize_class_fractions([
    ClassSpec(
        avg_watch_time=watch,
        population_fraction=fraction,
        avg_duration_sec=duration,
        band=band,
        duration_class=duration_class
    )
    for band, duration_class, watch, fraction, duration in TABLE1_RAW
])


def _band_boundaries(shares: Sequence[float], M: int) -> List[int]:
    cumulative = np.rint(np.cumsum(shares) * M).astype(int)
    cumulative[-1] = M
    return [0] + [int(c) for c in cumulative]


def _interleave(weights: Sequence[float], count: int) -> List[int]:
    """
    Детерминированно распределить count позиций между классами пропорционально весам.

    На j-й позиции выбирается класс с наибольшим отставанием от своей доли.
    """
    assigned = [0] * len(weights)
    order = []
    for j in range(1, count + 1):
        deficits = [w * j - a for w, a in zip(weights, assigned)]
        best = max(range(len(weights)), key=lambda c: (deficits[c], -c))
        assigned[best] += 1
        order.append(best)
    return order


def build_table1_scenario(
    M: int,
    alpha: float,
    class_table: Sequence[ClassSpec] = TABLE1_CLASSES,
    uniform_size: bool = False,
    size: float = 1.0
) -> Catalog:
    """
    Построить каталог по таблице классов видео.

    Ранги популярности делятся на непрерывные полосы (полоса 0 - самые
    популярные файлы), внутри полосы файлы распределяются между классами
    длительности пропорционально их долям. Каждому файлу назначается
    усечённая экспонента с подобранной средней долей просмотра.

    Args:
        M: Количество файлов
        alpha: Параметр Zipf
        class_table: Таблица классов
        uniform_size: Одинаковый размер файлов (для chunk-LRU)
        size: Размер S (средний размер при разных размерах)

    Returns:
        Каталог
    """
    validate_class_table(class_table)
    if size <= 0:
        raise ValidationError(f"Размер файла должен быть > 0: {size}")

    popularity = zipf_popularity(M, alpha)

    bands = sorted({spec.band for spec in class_table})
    members = {b: [spec for spec in class_table if spec.band == b] for b in bands}
    shares = [sum(spec.population_fraction for spec in members[b]) for b in bands]
    boundaries = _band_boundaries(shares, M)

    lam_cache: Dict[float, float] = {}
    file_classes: List[ClassSpec] = []
    for b, band in enumerate(bands):
        count = boundaries[b + 1] - boundaries[b]
        band_members = members[band]
        share = shares[b]
        weights = [spec.population_fraction / share if share > 0 else 1.0 / len(band_members)
                   for spec in band_members]
        for idx in _interleave(weights, count):
            file_classes.append(band_members[idx])

    curves = []
    for spec in file_classes:
        if spec.avg_watch_time not in lam_cache:
            lam_cache[spec.avg_watch_time] = fit_lambda_to_watch_time(spec.avg_watch_time)
        curves.append(RetentionCurve.truncated_exponential(lam_cache[spec.avg_watch_time]))

    if uniform_size:
        sizes = np.full(M, float(size))
    else:
        durations = np.array([spec.avg_duration_sec for spec in file_classes], dtype=float)
        sizes = size * durations / durations.mean()

    catalog = Catalog.create(sizes, popularity, curves, uniform_size=uniform_size)
    logger.info(f"Сценарий по классам видео: M={M}, alpha={alpha}, "
                f"полос {len(bands)}, средняя доля просмотра "
                f"{float(np.dot(catalog.popularity, catalog.mean_watch_times())):.3f}")
    return catalog


def synthetic_catalog(
    M: int,
    alpha: float,
    curve: RetentionCurve,
    size: float = 1.0
) -> Catalog:
    """Однородный каталог: Zipf популярность, одна кривая и один размер для всех файлов."""
    if size <= 0:
        raise ValidationError(f"Размер файла должен быть > 0: {size}")
    popularity = zipf_popularity(M, alpha)
    return Catalog.create(np.full(M, float(size)), popularity, [curve] * M, uniform_size=True)


def random_catalog(
    M: int,
    seed: int,
    lam_range: Tuple[float, float] = (-4.0, 4.0),
    size_range: Optional[Tuple[float, float]] = (0.5, 2.0),
    uniform_size: bool = False
) -> Catalog:
    """
    Случайный каталог с усечёнными экспонентами (для проверок оптимизации).

    Args:
        M: Количество файлов
        seed: Сид генератора
        lam_range: Диапазон lambda
        size_range: Диапазон размеров (игнорируется при uniform_size)
        uniform_size: Одинаковые размеры 1.0

    Returns:
        Каталог
    """
    if M < 1:
        raise DomainError(f"Количество файлов должно быть >= 1, получено {M}")
    rng = make_rng(seed)
    weights = rng.random(M) + 1e-3
    popularity = weights / weights.sum()
    lams = rng.uniform(lam_range[0], lam_range[1], size=M)
    if uniform_size or size_range is None:
        sizes = np.ones(M)
        uniform_size = True
    else:
        sizes = rng.uniform(size_range[0], size_range[1], size=M)
    curves = [RetentionCurve.truncated_exponential(lam) for lam in lams]
    return Catalog.create(sizes, popularity, curves, uniform_size=uniform_size)
