"""
Исключения предметной области.
"""


class ChunkCacheError(Exception):
    """Базовое исключение пакета."""


class DomainError(ChunkCacheError, ValueError):
    """Аргумент вне математической области определения."""


class ValidationError(ChunkCacheError, ValueError):
    """Некорректный каталог, таблица классов, схема чанков или спецификация эксперимента."""


class CapacityError(ChunkCacheError, ValueError):
    """Ёмкость кеша вне допустимого диапазона [0; sum S_i]."""


class ResourceError(ChunkCacheError, ValueError):
    """Задача слишком велика для перебора."""


class ConfigurationError(ChunkCacheError, ValueError):
    """Невыполнимая конфигурация симуляции."""


class InfiniteCharacteristicTimeError(ChunkCacheError, ArithmeticError):
    """
    Ёмкость кеша достигает кешируемой массы: у уравнения для t_C нет конечного корня.

    Attributes:
        capacity: Ёмкость C/S (в долях файла)
        cacheable_mass: Максимальная масса, которую может занять кеш
    """

    def __init__(self, capacity: float, cacheable_mass: float):
        self.capacity = capacity
        self.cacheable_mass = cacheable_mass
        super().__init__(
            f"Нет конечного характеристического времени: C/S = {capacity:.6g} "
            f">= кешируемая масса {cacheable_mass:.6g}"
        )
