"""
Пул процессов для независимых задач (точки свипа, прогоны симуляции).
Результаты возвращаются в порядке задач, независимо от порядка завершения.
"""

import multiprocessing
from typing import Callable, Iterable, List, TypeVar

from config import logger

T = TypeVar('T')
R = TypeVar('R')

_MP_CTX = multiprocessing.get_context('spawn')


def parallel_map(fn: Callable[[T], R], tasks: Iterable[T], workers: int = 1) -> List[R]:
    """
    Применить fn ко всем задачам, при workers > 1 - в пуле процессов.

    Args:
        fn: Функция уровня модуля (должна сериализоваться pickle)
        tasks: Задачи
        workers: Количество процессов

    Returns:
        Результаты в порядке задач
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]

    processes = min(workers, len(tasks))
    logger.info(f"Запуск {len(tasks)} задач в пуле из {processes} процессов")
    with _MP_CTX.Pool(processes) as pool:
        return list(pool.imap(fn, tasks))
