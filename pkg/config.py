"""
Модуль конфигурации.
Загружает настройки из .env файла и определяет численные константы.
"""

import logging
import os

from dotenv import load_dotenv
import pytz

# Загрузка переменных окружения из .env файла
load_dotenv()


def _int_from_env(name: str, default: int) -> int:
    """Прочитать целое число из переменной окружения."""
    raw = os.getenv(name, str(default))
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} должен быть целым числом, получено: {raw!r}")


# Сид генератора случайных чисел по умолчанию
DEFAULT_SEED = _int_from_env('CHUNKCACHE_SEED', 2024)

# Папка для результатов (CSV, Excel)
OUTPUT_DIR = os.getenv('CHUNKCACHE_OUTPUT_DIR', 'results')

# Количество процессов для точек свипа (1 - без пула)
WORKERS = _int_from_env('CHUNKCACHE_WORKERS', 1)
if WORKERS < 1:
    raise ValueError("CHUNKCACHE_WORKERS должен быть >= 1!")

# Часовой пояс (только для подписи в Excel отчёте)
TIMEZONE_STR = os.getenv('CHUNKCACHE_TIMEZONE', 'Europe/Moscow')
try:
    TIMEZONE = pytz.timezone(TIMEZONE_STR)
except pytz.UnknownTimeZoneError:
    raise ValueError(f"Неизвестный часовой пояс CHUNKCACHE_TIMEZONE: {TIMEZONE_STR}")

# Версия схемы CSV файлов
CSV_SCHEMA_VERSION = 1

# --- Численные допуски ---

# Квадратуры (scipy.integrate.quad)
QUAD_EPSABS = 1e-9
QUAD_EPSREL = 1e-10
QUAD_LIMIT = 200

# Поиск корней (характеристическое время)
ROOT_RTOL = 1e-10

# Waterfilling
KKT_TOL = 1e-6
WATERFILL_CAPACITY_RTOL = 1e-9
WATERFILL_MAX_STEPS = 200

# Поиск tail drop factor
NU_GRID_POINTS = 256
NU_TOL = 1e-4

# Конечная замена N = бесконечности
INFINITE_CHUNKS_PROXY = 512

# Ограничение hit rate сверху
HIT_RATE_CLAMP = 1.0 - 1e-15

# Сетка проверки условия sub-split (tau x t)
SUBSPLIT_TAU_POINTS = 200
SUBSPLIT_T_POINTS = 50

# --- Симулятор ---

WARMUP_FRACTION = 0.2
SIM_BATCH_SIZE = 65536

# Пороги сравнения симуляции с приближением Che
HIT_RATE_THRESHOLD = 0.02
TRAFFIC_THRESHOLD = 0.03
# Ниже этого размера кеша (в файлах) приближение Che не гарантируется
CHE_MIN_CACHE_FILES = 10

# Логирование
LOG_LEVEL = os.getenv('CHUNKCACHE_LOG_LEVEL', 'INFO').upper()
if LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
    raise ValueError(f"Неизвестный уровень логирования CHUNKCACHE_LOG_LEVEL: {LOG_LEVEL}")

logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=getattr(logging, LOG_LEVEL)
)

logger = logging.getLogger('chunkcache')
