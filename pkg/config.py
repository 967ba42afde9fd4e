import os
from dotenv import load_dotenv
from pathlib import Path

# Загружаем переменные из .env файла
load_dotenv()

# === Пути ===
BASE_DIR = Path(__file__).parent
OUTPUT_DIR = Path(os.getenv("CRCNET_OUTPUT_DIR", "results"))
LOG_FILE = Path(os.getenv("CRCNET_LOG_FILE", str(BASE_DIR / "crcnet.log")))

# === Логирование ===
LOG_LEVEL = os.getenv("CRCNET_LOG_LEVEL", "INFO")  # DEBUG, INFO, WARNING, ERROR
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# === Параметры эксперимента по умолчанию ===
SCHEME = "cdcrc"
ALPHA = 0.15          # допустимый долгосрочный FNR
CAPACITY = 1.0        # долгосрочная ёмкость канала C
NUM_SENSORS = 4       # K
NUM_LABELS = 10000    # L
HORIZON = 913         # T
RHO = 0.2             # шаг общего локального порога (D-CRC)
GAMMA = 0.2           # шаг локальных порогов (CD-CRC)
MU = 0.2              # шаг глобального порога (CD-CRC)
DELTA_OFFSET = 0.01   # δ = μ(1−α) + DELTA_OFFSET
THETA = 0.5           # фиксированный глобальный порог D-CRC
N_SEEDS = 50

# === Синтетические сенсоры ===
RELEVANCE = 0.5                            # доля релевантных меток
ERROR_LEVELS = (0.1, 0.3, 0.5, 0.5)        # один явно лучший сенсор
SCENARIOS = {
    "best-sensor": (0.1, 0.3, 0.5, 0.5),
    "no-prior-best": (0.5, 0.3, 0.3, 0.2),
}

# === Кодек ===
BLOCK_SIZE = 10
MAX_BLOCK_SIZE = 15     # поле длины в контейнере занимает 4 бита
CODEC_TABLE_MAX = 12    # crcnet codec table
PAYLOAD_MAGIC = 0xC7

# === Численные допуски ===
SCORE_EPS = 1e-6        # скоры хранятся в [0, 1 − SCORE_EPS]
WEIGHT_TOL = 1e-9
BOUND_TOL = 1e-9
ETA_GAP_FLOOR = 1e-12   # η = ln K / max(Γ, ETA_GAP_FLOOR)
SQRT_CLAMP_TOL = 1e-12

# === Проверка инвариантов во время шага ===
STRICT_INVARIANTS = os.getenv("CRCNET_STRICT_INVARIANTS", "1") not in ("0", "false", "False")

# === CLI ===
SHOW_PROGRESS_BAR = os.getenv("CRCNET_PROGRESS", "1") not in ("0", "false", "False")
MAX_WORKERS = int(os.getenv("CRCNET_WORKERS", str(os.cpu_count() or 1)))
CSV_FLOAT_FORMAT = "%.12g"
