"""
Синтетическая сенсорная сеть, чтение файлов скоров и канал обратной связи.

Модель сенсора: с вероятностью e_k скор равен равномерному шуму на [0, 1),
иначе (1 − e_k)·Y + e_k·u с независимым u ~ U[0, 1), то есть скоры
нерелевантных меток лежат в [0, e_k), релевантных в [1 − e_k, 1).
Для λ ≥ e_k локальный FPR равен e_k·(1 − λ), а стоимость и FNR локального
решения меняются непрерывно по λ. Метки, которые сенсор не видит (dropout),
всегда получают шум.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

import config
from control import Feedback, FeedbackProvider
from core import (
    ArrayLike, DimensionError, Objective, as_labels, as_decision, fnr,
    local_objectives, objective_scale, objective_value,
)

logger = logging.getLogger(__name__)

Instance = Tuple[npt.NDArray[np.bool_], npt.NDArray[np.float64]]


class ScoreFileError(ValueError):
    """Ошибка формата файла скоров"""


@dataclass(frozen=True)
class SensorModel:
    error_level: float
    dropout: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.error_level <= 1.0:
            raise ValueError(f"Уровень ошибок сенсора должен лежать в [0, 1]: {self.error_level}")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError(f"Доля ненаблюдаемых меток должна лежать в [0, 1]: {self.dropout}")


@dataclass(frozen=True)
class StreamSpec:
    num_labels: int
    horizon: int
    sensors: Tuple[SensorModel, ...]
    relevance: float = config.RELEVANCE
    seed: int = 0
    block_size: int = config.BLOCK_SIZE

    def __post_init__(self):
        if not self.sensors:
            raise ValueError("Нужен хотя бы один сенсор")
        if self.num_labels < 1 or self.horizon < 1:
            raise ValueError(f"L и T должны быть положительными: L={self.num_labels}, T={self.horizon}")
        if self.num_labels % self.block_size:
            raise ValueError(
                f"L={self.num_labels} должно делиться на размер блока {self.block_size}"
            )
        if not 0.0 < self.relevance < 1.0:
            raise ValueError(f"Доля релевантных меток должна лежать в (0, 1): {self.relevance}")

    @property
    def num_sensors(self) -> int:
        return len(self.sensors)

    @classmethod
    def from_levels(cls, error_levels: Sequence[float], num_labels: int, horizon: int,
                    dropout: Union[float, Sequence[float]] = 0.0, **kwargs) -> "StreamSpec":
        if np.isscalar(dropout):
            dropout = [dropout] * len(error_levels)
        if len(dropout) != len(error_levels):
            raise ValueError(
                f"Задано {len(error_levels)} уровней ошибок и {len(dropout)} долей dropout"
            )
        sensors = tuple(SensorModel(float(e), float(d)) for e, d in zip(error_levels, dropout))
        return cls(num_labels=num_labels, horizon=horizon, sensors=sensors, **kwargs)


@dataclass
class StreamRngs:
    labels: np.random.Generator
    sensors: List[np.random.Generator] = field(default_factory=list)


def make_rngs(seed: int, num_sensors: int) -> StreamRngs:
    """Независимые подпотоки: 0 для меток, k+1 для сенсора k"""
    children = np.random.SeedSequence(seed).spawn(num_sensors + 1)
    return StreamRngs(
        labels=np.random.default_rng(children[0]),
        sensors=[np.random.default_rng(child) for child in children[1:]],
    )


def generate_instance(rngs: StreamRngs, spec: StreamSpec) -> Instance:
    """Один экземпляр (Y, S) с S размера K×L"""
    if len(rngs.sensors) != spec.num_sensors:
        raise DimensionError(
            f"Генераторов сенсоров {len(rngs.sensors)}, а сенсоров {spec.num_sensors}"
        )
    size = spec.num_labels
    truth = rngs.labels.random(size) < spec.relevance

    scores = np.empty((spec.num_sensors, size))
    for k, (sensor, rng) in enumerate(zip(spec.sensors, rngs.sensors)):
        e = sensor.error_level
        switched = rng.random(size) < e
        noise = rng.random(size)
        clean = (1.0 - e) * truth + e * rng.random(size)
        hidden = rng.random(size) < sensor.dropout
        scores[k] = np.where(switched | hidden, noise, clean)

    return truth, np.clip(scores, 0.0, 1.0 - config.SCORE_EPS)


def iter_synthetic(spec: StreamSpec) -> Iterator[Instance]:
    """Поток из T экземпляров, детерминированный по spec.seed"""
    rngs = make_rngs(spec.seed, spec.num_sensors)
    for _ in range(spec.horizon):
        yield generate_instance(rngs, spec)


# === Файлы скоров ===

def _parse_row(line: str, line_no: int, expected: int, path: Path) -> npt.NDArray[np.float64]:
    parts = line.strip().split(",")
    if len(parts) != expected:
        raise ScoreFileError(
            f"{path}:{line_no}: ожидалось {expected} значений, получено {len(parts)}"
        )
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise ScoreFileError(f"{path}:{line_no}: не удалось разобрать число ({e})") from e


def ingest_scores(path: Union[str, Path]) -> List[Instance]:
    """
    Чтение файла скоров.

    Формат: заголовок `K,L,T`, затем для каждого экземпляра строка из L
    бинарных меток и K строк по L скоров через запятую.
    Скоры в (1 − ε_s, 1] ограничиваются сверху с предупреждением,
    значения вне [0, 1] считаются ошибкой.
    """
    path = Path(path)
    if not path.exists():
        raise ScoreFileError(f"Файл скоров не найден: {path}")

    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise ScoreFileError(f"{path}: пустой файл")

    header = lines[0].strip().split(",")
    try:
        num_sensors, num_labels, horizon = (int(v) for v in header)
    except ValueError as e:
        raise ScoreFileError(f"{path}:1: заголовок должен иметь вид K,L,T, получено {lines[0]!r}") from e
    if min(num_sensors, num_labels, horizon) < 1:
        raise ScoreFileError(f"{path}:1: K, L и T должны быть положительными")

    expected_lines = 1 + horizon * (num_sensors + 1)
    if len(lines) != expected_lines:
        raise ScoreFileError(
            f"{path}: ожидалось {expected_lines} строк для K={num_sensors}, T={horizon}, "
            f"получено {len(lines)}"
        )

    ceiling = 1.0 - config.SCORE_EPS
    instances = []
    line_no = 2
    for _ in range(horizon):
        truth = _parse_row(lines[line_no - 1], line_no, num_labels, path)
        if not np.isin(truth, (0.0, 1.0)).all():
            raise ScoreFileError(f"{path}:{line_no}: метки должны быть 0 или 1")
        line_no += 1

        scores = np.empty((num_sensors, num_labels))
        for k in range(num_sensors):
            row = _parse_row(lines[line_no - 1], line_no, num_labels, path)
            if not np.isfinite(row).all() or (row < 0).any() or (row > 1).any():
                raise ScoreFileError(f"{path}:{line_no}: скоры должны лежать в [0, 1]")
            if (row > ceiling).any():
                logger.warning(
                    f"⚠️ {path}:{line_no}: {int((row > ceiling).sum())} скоров ограничено до {ceiling}"
                )
                row = np.minimum(row, ceiling)
            scores[k] = row
            line_no += 1

        instances.append((truth.astype(bool), scores))

    logger.info(f"Загружено {horizon} экземпляров из {path} (K={num_sensors}, L={num_labels})")
    return instances


def write_scores(path: Union[str, Path], instances: Iterable[Instance]) -> int:
    """Запись экземпляров в формат файла скоров; возвращает T"""
    instances = list(instances)
    if not instances:
        raise ValueError("Нет экземпляров для записи")
    num_sensors, num_labels = np.atleast_2d(instances[0][1]).shape

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{num_sensors},{num_labels},{len(instances)}\n")
        for truth, scores in instances:
            scores = np.atleast_2d(scores)
            if scores.shape != (num_sensors, num_labels) or np.size(truth) != num_labels:
                raise DimensionError("Все экземпляры должны иметь одинаковые K и L")
            f.write(",".join("1" if y else "0" for y in np.asarray(truth)) + "\n")
            for row in scores:
                f.write(",".join(repr(float(s)) for s in row) + "\n")

    logger.info(f"Записано {len(instances)} экземпляров в {path}")
    return len(instances)


# === Обратная связь ===

class FeedbackMode(str, Enum):
    EXACT = "exact"
    CONSERVATIVE = "conservative"


@dataclass(frozen=True)
class FeedbackChannel:
    mode: FeedbackMode = FeedbackMode.EXACT
    bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", FeedbackMode(self.mode))
        if self.bias < 0:
            raise ValueError(f"Смещение консервативной оценки должно быть ≥ 0: {self.bias}")

    def observe(self, truth: ArrayLike, decision: ArrayLike, locals_: ArrayLike,
                objective: Objective = Objective.FPR) -> Feedback:
        true_fnr = fnr(truth, decision)
        reported = true_fnr
        if self.mode is FeedbackMode.CONSERVATIVE:
            reported = min(1.0, true_fnr + self.bias)

        return Feedback(
            fnr=reported,
            true_fnr=true_fnr,
            objective=objective_value(truth, decision, objective),
            local_objectives=local_objectives(truth, locals_, objective),
            scale=objective_scale(truth, objective),
        )

    def provider(self, truth: ArrayLike, objective: Objective = Objective.FPR) -> FeedbackProvider:
        """Замыкание над Y^t для передачи в step() контроллера"""
        labels = as_labels(truth)

        def _provide(decision, locals_) -> Feedback:
            return self.observe(labels, as_decision(decision), locals_, objective)

        return _provide


def feedback(channel: FeedbackChannel, truth: ArrayLike, decision: ArrayLike,
             locals_: ArrayLike, objective: Objective = Objective.FPR) -> Feedback:
    return channel.observe(truth, decision, locals_, objective)
