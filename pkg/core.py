"""
Поэлементная арифметика одного шага: локальная пороговая обработка,
взвешенное объединение, глобальный порог и метрики FNR/FPR.

Все функции чистые: вектора меток, скоров и решений передаются как
numpy-массивы длины L, решения сенсоров как матрица K×L.
"""
from enum import Enum
from typing import Sequence, Union

import numpy as np
import numpy.typing as npt

import config

ArrayLike = Union[Sequence[float], npt.NDArray]


class DimensionError(ValueError):
    """Несовпадение размерностей векторов"""


class Objective(str, Enum):
    """Целевая функция вида a(Y)·Σ b(Y_l)·V_l"""
    FPR = "fpr"
    SET_SIZE = "set-size"


def as_labels(labels: ArrayLike) -> npt.NDArray[np.bool_]:
    """Проверка и приведение вектора истинных меток Y"""
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"Вектор меток должен быть одномерным и непустым, получено shape={arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("Вектор меток должен содержать только 0 и 1")
    return arr.astype(bool)


def as_decision(bits: ArrayLike) -> npt.NDArray[np.bool_]:
    """Проверка и приведение жёсткого решения U или V"""
    arr = np.asarray(bits)
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("Жёсткое решение должно содержать только 0 и 1")
    return arr.astype(bool)


def clamp_scores(scores: ArrayLike) -> npt.NDArray[np.float64]:
    """Скоры в диапазон [0, 1 − ε_s], чтобы порог λ ≥ 1 давал нулевое решение"""
    return np.clip(np.asarray(scores, dtype=np.float64), 0.0, 1.0 - config.SCORE_EPS)


def as_weights(weights: ArrayLike) -> npt.NDArray[np.float64]:
    """Проверка вектора весов на симплексе"""
    arr = np.asarray(weights, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"Вектор весов должен быть одномерным, получено shape={arr.shape}")
    if (arr < 0).any() or (arr > 1).any():
        raise ValueError(f"Веса должны лежать в [0, 1]: {arr}")
    if abs(arr.sum() - 1.0) > config.WEIGHT_TOL:
        raise ValueError(f"Сумма весов должна быть равна 1, получено {arr.sum()!r}")
    return arr


def _check_same_length(truth: npt.NDArray, decision: npt.NDArray):
    if truth.shape != decision.shape:
        raise DimensionError(
            f"Длины векторов не совпадают: {truth.shape[-1]} и {decision.shape[-1]}"
        )


def local_predict(scores: ArrayLike, threshold: float) -> npt.NDArray[np.bool_]:
    """U = 1{S ≥ λ} поэлементно (сравнение включительное)"""
    return np.asarray(scores) >= threshold


def combine(predictions: ArrayLike, weights: ArrayLike) -> npt.NDArray[np.float64]:
    """
    Взвешенное решение R = Σ_k β_k U_k

    Args:
        predictions: матрица K×L жёстких решений сенсоров
        weights: веса β длины K

    Returns:
        Вектор R длины L со значениями в [0, 1]
    """
    bits = np.atleast_2d(np.asarray(predictions)).astype(bool)
    beta = as_weights(weights)
    if bits.shape[0] != beta.size:
        raise DimensionError(f"Решений сенсоров {bits.shape[0]}, а весов {beta.size}")

    soft = beta @ bits
    # Где все сенсоры согласны, выпуклая комбинация равна биту точно
    soft[bits.all(axis=0)] = 1.0
    soft[~bits.any(axis=0)] = 0.0
    return np.clip(soft, 0.0, 1.0)


def global_predict(soft: ArrayLike, threshold: float) -> npt.NDArray[np.bool_]:
    """V = 1{R ≥ θ}"""
    return np.asarray(soft, dtype=np.float64) >= threshold


def fnr(truth: ArrayLike, decision: ArrayLike) -> float:
    """Доля пропущенных релевантных меток; 0, если релевантных меток нет"""
    y = as_labels(truth)
    v = as_decision(decision)
    _check_same_length(y, v)

    positives = int(y.sum())
    if positives == 0:
        return 0.0
    return float(np.count_nonzero(y & ~v)) / positives


def fpr(truth: ArrayLike, decision: ArrayLike) -> float:
    """Доля нерелевантных меток, отмеченных как релевантные; 0, если таких меток нет"""
    y = as_labels(truth)
    v = as_decision(decision)
    _check_same_length(y, v)

    negatives = y.size - int(y.sum())
    if negatives == 0:
        return 0.0
    return float(np.count_nonzero(~y & v)) / negatives


def local_fpr(truth: ArrayLike, local: ArrayLike) -> float:
    """FPR локального решения сенсора U_k"""
    return fpr(truth, local)


def objective_value(truth: ArrayLike, decision: ArrayLike,
                    spec: Objective = Objective.FPR) -> float:
    """a(Y)·Σ_l b(Y_l)·V_l для выбранной целевой функции"""
    spec = Objective(spec)
    if spec is Objective.FPR:
        return fpr(truth, decision)

    y = as_labels(truth)
    v = as_decision(decision)
    _check_same_length(y, v)
    return float(np.count_nonzero(v))


def objective_scale(truth: ArrayLike, spec: Objective = Objective.FPR) -> float:
    """
    Множитель a(Y)·Σ_l b(Y_l): значение цели на решении из одних единиц.
    Для FPR равен 1, для размера множества равен L.
    """
    spec = Objective(spec)
    if spec is Objective.FPR:
        return 1.0
    return float(as_labels(truth).size)


def local_objectives(truth: ArrayLike, predictions: ArrayLike,
                     spec: Objective = Objective.FPR) -> npt.NDArray[np.float64]:
    """Значения цели для каждого сенсора (P_k для FPR)"""
    bits = np.atleast_2d(np.asarray(predictions))
    return np.array([objective_value(truth, row, spec) for row in bits], dtype=np.float64)
