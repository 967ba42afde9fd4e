"""
Онлайн-контроллеры D-CRC и CD-CRC.

Оба контроллера устроены как явные машины состояний: step() принимает скоры
сенсоров на шаге t и источник обратной связи, возвращает глобальное
решение V, запись шага и новое состояние. Исходное состояние не
изменяется.

Порядок действий внутри шага: локальные решения → стоимость передачи →
объединение → обратная связь → локальные пороги → глобальный порог →
веса сенсоров.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp, softmax

import config
from codec import BlockCodec
from core import (
    ArrayLike, DimensionError, as_weights, clamp_scores, combine,
    global_predict, local_predict,
)

logger = logging.getLogger(__name__)


class InvariantError(RuntimeError):
    """Состояние контроллера вышло из доказанного диапазона"""


class Scheme(str, Enum):
    DCRC = "dcrc"
    CDCRC = "cdcrc"
    UCDCRC = "u-cdcrc"

    @property
    def allocation(self) -> "AllocationMode":
        if self is Scheme.UCDCRC:
            return AllocationMode.UNIFORM
        return AllocationMode.PROPORTIONAL


class AllocationMode(str, Enum):
    PROPORTIONAL = "proportional"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class Feedback:
    """Обратная связь шага t"""
    fnr: float                      # N^t, возможно консервативная оценка N̂^t
    true_fnr: float                 # фактический N^t (для журнала)
    objective: float                # P^t
    local_objectives: npt.NDArray[np.float64]   # P^t_k
    scale: float = 1.0              # a(Y^t)·Σ b(Y^t_l)


FeedbackProvider = Callable[[npt.NDArray[np.bool_], npt.NDArray[np.bool_]], Feedback]


@dataclass(frozen=True)
class StepRecord:
    """Всё, что контроллер видел и использовал на шаге t"""
    t: int
    decision: npt.NDArray[np.bool_] = field(repr=False)
    fnr: float
    fnr_feedback: float
    objective: float
    scale: float
    local_objectives: npt.NDArray[np.float64]
    costs: npt.NDArray[np.float64]
    capacities: npt.NDArray[np.float64]
    lambdas: npt.NDArray[np.float64]
    theta: float
    theta_tilde: float
    weights: npt.NDArray[np.float64]
    eta: float

    @property
    def load(self) -> float:
        return float(self.costs.sum())

    def as_row(self) -> Dict[str, float]:
        row = {
            "t": self.t,
            "fnr": self.fnr,
            "fnr_feedback": self.fnr_feedback,
            "fpr": self.objective,
            "load": self.load,
            "scale": self.scale,
            "theta": self.theta,
            "theta_tilde": self.theta_tilde,
            "eta": self.eta,
        }
        for k in range(self.weights.size):
            n = k + 1
            row[f"fpr_{n}"] = float(self.local_objectives[k])
            row[f"cost_{n}"] = float(self.costs[k])
            row[f"capacity_{n}"] = float(self.capacities[k])
            row[f"lambda_{n}"] = float(self.lambdas[k])
            row[f"beta_{n}"] = float(self.weights[k])
        return row


@dataclass(frozen=True)
class DcrcState:
    t: int
    common_lambda: float
    fixed_theta: float
    weights: npt.NDArray[np.float64]
    cumulative_gap: float
    cumulative_losses: npt.NDArray[np.float64]
    learning_rate: float
    step_size: float
    alpha: float

    @property
    def num_sensors(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class CdcrcState:
    t: int
    local_lambdas: npt.NDArray[np.float64]
    corrected_theta: float
    offset: float
    weights: npt.NDArray[np.float64]
    cumulative_gap: float
    cumulative_losses: npt.NDArray[np.float64]
    learning_rate: float
    gamma: float
    mu: float
    alpha: float
    capacity: float
    allocation: AllocationMode = AllocationMode.PROPORTIONAL

    @property
    def num_sensors(self) -> int:
        return self.weights.size

    @property
    def theta(self) -> float:
        return self.corrected_theta - self.offset

    @property
    def theta_range(self) -> Tuple[float, float]:
        """[δ − μ(1−α), 1 + δ + μα]"""
        return (self.offset - self.mu * (1 - self.alpha),
                1 + self.offset + self.mu * self.alpha)


# === Строительные блоки ===

def learning_rate_from_gap(gap: float, num_sensors: int) -> float:
    """η = ln K / max(Γ, floor); для K = 1 всегда 0"""
    if num_sensors <= 1:
        return 0.0
    return math.log(num_sensors) / max(gap, config.ETA_GAP_FLOOR)


def allocate_capacity(weights: ArrayLike, capacity: float,
                      mode: AllocationMode = AllocationMode.PROPORTIONAL) -> npt.NDArray[np.float64]:
    """Доли ёмкости канала C^t_k: β_k·C или C/K"""
    beta = as_weights(weights)
    if not 0.0 <= capacity <= beta.size:
        raise ValueError(f"Ёмкость C должна лежать в [0, {beta.size}], получено {capacity}")

    if AllocationMode(mode) is AllocationMode.UNIFORM:
        return np.full(beta.size, capacity / beta.size)
    return beta * capacity


def update_local_threshold(lam: float, cost: float, capacity: float,
                           fnr: float, alpha: float, gamma: float) -> float:
    """Трёхвариантное обновление локального порога λ_k"""
    if cost > capacity:
        delta = cost - capacity
    elif lam >= -gamma:
        delta = max(fnr - alpha, cost - capacity)
    else:
        delta = 0.0
    return lam - gamma * delta


def update_global_threshold(theta_tilde: float, fnr: float, alpha: float,
                            mu: float, offset: float) -> Tuple[float, float]:
    """θ̃' = θ̃ − μ(N − α); θ' = θ̃' − δ"""
    next_tilde = theta_tilde - mu * (fnr - alpha)
    return next_tilde, next_tilde - offset


def eg_update(cumulative_losses: ArrayLike, eta: float) -> npt.NDArray[np.float64]:
    """β_k ∝ exp(−η·L_k) с вычитанием минимума перед экспонентой"""
    losses = np.asarray(cumulative_losses, dtype=np.float64)
    if losses.ndim != 1 or losses.size == 0:
        raise DimensionError(f"Ожидался вектор потерь, получено shape={losses.shape}")

    if eta <= 0 or np.all(losses == losses[0]):
        return np.full(losses.size, 1.0 / losses.size)
    return softmax(-eta * (losses - losses.min()))


def mix_gap_increment(weights: ArrayLike, losses: ArrayLike, eta: float) -> float:
    """
    Σ β_k ℓ_k + (1/η)·ln Σ β_k e^{−η ℓ_k}: зазор Йенсена между линейной
    и log-sum-exp смесью потерь. Для η = 0 берётся предел (0).
    """
    beta = np.asarray(weights, dtype=np.float64)
    ell = np.asarray(losses, dtype=np.float64)
    if beta.shape != ell.shape:
        raise DimensionError(f"Весов {beta.size}, а потерь {ell.size}")
    if eta <= 0:
        return 0.0

    shifted = ell - ell.min()
    linear = float(beta @ shifted)
    if eta * shifted.max() < 1.0:
        mixed = math.log1p(float(beta @ np.expm1(-eta * shifted))) / eta
    else:
        mixed = float(logsumexp(-eta * shifted, b=beta)) / eta
    return linear + mixed


def update_learning_rate(prior_gap: float, weights: ArrayLike, losses: ArrayLike,
                         eta: float) -> Tuple[float, float]:
    """Возвращает (η^{t+1}, Γ^t)"""
    if prior_gap < 0:
        raise ValueError(f"Накопленный зазор должен быть неотрицательным: {prior_gap}")
    increment = max(0.0, mix_gap_increment(weights, losses, eta))
    gap = prior_gap + increment
    return learning_rate_from_gap(gap, np.asarray(weights).size), gap


# === Состояния ===

def initial_dcrc_state(num_sensors: int, alpha: float = config.ALPHA,
                       rho: float = config.RHO, theta: float = config.THETA,
                       initial_lambda: float = 0.0) -> DcrcState:
    """λ¹ = 0, β¹ = 1/K, Δ⁰ = 0"""
    if num_sensors < 1:
        raise ValueError(f"Число сенсоров должно быть положительным: {num_sensors}")
    if rho <= 0:
        raise ValueError(f"Шаг ρ должен быть положительным: {rho}")
    if not 0 < theta <= 1:
        raise ValueError(f"Глобальный порог θ должен лежать в (0, 1]: {theta}")

    return DcrcState(
        t=1,
        common_lambda=float(initial_lambda),
        fixed_theta=float(theta),
        weights=np.full(num_sensors, 1.0 / num_sensors),
        cumulative_gap=0.0,
        cumulative_losses=np.zeros(num_sensors),
        learning_rate=learning_rate_from_gap(0.0, num_sensors),
        step_size=float(rho),
        alpha=float(alpha),
    )


def initial_cdcrc_state(num_sensors: int, alpha: float = config.ALPHA,
                        capacity: float = config.CAPACITY,
                        gamma: float = config.GAMMA, mu: float = config.MU,
                        offset: Optional[float] = None,
                        allocation: AllocationMode = AllocationMode.PROPORTIONAL) -> CdcrcState:
    """λ¹_k = 0, θ¹ = 0 (θ̃¹ = δ), β¹ = 1/K, Γ⁰ = 0"""
    if num_sensors < 1:
        raise ValueError(f"Число сенсоров должно быть положительным: {num_sensors}")
    if gamma <= 0 or mu <= 0:
        raise ValueError(f"Шаги γ и μ должны быть положительными: γ={gamma}, μ={mu}")
    if not 0.0 <= capacity <= num_sensors:
        raise ValueError(f"Ёмкость C должна лежать в [0, {num_sensors}], получено {capacity}")
    if offset is None:
        offset = mu * (1 - alpha) + config.DELTA_OFFSET
    if offset <= mu * (1 - alpha):
        raise ValueError(
            f"Смещение δ={offset} должно быть больше μ(1−α)={mu * (1 - alpha)}"
        )

    return CdcrcState(
        t=1,
        local_lambdas=np.zeros(num_sensors),
        corrected_theta=float(offset),
        offset=float(offset),
        weights=np.full(num_sensors, 1.0 / num_sensors),
        cumulative_gap=0.0,
        cumulative_losses=np.zeros(num_sensors),
        learning_rate=learning_rate_from_gap(0.0, num_sensors),
        gamma=float(gamma),
        mu=float(mu),
        alpha=float(alpha),
        capacity=float(capacity),
        allocation=AllocationMode(allocation),
    )


def _weight_violations(weights: npt.NDArray[np.float64]) -> List[str]:
    problems = []
    if (weights < -config.WEIGHT_TOL).any() or (weights > 1 + config.WEIGHT_TOL).any():
        problems.append(f"веса вне [0, 1]: {weights}")
    if abs(weights.sum() - 1.0) > config.WEIGHT_TOL:
        problems.append(f"сумма весов {weights.sum()!r} != 1")
    return problems


def dcrc_invariant_violations(state: DcrcState) -> List[str]:
    problems = _weight_violations(state.weights)
    if state.cumulative_gap < 0:
        problems.append(f"накопленный зазор отрицателен: {state.cumulative_gap}")
    if not 0 < state.fixed_theta <= 1:
        problems.append(f"θ={state.fixed_theta} вне (0, 1]")
    return problems


def cdcrc_invariant_violations(state: CdcrcState, check_upper: bool = True) -> List[str]:
    """
    Нарушения доказанных инвариантов CD-CRC.

    Верхняя граница θ̃ выводится в предположении, что на каждом шаге есть
    хотя бы одна релевантная метка, поэтому её проверку можно отключить.
    """
    problems = _weight_violations(state.weights)
    if state.cumulative_gap < 0:
        problems.append(f"накопленный зазор отрицателен: {state.cumulative_gap}")
    if state.offset <= state.mu * (1 - state.alpha):
        problems.append(f"δ={state.offset} ≤ μ(1−α)")

    low, high = state.theta_range
    if state.corrected_theta < low - config.BOUND_TOL:
        problems.append(f"θ̃={state.corrected_theta} ниже {low}")
    if check_upper and state.corrected_theta > high + config.BOUND_TOL:
        problems.append(f"θ̃={state.corrected_theta} выше {high}")

    floor = -2 * state.gamma
    below = np.flatnonzero(state.local_lambdas < floor - config.BOUND_TOL)
    for k in below:
        problems.append(f"λ_{k + 1}={state.local_lambdas[k]} ниже −2γ={floor}")
    return problems


def _enforce(problems: List[str], t: int, scheme: str):
    if not problems:
        return
    message = f"{scheme}, шаг {t}: " + "; ".join(problems)
    logger.error(f"❌ Нарушение инварианта: {message}")
    if config.STRICT_INVARIANTS:
        raise InvariantError(message)


def _sensor_scores(scores: ArrayLike, num_sensors: int) -> npt.NDArray[np.float64]:
    matrix = np.atleast_2d(clamp_scores(scores))
    if matrix.ndim != 2 or matrix.shape[0] != num_sensors or matrix.shape[1] == 0:
        raise DimensionError(
            f"Ожидались скоры {num_sensors}×L, получено shape={np.shape(scores)}"
        )
    return matrix


def _check_feedback(fb: Feedback, num_sensors: int):
    if np.asarray(fb.local_objectives).size != num_sensors:
        raise DimensionError(
            f"Обратная связь содержит {np.asarray(fb.local_objectives).size} локальных значений, "
            f"ожидалось {num_sensors}"
        )


# === Шаги ===

def dcrc_step(state: DcrcState, scores: ArrayLike, feedback_provider: FeedbackProvider,
              codec: Optional[BlockCodec] = None) -> Tuple[npt.NDArray[np.bool_], StepRecord, DcrcState]:
    """Один шаг D-CRC: общий локальный порог λ и фиксированный θ"""
    matrix = _sensor_scores(scores, state.num_sensors)

    locals_ = local_predict(matrix, state.common_lambda)
    if codec is not None:
        costs = np.array([codec.bit_cost(row) for row in locals_])
    else:
        costs = np.full(state.num_sensors, np.nan)

    soft = combine(locals_, state.weights)
    decision = global_predict(soft, state.fixed_theta)

    fb = feedback_provider(decision, locals_)
    _check_feedback(fb, state.num_sensors)
    losses = np.asarray(fb.local_objectives, dtype=np.float64)

    next_lambda = state.common_lambda - state.step_size * (fb.fnr - state.alpha)
    cumulative = state.cumulative_losses + losses
    eta, gap = update_learning_rate(state.cumulative_gap, state.weights, losses, state.learning_rate)
    weights = eg_update(cumulative, eta)

    record = StepRecord(
        t=state.t,
        decision=decision,
        fnr=fb.true_fnr,
        fnr_feedback=fb.fnr,
        objective=fb.objective,
        scale=fb.scale,
        local_objectives=losses,
        costs=costs,
        capacities=np.full(state.num_sensors, np.nan),
        lambdas=np.full(state.num_sensors, state.common_lambda),
        theta=state.fixed_theta,
        theta_tilde=float("nan"),
        weights=state.weights,
        eta=state.learning_rate,
    )
    new_state = replace(
        state,
        t=state.t + 1,
        common_lambda=next_lambda,
        weights=weights,
        cumulative_gap=gap,
        cumulative_losses=cumulative,
        learning_rate=eta,
    )
    logger.debug(f"D-CRC t={state.t}: N={fb.fnr:.4f} P={fb.objective:.4f} λ'={next_lambda:.4f}")

    _enforce(dcrc_invariant_violations(new_state), state.t, "D-CRC")
    return decision, record, new_state


def cdcrc_step(state: CdcrcState, scores: ArrayLike, codec: BlockCodec,
               feedback_provider: FeedbackProvider) -> Tuple[npt.NDArray[np.bool_], StepRecord, CdcrcState]:
    """Один шаг CD-CRC: локальные пороги под ёмкость и скорректированный θ̃ под FNR"""
    matrix = _sensor_scores(scores, state.num_sensors)

    locals_ = np.stack([
        local_predict(matrix[k], state.local_lambdas[k]) for k in range(state.num_sensors)
    ])
    costs = np.array([codec.bit_cost(row) for row in locals_])

    theta = state.theta
    soft = combine(locals_, state.weights)
    decision = global_predict(soft, theta)

    fb = feedback_provider(decision, locals_)
    _check_feedback(fb, state.num_sensors)

    capacities = allocate_capacity(state.weights, state.capacity, state.allocation)
    lambdas = np.array([
        update_local_threshold(state.local_lambdas[k], costs[k], capacities[k],
                               fb.fnr, state.alpha, state.gamma)
        for k in range(state.num_sensors)
    ])
    next_tilde, _ = update_global_threshold(state.corrected_theta, fb.fnr, state.alpha,
                                            state.mu, state.offset)

    losses = np.asarray(fb.local_objectives, dtype=np.float64) / state.corrected_theta
    cumulative = state.cumulative_losses + losses
    eta, gap = update_learning_rate(state.cumulative_gap, state.weights, losses, state.learning_rate)
    weights = eg_update(cumulative, eta)

    record = StepRecord(
        t=state.t,
        decision=decision,
        fnr=fb.true_fnr,
        fnr_feedback=fb.fnr,
        objective=fb.objective,
        scale=fb.scale,
        local_objectives=np.asarray(fb.local_objectives, dtype=np.float64),
        costs=costs,
        capacities=capacities,
        lambdas=state.local_lambdas,
        theta=theta,
        theta_tilde=state.corrected_theta,
        weights=state.weights,
        eta=state.learning_rate,
    )
    new_state = replace(
        state,
        t=state.t + 1,
        local_lambdas=lambdas,
        corrected_theta=next_tilde,
        weights=weights,
        cumulative_gap=gap,
        cumulative_losses=cumulative,
        learning_rate=eta,
    )
    logger.debug(
        f"CD-CRC t={state.t}: N={fb.fnr:.4f} P={fb.objective:.4f} "
        f"B={record.load:.4f} θ̃'={next_tilde:.4f}"
    )

    problems = cdcrc_invariant_violations(new_state, check_upper=False)
    _enforce(problems, state.t, "CD-CRC")
    high = new_state.theta_range[1]
    if new_state.corrected_theta > high + config.BOUND_TOL:
        logger.warning(
            f"⚠️ CD-CRC, шаг {state.t}: θ̃={new_state.corrected_theta:.6f} выше {high:.6f} "
            f"(в экземплярах нет релевантных меток?)"
        )
    return decision, record, new_state
