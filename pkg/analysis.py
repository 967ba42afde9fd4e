"""
Теоретические величины по записанным траекториям и проверка доказанных
неравенств: границы FNR, нагрузки канала и FPR, поэлементная оценка FPR
через веса сенсоров, диапазоны порогов и регрет относительно лучшего
сенсора.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd

import config
from control import Scheme, StepRecord, update_local_threshold
from core import Objective

logger = logging.getLogger(__name__)

BASE_COLUMNS = ["t", "fnr", "fnr_feedback", "fpr", "load", "scale",
                "theta", "theta_tilde", "eta"]
SENSOR_PREFIXES = ["fpr", "cost", "capacity", "lambda", "beta"]


class SchemeMismatchError(ValueError):
    """Траектория получена другой схемой"""


class TrajectoryFormatError(ValueError):
    """Файл траектории повреждён или имеет неверный формат"""


@dataclass(frozen=True)
class RunParams:
    """Параметры запуска, нужные для вычисления границ"""
    scheme: Scheme
    alpha: float = config.ALPHA
    capacity: float = config.CAPACITY
    rho: float = config.RHO
    theta: float = config.THETA
    gamma: float = config.GAMMA
    mu: float = config.MU
    offset: Optional[float] = None
    objective: Objective = Objective.FPR

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.offset is None:
            object.__setattr__(self, "offset", self.mu * (1 - self.alpha) + config.DELTA_OFFSET)

    @property
    def theta_floor(self) -> float:
        """δ − μ(1−α)"""
        return self.offset - self.mu * (1 - self.alpha)

    @property
    def theta_ceiling(self) -> float:
        """1 + δ + μα"""
        return 1 + self.offset + self.mu * self.alpha


class Trajectory:
    """Упорядоченные записи шагов t = 1..T и параметры запуска"""

    def __init__(self, frame: pd.DataFrame, params: RunParams):
        self.frame = frame.reset_index(drop=True)
        self.params = params
        self._validate()

    def _validate(self):
        missing = [c for c in BASE_COLUMNS if c not in self.frame.columns]
        if missing:
            raise TrajectoryFormatError(f"В траектории нет столбцов: {', '.join(missing)}")
        if self.frame.empty:
            raise TrajectoryFormatError("Пустая траектория")

        k = 0
        while f"beta_{k + 1}" in self.frame.columns:
            k += 1
        if k == 0:
            raise TrajectoryFormatError("В траектории нет столбцов сенсоров beta_k")
        for prefix in SENSOR_PREFIXES:
            for n in range(1, k + 1):
                if f"{prefix}_{n}" not in self.frame.columns:
                    raise TrajectoryFormatError(f"В траектории нет столбца {prefix}_{n}")
        self.num_sensors = k

        for column in self.frame.columns:
            if not pd.api.types.is_numeric_dtype(self.frame[column]):
                raise TrajectoryFormatError(f"Нечисловые значения в столбце {column}")

        steps = self.frame["t"].to_numpy()
        expected = np.arange(1, len(self.frame) + 1)
        if not np.array_equal(steps, expected):
            bad = int(np.flatnonzero(steps != expected)[0])
            raise TrajectoryFormatError(
                f"Шаги должны идти подряд с 1: в строке {bad + 1} t={steps[bad]}"
            )

    @classmethod
    def from_records(cls, records: Sequence[StepRecord], params: RunParams) -> "Trajectory":
        if not records:
            raise TrajectoryFormatError("Пустая траектория")
        return cls(pd.DataFrame([r.as_row() for r in records]), params)

    @classmethod
    def read_csv(cls, path: Union[str, Path], params: RunParams) -> "Trajectory":
        try:
            frame = pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise TrajectoryFormatError(f"Не удалось прочитать {path}: {e}") from e
        return cls(frame, params)

    def to_csv(self, path: Union[str, Path]):
        self.frame.to_csv(path, index=False, float_format=config.CSV_FLOAT_FORMAT,
                          lineterminator="\n", encoding="utf-8")

    @property
    def horizon(self) -> int:
        return len(self.frame)

    @property
    def detected_family(self) -> Scheme:
        """dcrc, если скорректированный порог не записан, иначе cdcrc"""
        if self.frame["theta_tilde"].isna().all():
            return Scheme.DCRC
        return Scheme.CDCRC

    def column(self, name: str) -> npt.NDArray[np.float64]:
        return self.frame[name].to_numpy(dtype=np.float64)

    def sensors(self, prefix: str) -> npt.NDArray[np.float64]:
        """Матрица T×K столбцов prefix_1..prefix_K"""
        names = [f"{prefix}_{n}" for n in range(1, self.num_sensors + 1)]
        return self.frame[names].to_numpy(dtype=np.float64)


@dataclass(frozen=True)
class BoundCheck:
    check: str
    lhs: float
    rhs: float
    satisfied: bool
    gating: bool = True
    detail: str = ""

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass
class BoundReport:
    scheme: Scheme
    checks: List[BoundCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """Все проверки, влияющие на код возврата, выполнены"""
        return all(c.satisfied for c in self.checks if c.gating)

    @property
    def failures(self) -> List[BoundCheck]:
        return [c for c in self.checks if c.gating and not c.satisfied]

    def get(self, name: str) -> BoundCheck:
        for check in self.checks:
            if check.check == name:
                return check
        raise KeyError(name)

    def to_frame(self, seed: Optional[int] = None) -> pd.DataFrame:
        return pd.DataFrame([
            {
                "seed": seed,
                "check": c.check,
                "lhs": c.lhs,
                "rhs": c.rhs,
                "slack": c.slack,
                "satisfied": c.satisfied,
                "gating": c.gating,
                "detail": c.detail,
            }
            for c in self.checks
        ], columns=["seed", "check", "lhs", "rhs", "slack", "satisfied", "gating", "detail"])


def _holds(lhs, rhs, strict: bool = False):
    """lhs ≤ rhs (или lhs < rhs) с допуском на ошибки округления"""
    rhs = np.asarray(rhs, dtype=np.float64)
    tol = config.BOUND_TOL * np.maximum(1.0, np.abs(rhs))
    if strict:
        return np.asarray(lhs) < rhs + tol
    return np.asarray(lhs) <= rhs + tol


def _require_family(traj: Trajectory, family: Scheme):
    if family is Scheme.DCRC:
        wanted = traj.detected_family is Scheme.DCRC and traj.params.scheme is Scheme.DCRC
    else:
        wanted = traj.detected_family is Scheme.CDCRC and traj.params.scheme is not Scheme.DCRC
    if not wanted:
        raise SchemeMismatchError(
            f"Проверка для {family.value}, а траектория получена схемой "
            f"{traj.params.scheme.value} (по данным: {traj.detected_family.value})"
        )


def _prefix_check(name: str, values: npt.NDArray[np.float64], rhs_of_t, strict: bool,
                  gating: bool = True) -> BoundCheck:
    """Проверка среднего по каждому префиксу 1..t; в detail указан первый нарушающий шаг"""
    steps = np.arange(1, values.size + 1)
    averages = np.cumsum(values) / steps
    bounds = np.array([rhs_of_t(int(t)) for t in steps])
    ok = _holds(averages, bounds, strict)

    detail = ""
    if not ok.all():
        first = int(np.flatnonzero(~ok)[0])
        detail = (f"нарушено на шаге t={first + 1}: "
                  f"{averages[first]:.12g} {'≥' if strict else '>'} {bounds[first]:.12g}")
    return BoundCheck(name, float(averages[-1]), float(bounds[-1]), bool(ok.all()), gating, detail)


# === Границы D-CRC ===

def regret_term_dcrc(local: npt.NDArray[np.float64], theta: float) -> Tuple[float, bool]:
    """
    Вычисление ε по локальным значениям P^t_k (матрица T×K).
    Возвращает (ε, был ли ограничен снизу отрицательный множитель).
    """
    stats = _range_statistics(local)
    if stats is None:
        return 0.0, False
    horizon, log_k, max_dp, sum_dp, sum_max, sum_min, best_sum = stats

    f1, c1 = _clamped(log_k * max_dp / sum_dp)
    f2, c2 = _clamped(sum_max - best_sum)
    f3, c3 = _clamped(best_sum - sum_min)
    epsilon = (2 / (horizon * theta)) * math.sqrt(f1) * math.sqrt(f2) * math.sqrt(f3)
    epsilon += (16 / 3 * log_k + 2) * max_dp / (horizon * theta)
    return epsilon, c1 or c2 or c3


def theorem1_bounds(traj: Trajectory, rho: Optional[float] = None,
                    theta: Optional[float] = None, alpha: Optional[float] = None) -> List[BoundCheck]:
    """Границы FNR и FPR для D-CRC"""
    _require_family(traj, Scheme.DCRC)
    rho = traj.params.rho if rho is None else rho
    theta = traj.params.theta if theta is None else theta
    alpha = traj.params.alpha if alpha is None else alpha

    lambda1 = float(traj.column("lambda_1")[0])
    fnr_check = _prefix_check(
        "theorem1_fnr",
        traj.column("fnr"),
        lambda t: alpha + (lambda1 + rho * (1 - alpha)) / (rho * t),
        strict=False,
    )

    local = traj.sensors("fpr")
    best = float(local.mean(axis=0).min())
    epsilon, clamped = regret_term_dcrc(local, theta)
    lhs = float(traj.column("fpr").mean())
    rhs = best / theta + epsilon
    detail = f"P*={best:.12g}, ε={epsilon:.12g}"
    if clamped:
        detail += ", отрицательный множитель под корнем ограничен нулём"
    fpr_check = BoundCheck("theorem1_fpr", lhs, rhs, bool(_holds(lhs, rhs)), False, detail)
    return [fnr_check, fpr_check]


# === Границы CD-CRC ===

def theorem2_bound(theta_tilde1: float, mu: float, horizon: int, alpha: float) -> float:
    """Строгая верхняя граница среднего FNR: α + θ̃¹/(μT)"""
    if mu <= 0 or horizon < 1:
        raise ValueError(f"Нужны μ > 0 и T ≥ 1: μ={mu}, T={horizon}")
    return alpha + theta_tilde1 / (mu * horizon)


def theorem3_bound(lambdas1: Sequence[float], gamma: float, horizon: int, capacity: float) -> float:
    """Граница средней нагрузки канала: C + Σ(λ¹_k + 2γ)/(γT)"""
    if gamma <= 0 or horizon < 1:
        raise ValueError(f"Нужны γ > 0 и T ≥ 1: γ={gamma}, T={horizon}")
    lambdas1 = np.asarray(lambdas1, dtype=np.float64)
    return capacity + float((lambdas1 + 2 * gamma).sum()) / (gamma * horizon)


def lemma1_check(step: Union[StepRecord, Dict[str, float], pd.Series], offset: float,
                 num_sensors: Optional[int] = None) -> Tuple[bool, float]:
    """
    P^t ≤ (Σ_k β^t_k P^t_k + δ·scale)/θ̃^t для одного шага.
    Возвращает (выполнено, запас).
    """
    if isinstance(step, StepRecord):
        objective, scale, theta_tilde = step.objective, step.scale, step.theta_tilde
        weights, local = step.weights, step.local_objectives
    else:
        if num_sensors is None:
            num_sensors = sum(1 for key in step.keys() if str(key).startswith("beta_"))
        objective, scale, theta_tilde = step["fpr"], step["scale"], step["theta_tilde"]
        weights = np.array([step[f"beta_{n}"] for n in range(1, num_sensors + 1)])
        local = np.array([step[f"fpr_{n}"] for n in range(1, num_sensors + 1)])

    rhs = (float(np.dot(weights, local)) + offset * scale) / theta_tilde
    return bool(_holds(objective, rhs)), rhs - objective


def regret_term_cdcrc(local: npt.NDArray[np.float64], offset: float, mu: float,
                      alpha: float) -> Tuple[float, bool]:
    """Вычисление σ по локальным значениям P^t_k (матрица T×K)"""
    low = offset - mu * (1 - alpha)
    if low <= 0:
        raise ValueError(f"Нужно δ > μ(1−α): δ={offset}, μ(1−α)={mu * (1 - alpha)}")
    high = 1 + offset + mu * alpha

    stats = _range_statistics(local)
    if stats is None:
        return 0.0, False
    horizon, log_k, max_dp, sum_dp, sum_max, sum_min, best_sum = stats

    f1, c1 = _clamped(high * log_k / low * max_dp / sum_dp)
    f2, c2 = _clamped(sum_max / low - best_sum / high)
    f3, c3 = _clamped(best_sum / low - sum_min / high)
    sigma = (2 / horizon) * math.sqrt(f1) * math.sqrt(f2) * math.sqrt(f3)
    sigma += (16 / 3 * log_k + 2) * max_dp / (horizon * low)
    return sigma, c1 or c2 or c3


def theorem4_bounds(traj: Trajectory, offset: Optional[float] = None,
                    mu: Optional[float] = None, alpha: Optional[float] = None) -> BoundCheck:
    """Граница среднего FPR для CD-CRC"""
    _require_family(traj, Scheme.CDCRC)
    offset = traj.params.offset if offset is None else offset
    mu = traj.params.mu if mu is None else mu
    alpha = traj.params.alpha if alpha is None else alpha

    low = offset - mu * (1 - alpha)
    if low <= 0:
        raise ValueError(f"Нужно δ > μ(1−α): δ={offset}, μ(1−α)={mu * (1 - alpha)}")

    local = traj.sensors("fpr")
    best = float(local.mean(axis=0).min())
    sigma, clamped = regret_term_cdcrc(local, offset, mu, alpha)
    offset_term = offset * float((traj.column("scale") / traj.column("theta_tilde")).mean())

    lhs = float(traj.column("fpr").mean())
    rhs = best / low + sigma + offset_term
    detail = f"P*={best:.12g}, σ={sigma:.12g}, смещение {offset_term:.12g}"
    if clamped:
        detail += ", отрицательный множитель под корнем ограничен нулём"
    return BoundCheck("theorem4", lhs, rhs, bool(_holds(lhs, rhs)), False, detail)


def _range_statistics(local: npt.NDArray[np.float64]):
    """Суммы экстремумов P^t_k по времени; None для вырожденного диапазона"""
    local = np.atleast_2d(np.asarray(local, dtype=np.float64))
    horizon, num_sensors = local.shape
    per_max = local.max(axis=1)
    per_min = local.min(axis=1)
    spread = per_max - per_min
    sum_dp = float(spread.sum())
    if horizon == 0 or sum_dp <= 0:
        return None
    return (horizon, math.log(num_sensors), float(spread.max()), sum_dp,
            float(per_max.sum()), float(per_min.sum()), float(local.sum(axis=0).min()))


def _clamped(value: float) -> Tuple[float, bool]:
    if value >= 0:
        return value, False
    if value < -config.SQRT_CLAMP_TOL:
        logger.warning(f"⚠️ Отрицательный множитель под корнем: {value!r}, ограничен нулём")
    return 0.0, True


# === Регрет ===

@dataclass(frozen=True)
class RegretSummary:
    best_value: float           # P*
    best_sensor: int            # номер сенсора, с 1
    regret: npt.NDArray[np.float64]
    decreasing: bool


def regret_summary(traj: Trajectory) -> RegretSummary:
    """Регрет взвешенной смеси относительно лучшего сенсора в ретроспективе"""
    local = traj.sensors("fpr")
    weights = traj.sensors("beta")
    averages = local.mean(axis=0)
    best = int(np.argmin(averages))

    mixture = (weights * local).sum(axis=1)
    regret = np.cumsum(mixture - local[:, best])

    horizon = traj.horizon
    half = math.ceil(horizon / 2)
    decreasing = bool(regret[-1] / horizon <= regret[half - 1] / half + config.BOUND_TOL)
    return RegretSummary(float(averages[best]), best + 1, regret, decreasing)


# === Диапазоны и согласованность записей ===

def lemma2_range_check(traj: Trajectory) -> BoundCheck:
    """λ^t_k ≥ −2γ на каждом шаге"""
    _require_family(traj, Scheme.CDCRC)
    floor = -2 * traj.params.gamma
    lambdas = traj.sensors("lambda")
    lowest = lambdas.min(axis=1)
    ok = lowest >= floor - config.BOUND_TOL

    detail = ""
    if not ok.all():
        first = int(np.flatnonzero(~ok)[0])
        detail = f"нарушено на шаге t={first + 1}: λ={lowest[first]:.12g}"
    # lhs/rhs записаны так, чтобы запас был неотрицателен при выполнении
    return BoundCheck("lemma2_range", -float(lowest.min()), -floor, bool(ok.all()), True, detail)


def theta_range_check(traj: Trajectory) -> BoundCheck:
    """δ − μ(1−α) ≤ θ̃^t ≤ 1 + δ + μα на каждом шаге"""
    _require_family(traj, Scheme.CDCRC)
    low, high = traj.params.theta_floor, traj.params.theta_ceiling
    tilde = traj.column("theta_tilde")
    ok = (tilde >= low - config.BOUND_TOL) & (tilde <= high + config.BOUND_TOL)

    detail = f"диапазон [{low:.12g}, {high:.12g}]"
    if not ok.all():
        first = int(np.flatnonzero(~ok)[0])
        detail = f"нарушено на шаге t={first + 1}: θ̃={tilde[first]:.12g}, " + detail
    # Запас до ближайшей границы
    margin = float(np.minimum(tilde - low, high - tilde).min())
    return BoundCheck("theta_range", -margin, 0.0, bool(ok.all()), True, detail)


def lemma1_trajectory_check(traj: Trajectory) -> BoundCheck:
    _require_family(traj, Scheme.CDCRC)
    local = traj.sensors("fpr")
    weights = traj.sensors("beta")
    rhs = ((weights * local).sum(axis=1) + traj.params.offset * traj.column("scale")) \
        / traj.column("theta_tilde")
    lhs = traj.column("fpr")
    ok = _holds(lhs, rhs)

    worst = int(np.argmin(rhs - lhs))
    detail = ""
    if not ok.all():
        first = int(np.flatnonzero(~ok)[0])
        detail = f"нарушено на шаге t={first + 1}: P={lhs[first]:.12g} > {rhs[first]:.12g}"
    return BoundCheck("lemma1", float(lhs[worst]), float(rhs[worst]), bool(ok.all()), True, detail)


def recurrence_check(traj: Trajectory) -> BoundCheck:
    """Записанные пороги на шаге t+1 согласованы с правилами обновления на шаге t"""
    params = traj.params
    fnr = traj.column("fnr_feedback")
    lambdas = traj.sensors("lambda")
    worst = 0.0
    first_bad = None

    if traj.detected_family is Scheme.DCRC:
        expected = lambdas[:-1, 0] - params.rho * (fnr[:-1] - params.alpha)
        errors = np.abs(expected - lambdas[1:, 0])
    else:
        costs = traj.sensors("cost")
        capacities = traj.sensors("capacity")
        expected_lambdas = np.array([
            [update_local_threshold(lambdas[t, k], costs[t, k], capacities[t, k],
                                    fnr[t], params.alpha, params.gamma)
             for k in range(traj.num_sensors)]
            for t in range(traj.horizon - 1)
        ]).reshape(-1, traj.num_sensors)
        tilde = traj.column("theta_tilde")
        expected_tilde = tilde[:-1] - params.mu * (fnr[:-1] - params.alpha)
        errors = np.maximum(
            np.abs(expected_lambdas - lambdas[1:]).max(axis=1, initial=0.0),
            np.abs(expected_tilde - tilde[1:]),
        )

    if errors.size:
        worst = float(errors.max())
        bad = np.flatnonzero(errors > config.BOUND_TOL)
        if bad.size:
            first_bad = int(bad[0]) + 1

    detail = "" if first_bad is None else f"несогласованное обновление на шаге t={first_bad}"
    return BoundCheck("recurrence", worst, config.BOUND_TOL, first_bad is None, True, detail)


def feedback_dominance_check(traj: Trajectory) -> BoundCheck:
    """N^t ≤ N̂^t на каждом шаге"""
    gap = traj.column("fnr") - traj.column("fnr_feedback")
    ok = gap <= config.BOUND_TOL
    detail = ""
    if not ok.all():
        detail = f"N > N̂ на шаге t={int(np.flatnonzero(~ok)[0]) + 1}"
    return BoundCheck("feedback_dominance", float(gap.max()), 0.0, bool(ok.all()), True, detail)


def verify_trajectory(traj: Trajectory, scheme: Optional[Union[Scheme, str]] = None) -> BoundReport:
    """Полный набор проверок для схемы траектории"""
    if scheme is not None:
        scheme = Scheme(scheme)
        if scheme is not traj.params.scheme:
            raise SchemeMismatchError(
                f"Запрошена проверка {scheme.value}, а траектория получена схемой "
                f"{traj.params.scheme.value}"
            )
    family = Scheme.DCRC if traj.params.scheme is Scheme.DCRC else Scheme.CDCRC
    _require_family(traj, family)

    report = BoundReport(traj.params.scheme)
    if family is Scheme.DCRC:
        report.checks.extend(theorem1_bounds(traj))
    else:
        params = traj.params
        theta_tilde1 = float(traj.column("theta_tilde")[0])
        lambdas1 = traj.sensors("lambda")[0]

        report.checks.append(_prefix_check(
            "theorem2", traj.column("fnr"),
            lambda t: theorem2_bound(theta_tilde1, params.mu, t, params.alpha),
            strict=True,
        ))
        report.checks.append(_prefix_check(
            "theorem3", traj.column("load"),
            lambda t: theorem3_bound(lambdas1, params.gamma, t, params.capacity),
            strict=False,
        ))
        report.checks.append(lemma1_trajectory_check(traj))
        report.checks.append(lemma2_range_check(traj))
        report.checks.append(theta_range_check(traj))
        report.checks.append(theorem4_bounds(traj))

    report.checks.append(recurrence_check(traj))
    report.checks.append(feedback_dominance_check(traj))

    for check in report.checks:
        if check.gating and not check.satisfied:
            logger.error(f"❌ {check.check}: {check.lhs:.12g} > {check.rhs:.12g} {check.detail}")
        else:
            logger.debug(f"✅ {check.check}: запас {check.slack:.6g}")
    return report
