"""
Оркестрация экспериментов: конфигурация запуска, прогон по сидам,
усреднение, свипы по α и C, офлайн-проверка каталогов и утилиты кодека.
"""
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from tqdm import tqdm

import config
from analysis import (
    BoundReport, RunParams, Trajectory, TrajectoryFormatError,
    verify_trajectory,
)
from codec import CodecError, get_codec
from control import (
    Scheme, cdcrc_step, dcrc_step, initial_cdcrc_state, initial_dcrc_state,
)
from core import Objective
from simnet import FeedbackChannel, FeedbackMode, StreamSpec, ingest_scores, iter_synthetic

logger = logging.getLogger(__name__)

CONFIG_FILE_NAME = "run_config.cfg"
SWEEP_AXES = ("alpha", "capacity")
DEFAULT_SCHEMES = (Scheme.DCRC, Scheme.CDCRC, Scheme.UCDCRC)


class ConfigError(ValueError):
    """Ошибка конфигурации запуска; сообщение называет поле"""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class RunConfig:
    scheme: Scheme = Scheme(config.SCHEME)
    alpha: float = config.ALPHA
    capacity: float = config.CAPACITY
    K: int = config.NUM_SENSORS
    L: int = config.NUM_LABELS
    T: int = config.HORIZON
    rho: float = config.RHO
    gamma: float = config.GAMMA
    mu: float = config.MU
    delta_offset: float = config.DELTA_OFFSET
    theta: float = config.THETA
    block_size: int = config.BLOCK_SIZE
    relevance: float = config.RELEVANCE
    error_levels: Tuple[float, ...] = config.ERROR_LEVELS
    dropout: Tuple[float, ...] = (0.0,) * config.NUM_SENSORS
    score_file: Optional[Path] = None
    seeds: Tuple[int, ...] = tuple(range(config.N_SEEDS))
    feedback: FeedbackMode = FeedbackMode.EXACT
    feedback_bias: float = 0.0
    objective: Objective = Objective.FPR
    output_dir: Path = config.OUTPUT_DIR

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "feedback", FeedbackMode(self.feedback))
        object.__setattr__(self, "objective", Objective(self.objective))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if self.score_file is not None:
            object.__setattr__(self, "score_file", Path(self.score_file))
        for name in ("error_levels", "dropout", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    @property
    def offset(self) -> float:
        """δ = μ(1−α) + δ_offset"""
        return self.mu * (1 - self.alpha) + self.delta_offset

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha", f"должно лежать в [0, 1], получено {self.alpha}")
        if self.K < 1:
            raise ConfigError("K", f"должно быть положительным, получено {self.K}")
        if not 0.0 <= self.capacity <= self.K:
            raise ConfigError("capacity", f"должно лежать в [0, K={self.K}], получено {self.capacity}")
        if self.L < 1:
            raise ConfigError("L", f"должно быть положительным, получено {self.L}")
        if self.T < 1:
            raise ConfigError("T", f"должно быть положительным, получено {self.T}")
        for name in ("rho", "gamma", "mu"):
            if getattr(self, name) <= 0:
                raise ConfigError(name, f"шаг должен быть положительным, получено {getattr(self, name)}")
        if self.delta_offset <= 0:
            raise ConfigError("delta_offset", f"должно быть положительным, получено {self.delta_offset}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("theta", f"должно лежать в (0, 1], получено {self.theta}")
        if not 1 <= self.block_size <= config.MAX_BLOCK_SIZE:
            raise ConfigError("block_size", f"должно лежать в [1, {config.MAX_BLOCK_SIZE}], получено {self.block_size}")
        if self.L % self.block_size:
            raise ConfigError("L", f"L={self.L} должно делиться на block_size={self.block_size}")
        if not 0.0 < self.relevance < 1.0:
            raise ConfigError("relevance", f"должно лежать в (0, 1), получено {self.relevance}")
        if len(self.error_levels) != self.K:
            raise ConfigError("error_levels", f"нужно {self.K} значений, получено {len(self.error_levels)}")
        if any(not 0.0 <= e <= 1.0 for e in self.error_levels):
            raise ConfigError("error_levels", f"значения должны лежать в [0, 1]: {self.error_levels}")
        if len(self.dropout) != self.K:
            raise ConfigError("dropout", f"нужно {self.K} значений, получено {len(self.dropout)}")
        if any(not 0.0 <= d <= 1.0 for d in self.dropout):
            raise ConfigError("dropout", f"значения должны лежать в [0, 1]: {self.dropout}")
        if not self.seeds:
            raise ConfigError("seeds", "нужен хотя бы один сид")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", f"сиды повторяются: {self.seeds}")
        if not 0.0 <= self.feedback_bias <= self.alpha:
            raise ConfigError(
                "feedback_bias", f"должно лежать в [0, alpha={self.alpha}], получено {self.feedback_bias}"
            )
        if self.feedback_bias > 0 and self.feedback is not FeedbackMode.CONSERVATIVE:
            raise ConfigError("feedback_bias", "смещение задаётся только для feedback=conservative")

    def run_params(self) -> RunParams:
        return RunParams(
            scheme=self.scheme,
            alpha=self.alpha,
            capacity=self.capacity,
            rho=self.rho,
            theta=self.theta,
            gamma=self.gamma,
            mu=self.mu,
            offset=self.offset,
            objective=self.objective,
        )

    def stream_spec(self, seed: int) -> StreamSpec:
        return StreamSpec.from_levels(
            self.error_levels,
            num_labels=self.L,
            horizon=self.T,
            dropout=self.dropout,
            relevance=self.relevance,
            seed=seed,
            block_size=self.block_size,
        )

    def to_lines(self) -> List[str]:
        """Строки key=value для run_config.cfg"""
        lines = []
        for key, value in asdict(self).items():
            if value is None:
                continue
            if isinstance(value, (tuple, list)):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, (Scheme, FeedbackMode, Objective)):
                value = value.value
            elif isinstance(value, float):
                value = repr(value)
            elif isinstance(value, Path):
                value = value.resolve()
            lines.append(f"{key}={value}")
        return lines

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("# crcnet run config\n")
            f.write("\n".join(self.to_lines()) + "\n")


# === Разбор конфигурации ===

def _parse_list(raw: str) -> List[str]:
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        raw = raw[1:-1]
    return [item.strip().strip("'\"") for item in raw.split(",") if item.strip()]


def _as_float(name: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(name, f"ожидалось число, получено {raw!r}")


def _as_int(name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(name, f"ожидалось целое число, получено {raw!r}")


def _as_floats(name: str, raw: str) -> Tuple[float, ...]:
    return tuple(_as_float(name, item) for item in _parse_list(raw))


def _as_enum(name: str, raw: str, enum_cls):
    try:
        return enum_cls(raw.strip())
    except ValueError:
        allowed = ", ".join(member.value for member in enum_cls)
        raise ConfigError(name, f"допустимые значения: {allowed}; получено {raw!r}")


_FLOAT_KEYS = ("alpha", "capacity", "rho", "gamma", "mu", "delta_offset", "theta",
               "relevance", "feedback_bias")
_INT_KEYS = ("K", "L", "T", "block_size", "n_seeds")
KNOWN_KEYS = set(_FLOAT_KEYS) | set(_INT_KEYS) | {
    "scheme", "error_levels", "dropout", "score_file", "seeds", "feedback",
    "objective", "output_dir",
}


def parse_run_config(values: Dict[str, Optional[str]], base_dir: Optional[Path] = None) -> RunConfig:
    """Построение RunConfig из словаря key → строка"""
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "неизвестный ключ")
    for key, raw in values.items():
        if raw is None or not str(raw).strip():
            raise ConfigError(key, "пустое значение")

    kwargs = {}
    for key in _FLOAT_KEYS:
        if key in values:
            kwargs[key] = _as_float(key, values[key])
    for key in ("K", "L", "T", "block_size"):
        if key in values:
            kwargs[key] = _as_int(key, values[key])

    if "scheme" in values:
        kwargs["scheme"] = _as_enum("scheme", values["scheme"], Scheme)
    if "feedback" in values:
        kwargs["feedback"] = _as_enum("feedback", values["feedback"], FeedbackMode)
    if "objective" in values:
        kwargs["objective"] = _as_enum("objective", values["objective"], Objective)
    if "output_dir" in values:
        kwargs["output_dir"] = Path(values["output_dir"])

    if "error_levels" in values:
        raw = values["error_levels"].strip()
        if raw in config.SCENARIOS:
            kwargs["error_levels"] = tuple(config.SCENARIOS[raw])
        else:
            kwargs["error_levels"] = _as_floats("error_levels", raw)

    if "score_file" in values:
        path = Path(values["score_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        kwargs["score_file"] = path
        kwargs.update(_score_file_dimensions(path))
        kwargs["error_levels"] = (0.0,) * kwargs["K"]
        kwargs["seeds"] = (0,)
    elif "seeds" in values:
        kwargs["seeds"] = tuple(_as_int("seeds", item) for item in _parse_list(values["seeds"]))
    elif "n_seeds" in values:
        n_seeds = _as_int("n_seeds", values["n_seeds"])
        if n_seeds < 1:
            raise ConfigError("n_seeds", f"должно быть положительным, получено {n_seeds}")
        kwargs["seeds"] = tuple(range(n_seeds))

    # K по умолчанию равно числу уровней ошибок
    if "K" not in kwargs:
        kwargs["K"] = len(kwargs.get("error_levels", config.ERROR_LEVELS))
    elif "error_levels" not in kwargs and kwargs["K"] != len(config.ERROR_LEVELS):
        raise ConfigError("error_levels", f"нужно задать {kwargs['K']} уровней ошибок для K={kwargs['K']}")

    if "dropout" in values:
        dropout = _as_floats("dropout", values["dropout"])
        if len(dropout) == 1:
            dropout = dropout * kwargs["K"]
        kwargs["dropout"] = dropout
    else:
        kwargs["dropout"] = (0.0,) * kwargs["K"]

    return RunConfig(**kwargs)


def _score_file_dimensions(path: Path) -> Dict[str, int]:
    if not path.exists():
        raise ConfigError("score_file", f"файл не найден: {path}")
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
    try:
        k, l, t = (int(v) for v in header.split(","))
    except ValueError:
        raise ConfigError("score_file", f"заголовок должен иметь вид K,L,T: {header!r}")
    return {"K": k, "L": l, "T": t}


def load_run_config(path: Union[str, Path], **overrides) -> RunConfig:
    """Чтение файла key=value; overrides заменяют значения из файла"""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"файл конфигурации не найден: {path}")
    values = dict(dotenv_values(path))
    for key, value in overrides.items():
        if value is not None:
            values[key] = str(value)
    cfg = parse_run_config(values, base_dir=path.parent)
    logger.info(f"Конфигурация загружена: {path} (схема {cfg.scheme.value}, сидов {len(cfg.seeds)})")
    return cfg


# === Прогон одного сида ===

@dataclass
class SeedResult:
    seed: int
    trajectory: pd.DataFrame
    bounds: pd.DataFrame
    ok: bool


def simulate(cfg: RunConfig, seed: int) -> Trajectory:
    """Прогон контроллера выбранной схемы на потоке сида"""
    if cfg.score_file is not None:
        stream = ingest_scores(cfg.score_file)
    else:
        stream = iter_synthetic(cfg.stream_spec(seed))

    codec = get_codec(cfg.block_size)
    channel = FeedbackChannel(cfg.feedback, cfg.feedback_bias)

    if cfg.scheme is Scheme.DCRC:
        state = initial_dcrc_state(cfg.K, cfg.alpha, cfg.rho, cfg.theta)
    else:
        state = initial_cdcrc_state(cfg.K, cfg.alpha, cfg.capacity, cfg.gamma, cfg.mu,
                                    cfg.offset, cfg.scheme.allocation)

    records = []
    for truth, scores in stream:
        provider = channel.provider(truth, cfg.objective)
        if cfg.scheme is Scheme.DCRC:
            _, record, state = dcrc_step(state, scores, provider, codec)
        else:
            _, record, state = cdcrc_step(state, scores, codec, provider)
        records.append(record)

    return Trajectory.from_records(records, cfg.run_params())


def run_seed(cfg: RunConfig, seed: int) -> SeedResult:
    """Задача для пула процессов: траектория и отчёт по границам одного сида"""
    traj = simulate(cfg, seed)
    report = verify_trajectory(traj)
    return SeedResult(seed, traj.frame, report.to_frame(seed), report.ok)


def run_seeds(cfg: RunConfig, workers: Optional[int] = None,
              progress: bool = config.SHOW_PROGRESS_BAR, desc: str = "Сиды") -> List[SeedResult]:
    """Все сиды конфигурации; результат упорядочен по сиду"""
    workers = config.MAX_WORKERS if workers is None else workers
    workers = max(1, min(workers, len(cfg.seeds)))
    results: Dict[int, SeedResult] = {}

    with tqdm(total=len(cfg.seeds), desc=desc, disable=not progress) as bar:
        if workers == 1:
            for seed in cfg.seeds:
                results[seed] = run_seed(cfg, seed)
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(run_seed, cfg, seed): seed for seed in cfg.seeds}
                for future in as_completed(futures):
                    seed = futures[future]
                    results[seed] = future.result()
                    bar.update(1)
                    bar.set_postfix({"сид": seed, "ok": results[seed].ok})

    return [results[seed] for seed in cfg.seeds]


# === Агрегация ===

def time_averaged(values: np.ndarray) -> np.ndarray:
    """(1/t)Σ_{τ≤t} по первой оси"""
    steps = np.arange(1, values.shape[0] + 1)
    return np.cumsum(values, axis=0) / steps.reshape((-1,) + (1,) * (values.ndim - 1))


def aggregate_timeseries(results: Sequence[SeedResult], num_sensors: int) -> pd.DataFrame:
    """Средние по сидам временные ряды: средние по времени FNR, нагрузка, FPR и состояние"""
    frames = [r.trajectory for r in results]

    def stack(name: str) -> np.ndarray:
        return np.stack([f[name].to_numpy(dtype=np.float64) for f in frames])

    series = {"t": frames[0]["t"].to_numpy()}
    series["avg_fnr"] = time_averaged(stack("fnr").T).mean(axis=1)
    series["avg_load"] = time_averaged(stack("load").T).mean(axis=1)
    series["avg_fpr"] = time_averaged(stack("fpr").T).mean(axis=1)
    series["theta"] = stack("theta").mean(axis=0)
    for n in range(1, num_sensors + 1):
        series[f"lambda_{n}"] = stack(f"lambda_{n}").mean(axis=0)
    for n in range(1, num_sensors + 1):
        series[f"beta_{n}"] = stack(f"beta_{n}").mean(axis=0)
    return pd.DataFrame(series)


def write_csv(frame: pd.DataFrame, path: Path):
    frame.to_csv(path, index=False, float_format=config.CSV_FLOAT_FORMAT,
                 lineterminator="\n", encoding="utf-8")


@dataclass
class RunResult:
    output_dir: Path
    timeseries: pd.DataFrame
    bounds: pd.DataFrame
    ok: bool
    final: Dict[str, float] = field(default_factory=dict)


def run(cfg: RunConfig, output_dir: Optional[Path] = None, workers: Optional[int] = None,
        progress: bool = config.SHOW_PROGRESS_BAR) -> RunResult:
    """Прогон по всем сидам и запись артефактов в каталог"""
    output_dir = Path(output_dir or cfg.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(
        f"Запуск {cfg.scheme.value}: α={cfg.alpha}, C={cfg.capacity}, K={cfg.K}, "
        f"L={cfg.L}, T={cfg.T}, сидов {len(cfg.seeds)}"
    )

    results = run_seeds(cfg, workers, progress, desc=f"Сиды {cfg.scheme.value}")

    for result in results:
        write_csv(result.trajectory, output_dir / f"trajectory_seed{result.seed}.csv")
    timeseries = aggregate_timeseries(results, cfg.K)
    bounds = pd.concat([r.bounds for r in results], ignore_index=True)
    write_csv(timeseries, output_dir / "timeseries.csv")
    write_csv(bounds, output_dir / "bounds.csv")
    replace(cfg, output_dir=output_dir).save(output_dir / CONFIG_FILE_NAME)

    ok = all(r.ok for r in results)
    final = {
        "fnr": float(timeseries["avg_fnr"].iloc[-1]),
        "load": float(timeseries["avg_load"].iloc[-1]),
        "fpr": float(timeseries["avg_fpr"].iloc[-1]),
    }
    status = "✅ все границы выполнены" if ok else "❌ нарушены границы"
    logger.info(
        f"{status}: FNR={final['fnr']:.4f}, нагрузка={final['load']:.4f}, FPR={final['fpr']:.4f} "
        f"→ {output_dir}"
    )
    return RunResult(output_dir, timeseries, bounds, ok, final)


# === Свип ===

def sweep(cfg: RunConfig, axis: str, values: Sequence[float],
          schemes: Iterable[Union[Scheme, str]] = DEFAULT_SCHEMES,
          output_dir: Optional[Path] = None, workers: Optional[int] = None,
          progress: bool = config.SHOW_PROGRESS_BAR) -> Tuple[pd.DataFrame, bool]:
    """
    Свип по α или C: по строке на пару (схема, значение) с итоговыми
    средними по времени FNR, нагрузкой и FPR на шаге T.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError("axis", f"допустимые оси: {', '.join(SWEEP_AXES)}; получено {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("values", "нужно хотя бы одно значение")
    schemes = [Scheme(s) for s in schemes]
    if not schemes:
        raise ConfigError("schemes", "нужна хотя бы одна схема")

    output_dir = Path(output_dir or cfg.output_dir)
    rows = []
    all_ok = True
    for scheme in schemes:
        for value in values:
            point = replace(cfg, scheme=scheme, **{axis: float(value)})
            result = run(point, output_dir / f"{scheme.value}_{axis}_{value:g}", workers, progress)
            all_ok &= result.ok
            rows.append({
                "scheme": scheme.value,
                axis: float(value),
                "fnr": result.final["fnr"],
                "load": result.final["load"],
                "fpr": result.final["fpr"],
                "bounds_ok": result.ok,
            })

    summary = pd.DataFrame(rows, columns=["scheme", axis, "fnr", "load", "fpr", "bounds_ok"])
    write_csv(summary, output_dir / f"sweep_{axis}.csv")
    logger.info(f"Свип по {axis} записан: {output_dir / f'sweep_{axis}.csv'}")
    return summary, all_ok


# === Офлайн-проверка ===

def verify(directory: Union[str, Path], scheme: Optional[Union[Scheme, str]] = None) -> Tuple[pd.DataFrame, bool]:
    """Повторная проверка всех траекторий каталога по run_config.cfg"""
    directory = Path(directory)
    cfg_path = directory / CONFIG_FILE_NAME
    if not cfg_path.exists():
        raise TrajectoryFormatError(f"В каталоге нет {CONFIG_FILE_NAME}: {directory}")
    cfg = load_run_config(cfg_path)
    params = cfg.run_params()

    files = sorted(directory.glob("trajectory_seed*.csv"),
                   key=lambda p: int(p.stem.replace("trajectory_seed", "")))
    if not files:
        raise TrajectoryFormatError(f"В каталоге нет файлов trajectory_seed*.csv: {directory}")

    frames = []
    ok = True
    for path in files:
        seed = int(path.stem.replace("trajectory_seed", ""))
        traj = Trajectory.read_csv(path, params)
        if traj.num_sensors != cfg.K:
            raise TrajectoryFormatError(f"{path.name}: сенсоров {traj.num_sensors}, в конфигурации K={cfg.K}")
        report: BoundReport = verify_trajectory(traj, scheme)
        frames.append(report.to_frame(seed))
        ok &= report.ok
        for check in report.failures:
            logger.error(f"❌ {path.name}: {check.check} {check.detail}")

    logger.info(f"Проверено траекторий: {len(files)}")
    return pd.concat(frames, ignore_index=True), ok


# === Утилиты кодека ===

def codec_rank(block: str) -> Tuple[int, int]:
    """Ранг и длина кодового слова для блока вида '0111111111'"""
    bits = _bits_from_text(block)
    codec = get_codec(len(bits))
    rank = codec.rank_of_block(bits)
    return rank, codec.codeword_length(rank)


def codec_cost(path: Union[str, Path], block_size: int = config.BLOCK_SIZE) -> float:
    """Нормированная стоимость B вектора решения из текстового файла"""
    path = Path(path)
    if not path.exists():
        raise CodecError(f"Файл не найден: {path}")
    text = path.read_text(encoding="utf-8")
    bits = _bits_from_text("".join(text.replace(",", " ").split()))
    return get_codec(block_size).bit_cost(bits)


def codec_table(block_size: int) -> pd.DataFrame:
    if not 1 <= block_size <= config.CODEC_TABLE_MAX:
        raise CodecError(
            f"Таблица выводится для m от 1 до {config.CODEC_TABLE_MAX}, получено {block_size}"
        )
    rows = list(get_codec(block_size).table())
    return pd.DataFrame(rows, columns=["block", "rank", "length"])


def _bits_from_text(text: str) -> np.ndarray:
    text = text.strip()
    if not text or set(text) - {"0", "1"}:
        raise CodecError(f"Блок должен состоять из символов 0 и 1: {text[:40]!r}")
    return np.fromiter((c == "1" for c in text), dtype=bool, count=len(text))
