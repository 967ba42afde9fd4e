"""
Общие фикстуры тестов crcnet
"""
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Добавляем корень репозитория в путь для импорта модулей
sys.path.insert(0, str(Path(__file__).parent.parent))

from analysis import RunParams, Trajectory
from control import Scheme
from runner import RunConfig

ROOT = Path(__file__).parent.parent


@pytest.fixture
def configs_dir() -> Path:
    return ROOT / "configs"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def small_config(tmp_path) -> RunConfig:
    """Быстрая конфигурация CD-CRC: K=4, L=200, T=60, три сида"""
    return RunConfig(
        scheme=Scheme.CDCRC,
        L=200,
        T=60,
        seeds=(0, 1, 2),
        output_dir=tmp_path / "run",
    )


def make_trajectory(rows, scheme=Scheme.CDCRC, **params) -> Trajectory:
    """Траектория из списка словарей-строк с заполнением недостающих столбцов"""
    num_sensors = max(int(key.split("_")[1]) for key in rows[0] if key.startswith("beta_"))
    filled = []
    for t, row in enumerate(rows, 1):
        base = {
            "t": t, "fnr": 0.0, "fnr_feedback": None, "fpr": 0.0, "load": 0.0, "scale": 1.0,
            "theta": 0.5, "theta_tilde": float("nan") if scheme is Scheme.DCRC else 0.5,
            "eta": 1.0,
        }
        for n in range(1, num_sensors + 1):
            base.update({f"fpr_{n}": 0.0, f"cost_{n}": 0.0, f"capacity_{n}": 0.0,
                         f"lambda_{n}": 0.0, f"beta_{n}": 1.0 / num_sensors})
        base.update(row)
        if base["fnr_feedback"] is None:
            base["fnr_feedback"] = base["fnr"]
        filled.append(base)
    return Trajectory(pd.DataFrame(filled), RunParams(scheme=scheme, **params))


@pytest.fixture
def trajectory_factory():
    return make_trajectory
