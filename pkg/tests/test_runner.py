"""
Тесты конфигурации, прогона по сидам, свипов и офлайн-проверки
"""
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

import config
from analysis import SchemeMismatchError, TrajectoryFormatError
from codec import CodecError
from control import Scheme
from runner import (
    CONFIG_FILE_NAME, ConfigError, RunConfig, codec_cost, codec_rank, codec_table,
    load_run_config, parse_run_config, run, run_seeds, simulate, sweep, time_averaged, verify,
)
from simnet import FeedbackMode, StreamSpec, iter_synthetic, write_scores


# === Конфигурация ===

def test_minimal_config_uses_defaults():
    cfg = parse_run_config({"scheme": "cdcrc"})
    assert cfg.scheme is Scheme.CDCRC
    assert (cfg.alpha, cfg.capacity, cfg.K, cfg.L, cfg.T) == (0.15, 1.0, 4, 10000, 913)
    assert (cfg.rho, cfg.gamma, cfg.mu) == (0.2, 0.2, 0.2)
    assert cfg.offset == pytest.approx(0.2 * 0.85 + 0.01)
    assert cfg.seeds == tuple(range(config.N_SEEDS))
    assert cfg.error_levels == config.ERROR_LEVELS


def test_scenario_names_and_lists():
    cfg = parse_run_config({"error_levels": "no-prior-best"})
    assert cfg.error_levels == (0.5, 0.3, 0.3, 0.2)

    cfg = parse_run_config({"error_levels": "[0.1, 0.2]", "dropout": "0.1", "seeds": "3,5"})
    assert cfg.K == 2
    assert cfg.dropout == (0.1, 0.1)
    assert cfg.seeds == (3, 5)

    assert parse_run_config({"n_seeds": "4"}).seeds == (0, 1, 2, 3)


def test_shipped_configs_load(configs_dir):
    files = sorted(configs_dir.glob("*.cfg"))
    assert {p.name for p in files} >= {"best_sensor.cfg", "no_prior_best.cfg", "alpha_sweep.cfg",
                                       "capacity_sweep.cfg", "smoke.cfg"}
    for path in files:
        cfg = load_run_config(path)
        assert cfg.L % cfg.block_size == 0

    best = load_run_config(configs_dir / "best_sensor.cfg")
    assert best.error_levels == (0.1, 0.3, 0.5, 0.5)
    assert load_run_config(configs_dir / "alpha_sweep.cfg").capacity == 1.5
    assert load_run_config(configs_dir / "capacity_sweep.cfg").alpha == 0.2


def test_overrides_replace_file_values(configs_dir):
    cfg = load_run_config(configs_dir / "smoke.cfg", scheme="dcrc", T=3)
    assert cfg.scheme is Scheme.DCRC
    assert cfg.T == 3


@pytest.mark.parametrize("values, field", [
    ({"alpha": "1.5"}, "alpha"),
    ({"alpha": "abc"}, "alpha"),
    ({"capacity": "5"}, "capacity"),
    ({"L": "1005"}, "L"),
    ({"T": "0"}, "T"),
    ({"delta_offset": "0"}, "delta_offset"),
    ({"gamma": "-0.1"}, "gamma"),
    ({"theta": "0"}, "theta"),
    ({"block_size": "16"}, "block_size"),
    ({"scheme": "fast"}, "scheme"),
    ({"K": "3"}, "error_levels"),
    ({"error_levels": "0.1,0.2", "dropout": "0.1,0.2,0.3"}, "dropout"),
    ({"seeds": "1,1"}, "seeds"),
    ({"feedback_bias": "0.05"}, "feedback_bias"),
    ({"feedback": "conservative", "feedback_bias": "0.5"}, "feedback_bias"),
    ({"unknown": "1"}, "unknown"),
    ({"alpha": ""}, "alpha"),
])
def test_config_errors_name_the_field(values, field):
    with pytest.raises(ConfigError) as excinfo:
        parse_run_config(values)
    assert excinfo.value.field == field
    assert str(excinfo.value).startswith(field)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.cfg")


def test_saved_config_loads_back(tmp_path, small_config):
    path = tmp_path / CONFIG_FILE_NAME
    small_config.save(path)
    loaded = load_run_config(path)
    assert replace(loaded, output_dir=small_config.output_dir) == replace(
        small_config, output_dir=small_config.output_dir)
    assert loaded.output_dir == small_config.output_dir.resolve()


def test_score_file_sets_dimensions(tmp_path):
    spec = StreamSpec.from_levels([0.1, 0.4], num_labels=20, horizon=5, seed=2)
    path = tmp_path / "scores.csv"
    write_scores(path, iter_synthetic(spec))

    cfg = parse_run_config({"scheme": "cdcrc", "score_file": "scores.csv"}, base_dir=tmp_path)
    assert (cfg.K, cfg.L, cfg.T) == (2, 20, 5)
    assert cfg.seeds == (0,)
    traj = simulate(cfg, 0)
    assert traj.horizon == 5

    with pytest.raises(ConfigError) as excinfo:
        parse_run_config({"score_file": "absent.csv"}, base_dir=tmp_path)
    assert excinfo.value.field == "score_file"


# === Прогон ===

def test_simulate_is_deterministic(small_config):
    first = simulate(small_config, 1).frame
    second = simulate(small_config, 1).frame
    pd.testing.assert_frame_equal(first, second)


def test_run_seeds_ordered_by_seed(small_config):
    results = run_seeds(replace(small_config, seeds=(2, 0, 1)), workers=1, progress=False)
    assert [r.seed for r in results] == [2, 0, 1]
    assert all(r.ok for r in results)


def test_run_writes_all_artifacts(small_config):
    result = run(small_config, workers=1, progress=False)
    out = small_config.output_dir
    for seed in small_config.seeds:
        assert (out / f"trajectory_seed{seed}.csv").exists()
    assert (out / "timeseries.csv").exists()
    assert (out / "bounds.csv").exists()
    assert (out / CONFIG_FILE_NAME).exists()
    assert result.ok

    timeseries = pd.read_csv(out / "timeseries.csv")
    expected = ["t", "avg_fnr", "avg_load", "avg_fpr", "theta"]
    expected += [f"lambda_{n}" for n in range(1, 5)] + [f"beta_{n}" for n in range(1, 5)]
    assert list(timeseries.columns) == expected
    assert len(timeseries) == small_config.T

    bounds = pd.read_csv(out / "bounds.csv")
    assert set(bounds["seed"]) == set(small_config.seeds)
    assert bounds.loc[bounds["gating"], "satisfied"].all()


def test_run_final_values_match_trajectories(small_config):
    result = run(small_config, workers=1, progress=False)
    frames = [pd.read_csv(small_config.output_dir / f"trajectory_seed{s}.csv")
              for s in small_config.seeds]
    mean_fnr = np.mean([f["fnr"].mean() for f in frames])
    assert result.final["fnr"] == pytest.approx(mean_fnr, rel=1e-9)
    bound = 0.15 + small_config.offset / (0.2 * small_config.T)
    assert result.final["fnr"] < bound + 1e-9


def test_smoke_config_runs(configs_dir, tmp_path):
    cfg = load_run_config(configs_dir / "smoke.cfg")
    result = run(cfg, output_dir=tmp_path / "smoke", workers=1, progress=False)
    assert result.ok
    assert (tmp_path / "smoke" / "trajectory_seed0.csv").exists()
    assert len(result.timeseries) == 1


def test_outputs_are_byte_identical_across_runs_and_workers(small_config, tmp_path):
    run(small_config, output_dir=tmp_path / "a", workers=1, progress=False)
    run(small_config, output_dir=tmp_path / "b", workers=2, progress=False)
    names = ["timeseries.csv", "bounds.csv"] + [f"trajectory_seed{s}.csv" for s in small_config.seeds]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_conservative_feedback_keeps_bounds(small_config):
    cfg = replace(small_config, feedback=FeedbackMode.CONSERVATIVE, feedback_bias=0.05)
    result = run(cfg, workers=1, progress=False)
    assert result.ok
    frame = pd.read_csv(cfg.output_dir / "trajectory_seed0.csv")
    assert (frame["fnr_feedback"] >= frame["fnr"]).all()


def test_set_size_objective_runs(small_config):
    cfg = replace(small_config, objective="set-size")
    result = run(cfg, workers=1, progress=False)
    assert result.ok
    frame = pd.read_csv(cfg.output_dir / "trajectory_seed0.csv")
    assert (frame["scale"] == cfg.L).all()


def test_time_averaged():
    values = np.array([1.0, 0.0, 2.0, 1.0])
    assert time_averaged(values).tolist() == [1.0, 0.5, 1.0, 1.0]
    assert time_averaged(np.ones((3, 2))).shape == (3, 2)


# === Свип ===

def test_sweep_rows_and_file(small_config):
    cfg = replace(small_config, seeds=(0,))
    summary, ok = sweep(cfg, "alpha", [0.1, 0.2], schemes=[Scheme.CDCRC, Scheme.DCRC],
                        workers=1, progress=False)
    assert ok
    assert list(summary.columns) == ["scheme", "alpha", "fnr", "load", "fpr", "bounds_ok"]
    assert len(summary) == 4
    assert (cfg.output_dir / "sweep_alpha.csv").exists()
    assert (cfg.output_dir / "cdcrc_alpha_0.1" / "timeseries.csv").exists()

    bound = summary["alpha"] + cfg.offset / (cfg.mu * cfg.T) + 0.2
    assert (summary.loc[summary["scheme"] == "cdcrc", "fnr"] < bound).all()


def test_single_value_sweep_equals_run(small_config, tmp_path):
    cfg = replace(small_config, seeds=(0, 1))
    summary, _ = sweep(cfg, "capacity", [cfg.capacity], schemes=["cdcrc"],
                       output_dir=tmp_path / "sweep", workers=1, progress=False)
    result = run(cfg, output_dir=tmp_path / "single", workers=1, progress=False)
    row = summary.iloc[0]
    assert row["fnr"] == result.final["fnr"]
    assert row["load"] == result.final["load"]
    assert row["fpr"] == result.final["fpr"]


def test_sweep_rejects_bad_axis_and_values(small_config):
    with pytest.raises(ConfigError):
        sweep(small_config, "gamma", [0.1], progress=False)
    with pytest.raises(ConfigError):
        sweep(small_config, "alpha", [], progress=False)
    with pytest.raises(ConfigError):
        sweep(small_config, "capacity", [9.0], schemes=["cdcrc"], workers=1, progress=False)


# === Офлайн-проверка ===

def test_verify_fresh_run_passes(small_config):
    run(small_config, workers=1, progress=False)
    bounds, ok = verify(small_config.output_dir)
    assert ok
    assert len(bounds) > 0
    assert set(bounds["seed"]) == set(small_config.seeds)


def test_verify_detects_corrupted_fnr(small_config):
    run(small_config, workers=1, progress=False)
    path = small_config.output_dir / "trajectory_seed0.csv"
    frame = pd.read_csv(path)
    frame.loc[:4, "fnr"] = 1.0
    frame.loc[:4, "fnr_feedback"] = 1.0
    frame.to_csv(path, index=False)

    bounds, ok = verify(small_config.output_dir)
    assert not ok
    row = bounds[(bounds["seed"] == 0) & (bounds["check"] == "theorem2")].iloc[0]
    assert not row["satisfied"]
    assert "t=2" in row["detail"]
    # Остальные сиды не затронуты
    others = bounds[(bounds["seed"] != 0) & bounds["gating"]]
    assert others["satisfied"].all()


def test_verify_scheme_mismatch(small_config):
    cfg = replace(small_config, scheme=Scheme.DCRC, seeds=(0,))
    run(cfg, workers=1, progress=False)
    with pytest.raises(SchemeMismatchError):
        verify(cfg.output_dir, "cdcrc")
    _, ok = verify(cfg.output_dir, "dcrc")
    assert ok


def test_verify_rejects_incomplete_directories(tmp_path, small_config):
    with pytest.raises(TrajectoryFormatError):
        verify(tmp_path)
    small_config.save(tmp_path / CONFIG_FILE_NAME)
    with pytest.raises(TrajectoryFormatError):
        verify(tmp_path)


# === Утилиты кодека ===

def test_codec_rank_examples():
    assert codec_rank("1111111111") == (0, 0)
    assert codec_rank("0000000000") == (1023, 10)
    assert codec_rank("0111111111") == (1, 1)
    with pytest.raises(CodecError):
        codec_rank("01x1")


def test_codec_table():
    table = codec_table(2)
    assert table.values.tolist() == [["11", 0, 0], ["01", 1, 1], ["10", 2, 1], ["00", 3, 2]]
    assert len(codec_table(12)) == 4096
    with pytest.raises(CodecError):
        codec_table(13)


def test_codec_cost(tmp_path):
    path = tmp_path / "decision.txt"
    path.write_text("0111111111\n1111111111\n", encoding="utf-8")
    assert codec_cost(path) == pytest.approx(0.05)
    with pytest.raises(CodecError):
        codec_cost(tmp_path / "absent.txt")
