"""
Тесты вычисления границ и проверок траекторий
"""
import itertools
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from analysis import (
    BoundReport, RunParams, SchemeMismatchError, Trajectory, TrajectoryFormatError,
    feedback_dominance_check, lemma1_check, lemma2_range_check, recurrence_check,
    regret_summary, regret_term_cdcrc, regret_term_dcrc, theorem1_bounds,
    theorem2_bound, theorem3_bound, theorem4_bounds, theta_range_check, verify_trajectory,
)
from codec import get_codec
from control import Scheme, cdcrc_step, initial_cdcrc_state
from core import combine, fpr, global_predict, local_fpr
from runner import RunConfig, simulate
from simnet import FeedbackChannel

OFFSET = 0.2 * (1 - 0.15) + 0.01


def sensor_rows(local, **extra):
    """Строки траектории с заданными P^t_k и равными весами"""
    local = np.asarray(local, dtype=float)
    k = local.shape[1]
    rows = []
    for values in local:
        row = {f"beta_{n}": 1.0 / k for n in range(1, k + 1)}
        row.update({f"fpr_{n}": float(v) for n, v in enumerate(values, 1)})
        row.update(extra)
        rows.append(row)
    return rows


def small_run(scheme, seed=0, **overrides):
    params = dict(K=3, error_levels=(0.1, 0.3, 0.5), dropout=(0.0,) * 3, L=100, T=60)
    params.update(overrides)
    cfg = RunConfig(scheme=scheme, seeds=(seed,), **params)
    return simulate(cfg, seed)


# === Формулы границ ===

def test_theorem1_fnr_rhs_example(trajectory_factory):
    rows = [{"beta_1": 0.5, "beta_2": 0.5} for _ in range(913)]
    traj = trajectory_factory(rows, Scheme.DCRC, rho=0.2, alpha=0.15)
    fnr_check, fpr_check = theorem1_bounds(traj)
    assert fnr_check.check == "theorem1_fnr"
    assert fnr_check.rhs == pytest.approx(0.150931, abs=1e-6)
    assert fnr_check.satisfied
    assert not fpr_check.gating


def test_theorem2_bound_example():
    assert theorem2_bound(0.18, 0.2, 913, 0.15) == pytest.approx(0.150986, abs=1e-6)
    assert theorem2_bound(OFFSET, 0.2, 10, 0.15) == pytest.approx(0.15 + OFFSET / 2)
    assert theorem2_bound(0.18, 0.2, 10**12, 0.15) == pytest.approx(0.15, abs=1e-9)
    with pytest.raises(ValueError):
        theorem2_bound(0.18, 0.0, 10, 0.15)


def test_theorem3_bound_examples():
    assert theorem3_bound([0.0] * 4, 0.2, 913, 1.0) == pytest.approx(1.00876, abs=1e-5)
    assert theorem3_bound([-0.4] * 4, 0.2, 913, 1.0) == 1.0
    assert theorem3_bound([0.0] * 4, 0.2, 10**12, 1.0) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        theorem3_bound([0.0], 0.2, 0, 1.0)


def test_identical_sensors_give_zero_regret_terms(trajectory_factory):
    rows = sensor_rows([[0.3, 0.3]] * 20, fpr=0.3)
    dcrc = trajectory_factory(rows, Scheme.DCRC, theta=0.5)
    assert regret_term_dcrc(dcrc.sensors("fpr"), 0.5) == (0.0, False)
    fpr_check = theorem1_bounds(dcrc)[1]
    assert fpr_check.rhs == pytest.approx(0.6)
    assert fpr_check.satisfied

    cdcrc = trajectory_factory(sensor_rows([[0.3, 0.3]] * 20, fpr=0.3, theta_tilde=0.5),
                               Scheme.CDCRC)
    check = theorem4_bounds(cdcrc)
    low = OFFSET - 0.2 * 0.85
    assert check.rhs == pytest.approx(0.3 / low + OFFSET / 0.5, rel=1e-9)


def test_cdcrc_regret_term_matches_direct_evaluation(trajectory_factory):
    local = [[0.2, 0.4], [0.1, 0.5], [0.3, 0.3]]
    traj = trajectory_factory(sensor_rows(local, theta_tilde=0.5), Scheme.CDCRC)
    sigma, clamped = regret_term_cdcrc(traj.sensors("fpr"), OFFSET, 0.2, 0.15)

    horizon = 3
    low = OFFSET - 0.2 * (1 - 0.15)
    high = 1 + OFFSET + 0.2 * 0.15
    ranges = [max(r) - min(r) for r in local]
    sum_max = sum(max(r) for r in local)
    sum_min = sum(min(r) for r in local)
    best = min(sum(r[k] for r in local) for k in range(2))
    first = high * math.log(2) / low * max(ranges) / sum(ranges)
    second = sum_max / low - best / high
    third = best / low - sum_min / high
    expected = 2 / horizon * math.sqrt(first * second * third)
    expected += (16 / 3 * math.log(2) + 2) * max(ranges) / (horizon * low)

    assert not clamped
    assert sigma == pytest.approx(expected, rel=1e-12)

    check = theorem4_bounds(traj)
    assert check.rhs == pytest.approx(0.2 / low + sigma + OFFSET / 0.5, rel=1e-12)


def test_dcrc_regret_term_matches_direct_evaluation():
    local = np.array([[0.2, 0.4, 0.6], [0.5, 0.1, 0.2]])
    theta = 0.5
    ranges = local.max(axis=1) - local.min(axis=1)
    best = local.sum(axis=0).min()
    first = math.log(3) * ranges.max() / ranges.sum()
    second = local.max(axis=1).sum() - best
    third = best - local.min(axis=1).sum()
    expected = 2 / (2 * theta) * math.sqrt(first * second * third)
    expected += (16 / 3 * math.log(3) + 2) * ranges.max() / (2 * theta)

    epsilon, clamped = regret_term_dcrc(local, theta)
    assert not clamped
    assert epsilon == pytest.approx(expected, rel=1e-12)


def test_regret_terms_are_non_negative(rng):
    for _ in range(100):
        local = rng.random((int(rng.integers(1, 30)), int(rng.integers(1, 5))))
        assert regret_term_dcrc(local, 0.5)[0] >= 0.0
        assert regret_term_cdcrc(local, OFFSET, 0.2, 0.15)[0] >= 0.0


def test_regret_term_cdcrc_requires_positive_floor():
    with pytest.raises(ValueError):
        regret_term_cdcrc(np.ones((2, 2)), 0.1, 0.2, 0.15)


# === Поэлементная оценка FPR ===

def test_lemma1_all_zero_decision_has_slack_equal_to_rhs():
    step = {"fpr": 0.0, "scale": 1.0, "theta_tilde": 0.5, "beta_1": 0.6, "beta_2": 0.4,
            "fpr_1": 0.2, "fpr_2": 0.5}
    ok, slack = lemma1_check(step, OFFSET)
    assert ok
    assert slack == pytest.approx((0.6 * 0.2 + 0.4 * 0.5 + OFFSET) / 0.5)


def test_lemma1_exhaustive_small_configurations():
    floor = OFFSET - 0.2 * 0.85
    ceiling = 1 + OFFSET + 0.2 * 0.15
    weight_sets = {
        1: [[1.0]],
        2: [[0.5, 0.5], [0.8, 0.2]],
        3: [[1 / 3, 1 / 3, 1 / 3], [0.6, 0.3, 0.1]],
    }
    for k, max_labels in ((1, 5), (2, 3), (3, 2)):
        for num_labels in range(1, max_labels + 1):
            for bits in itertools.product((False, True), repeat=(k + 1) * num_labels):
                matrix = np.array(bits).reshape(k + 1, num_labels)
                truth, locals_ = matrix[0], matrix[1:]
                local_values = [local_fpr(truth, row) for row in locals_]
                for weights in weight_sets[k]:
                    soft = combine(locals_, weights)
                    for theta_tilde in (floor, 0.3, 0.7, ceiling):
                        decision = global_predict(soft, theta_tilde - OFFSET)
                        step = {"fpr": fpr(truth, decision), "scale": 1.0, "theta_tilde": theta_tilde}
                        for n, (w, p) in enumerate(zip(weights, local_values), 1):
                            step[f"beta_{n}"] = w
                            step[f"fpr_{n}"] = p
                        ok, _ = lemma1_check(step, OFFSET, k)
                        assert ok, (k, bits, weights, theta_tilde)


def test_lemma1_single_sensor_on_controller_steps(rng):
    state = initial_cdcrc_state(1)
    channel = FeedbackChannel()
    for _ in range(100):
        truth = rng.random(40) < 0.3
        truth[0] = True
        scores = np.clip(np.where(truth, 0.8, 0.2) + rng.normal(0, 0.3, 40), 0, 0.999)[None, :]
        _, record, state = cdcrc_step(state, scores, get_codec(10), channel.provider(truth))
        ok, _ = lemma1_check(record, state.offset)
        assert ok


# === Регрет ===

def test_regret_single_sensor_is_zero(trajectory_factory):
    traj = trajectory_factory([{"beta_1": 1.0, "fpr_1": v} for v in (0.1, 0.5, 0.3)])
    summary = regret_summary(traj)
    assert summary.best_sensor == 1
    assert np.allclose(summary.regret, 0.0)


def test_regret_one_hot_on_best_sensor(trajectory_factory):
    rows = [{"beta_1": 1.0, "beta_2": 0.0, "fpr_1": 0.2, "fpr_2": 0.4} for _ in range(10)]
    summary = regret_summary(trajectory_factory(rows))
    assert summary.best_value == pytest.approx(0.2)
    assert summary.best_sensor == 1
    assert np.allclose(summary.regret, 0.0)
    assert summary.decreasing


def test_regret_with_uniform_weights_grows(trajectory_factory):
    rows = [{"beta_1": 0.5, "beta_2": 0.5, "fpr_1": 0.4, "fpr_2": 0.2} for _ in range(10)]
    summary = regret_summary(trajectory_factory(rows))
    assert summary.best_sensor == 2
    assert summary.regret[-1] == pytest.approx(1.0)


# === Проверки траекторий ===

def test_fresh_trajectories_pass_all_gating_checks():
    for scheme in Scheme:
        report = verify_trajectory(small_run(scheme))
        assert report.ok, [c for c in report.failures]


@pytest.mark.parametrize("seed", range(5))
def test_fpr_bounds_hold_on_small_runs(seed):
    assert verify_trajectory(small_run(Scheme.CDCRC, seed)).get("theorem4").satisfied
    assert verify_trajectory(small_run(Scheme.DCRC, seed)).get("theorem1_fpr").satisfied


random_runs = st.integers(min_value=1, max_value=4).flatmap(lambda k: st.fixed_dictionaries({
    "scheme": st.sampled_from(list(Scheme)),
    "seed": st.integers(min_value=0, max_value=2**31 - 1),
    "K": st.just(k),
    "error_levels": st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k).map(tuple),
    "alpha": st.floats(0.05, 0.3),
    "capacity": st.floats(0.1, 1.0).map(lambda share: share * k),
    "relevance": st.floats(0.1, 0.9),
    "L": st.sampled_from([50, 100]),
    "T": st.integers(min_value=2, max_value=40),
}))


@pytest.mark.slow
@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(random_runs)
def test_fpr_bounds_hold_on_random_synthetic_runs(params):
    params = dict(params)
    scheme, seed = params.pop("scheme"), params.pop("seed")
    traj = small_run(scheme, seed, dropout=(0.0,) * params["K"], **params)
    name = "theorem1_fpr" if scheme is Scheme.DCRC else "theorem4"
    check = verify_trajectory(traj).get(name)
    assert check.satisfied, check.detail


def test_corrupted_fnr_fails_strict_bound_with_step(trajectory_factory):
    rows = sensor_rows([[0.2, 0.3]] * 10, theta_tilde=OFFSET)
    for row in rows[:5]:
        row["fnr"] = 1.0
    report = verify_trajectory(trajectory_factory(rows, Scheme.CDCRC))
    check = report.get("theorem2")
    assert not check.satisfied
    assert "t=2" in check.detail
    assert not report.ok


def test_corrupted_fnr_fails_dcrc_bound(trajectory_factory):
    rows = sensor_rows([[0.2, 0.3]] * 10)
    for row in rows[:3]:
        row["fnr"] = 1.0
    fnr_check = theorem1_bounds(trajectory_factory(rows, Scheme.DCRC))[0]
    assert not fnr_check.satisfied
    assert "t=2" in fnr_check.detail


def test_scheme_mismatch(trajectory_factory):
    dcrc = trajectory_factory(sensor_rows([[0.2, 0.3]] * 3), Scheme.DCRC)
    with pytest.raises(SchemeMismatchError):
        theorem4_bounds(dcrc)
    with pytest.raises(SchemeMismatchError):
        verify_trajectory(dcrc, "cdcrc")
    cdcrc = trajectory_factory(sensor_rows([[0.2, 0.3]] * 3), Scheme.CDCRC)
    with pytest.raises(SchemeMismatchError):
        theorem1_bounds(cdcrc)


def test_single_step_trajectory(trajectory_factory):
    traj = trajectory_factory(sensor_rows([[0.2, 0.4]], fpr=0.1), Scheme.DCRC)
    checks = theorem1_bounds(traj)
    assert all(np.isfinite([c.lhs, c.rhs]).all() for c in checks)

    report = verify_trajectory(small_run(Scheme.CDCRC, T=1))
    assert isinstance(report, BoundReport)
    assert report.ok
    assert report.get("recurrence").satisfied


def test_range_checks_detect_violations(trajectory_factory):
    rows = sensor_rows([[0.2, 0.3]] * 4, theta_tilde=0.5)
    rows[2]["lambda_1"] = -0.5
    rows[3]["theta_tilde"] = 5.0
    traj = trajectory_factory(rows, Scheme.CDCRC)

    lemma2 = lemma2_range_check(traj)
    assert not lemma2.satisfied and "t=3" in lemma2.detail
    theta = theta_range_check(traj)
    assert not theta.satisfied and "t=4" in theta.detail


def test_recurrence_check_on_simulated_and_tampered_runs():
    traj = small_run(Scheme.CDCRC)
    assert recurrence_check(traj).satisfied

    frame = traj.frame.copy()
    frame.loc[2, "lambda_2"] += 0.01
    tampered = Trajectory(frame, traj.params)
    check = recurrence_check(tampered)
    assert not check.satisfied
    assert "t=" in check.detail


def test_feedback_dominance_check(trajectory_factory):
    rows = sensor_rows([[0.2, 0.3]] * 3)
    rows[1].update({"fnr": 0.3, "fnr_feedback": 0.2})
    check = feedback_dominance_check(trajectory_factory(rows))
    assert not check.satisfied
    assert "t=2" in check.detail


# === Формат траекторий ===

def test_trajectory_csv_roundtrip(tmp_path):
    traj = small_run(Scheme.UCDCRC)
    path = tmp_path / "trajectory.csv"
    traj.to_csv(path)
    loaded = Trajectory.read_csv(path, traj.params)
    assert loaded.horizon == traj.horizon
    assert loaded.num_sensors == 3
    assert loaded.detected_family is Scheme.CDCRC
    assert np.allclose(loaded.column("fnr"), traj.column("fnr"), rtol=1e-11, atol=0)
    assert verify_trajectory(loaded).ok


def test_dcrc_family_detected():
    assert small_run(Scheme.DCRC).detected_family is Scheme.DCRC


def test_trajectory_validation(trajectory_factory):
    traj = trajectory_factory(sensor_rows([[0.2, 0.3]] * 3))
    with pytest.raises(TrajectoryFormatError):
        Trajectory(traj.frame.drop(columns=["fnr"]), traj.params)
    with pytest.raises(TrajectoryFormatError):
        Trajectory(traj.frame.drop(columns=["cost_2"]), traj.params)

    shuffled = traj.frame.copy()
    shuffled["t"] = [1, 3, 2]
    with pytest.raises(TrajectoryFormatError, match="t=3"):
        Trajectory(shuffled, traj.params)

    text = traj.frame.copy()
    text["fnr"] = ["a", "b", "c"]
    with pytest.raises(TrajectoryFormatError):
        Trajectory(text, traj.params)


def test_read_csv_rejects_garbage(tmp_path):
    path = tmp_path / "broken.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(TrajectoryFormatError):
        Trajectory.read_csv(path, RunParams(Scheme.CDCRC))


def test_run_params_theta_range():
    params = RunParams(Scheme.CDCRC, alpha=0.15, mu=0.2)
    assert params.offset == pytest.approx(OFFSET)
    assert params.theta_floor == pytest.approx(0.01)
    assert params.theta_ceiling == pytest.approx(1 + OFFSET + 0.03)


def test_report_frame_columns(trajectory_factory):
    report = verify_trajectory(trajectory_factory(sensor_rows([[0.2, 0.3]] * 3, theta_tilde=OFFSET)))
    frame = report.to_frame(seed=7)
    assert list(frame.columns) == ["seed", "check", "lhs", "rhs", "slack", "satisfied", "gating", "detail"]
    assert (frame["seed"] == 7).all()
    assert set(frame["check"]) >= {"theorem2", "theorem3", "lemma1", "lemma2_range", "theta_range",
                                   "theorem4", "recurrence", "feedback_dominance"}
    assert isinstance(frame, pd.DataFrame)
