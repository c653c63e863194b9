"""Training loop: schedules, updates, determinism, checkpoints, diagnostics."""

import dataclasses

import numpy as np
import pytest

from fhc_ac import (
    StepSizeSchedules,
    TrainerConfig,
    actor_update,
    check_schedules,
    evaluate_policy,
    exact_gradient,
    load_checkpoint,
    make_trainer,
    moving_average,
    multiplier_update,
    save_checkpoint,
    stationarity_diagnostics,
    tabular_policy,
    train,
)

from helpers import random_cmdp, random_policy


def test_check_schedules_accepts_the_default_trio():
    report = check_schedules(StepSizeSchedules())
    assert report.ok
    assert report.notes  # separation ratios reported


def test_check_schedules_rejects_out_of_range_exponents():
    report = check_schedules(StepSizeSchedules(critic_exponent=0.4))
    assert not report.ok
    assert any("(0.5, 1]" in v for v in report.violations)
    assert not check_schedules(StepSizeSchedules(multiplier_exponent=1.2)).ok


def test_check_schedules_rejects_unseparated_timescales():
    report = check_schedules(
        StepSizeSchedules(critic_exponent=0.8, actor_exponent=0.7)
    )
    assert not report.ok
    assert any("strictly increase" in v for v in report.violations)
    assert not check_schedules(StepSizeSchedules(actor_scale=0.0)).ok


def test_step_sizes_follow_the_power_law():
    s = StepSizeSchedules(critic_scale=2.0)
    assert s.critic_step(0) == 2.0
    assert s.critic_step(99) == pytest.approx(2.0 * 100.0**-0.6)
    assert s.actor_step(99) == pytest.approx(100.0**-0.8)
    assert s.multiplier_step(99) == pytest.approx(0.01)


def test_trainer_config_rejects_bad_settings():
    with pytest.raises(ValueError):
        TrainerConfig(episodes=1, multiplier_sign="both")
    with pytest.raises(ValueError):
        TrainerConfig(episodes=1, penalty_floor=0.0)
    with pytest.raises(ValueError):
        make_trainer(
            random_cmdp(np.random.default_rng(0)),
            TrainerConfig(episodes=1, schedules=StepSizeSchedules(critic_exponent=0.4)),
        )


def test_moving_average_matches_direct_windowed_means():
    rng = np.random.default_rng(1)
    values = rng.normal(size=57)
    for window in (1, 3, 7, 57, 80):
        expected = np.array(
            [values[max(0, i - window + 1) : i + 1].mean() for i in range(len(values))]
        )
        assert np.allclose(moving_average(values, window), expected, atol=1e-12)
    with pytest.raises(ValueError):
        moving_average(values, 0)
    with pytest.raises(ValueError):
        moving_average(values.reshape(-1, 1), 3)


def test_actor_update_applies_the_scaled_score():
    rng = np.random.default_rng(2)
    model = random_cmdp(rng, 3, 2, 2, 1)
    policy = random_policy(model, rng)
    before = policy.stage_params[0].copy()
    score = policy.score(0, 1, 0).copy()
    clipped = actor_update(policy, 0, 1, 0, delta=0.5, step=0.2)
    assert not clipped
    assert np.allclose(policy.stage_params[0], before + 0.1 * score, atol=1e-15)


def test_actor_update_clamps_into_the_parameter_box():
    rng = np.random.default_rng(3)
    model = random_cmdp(rng, 3, 2, 2, 1)
    policy = tabular_policy(model, param_bound=0.5)
    policy.stage_params[0][:] = 0.49
    clipped = actor_update(policy, 0, 0, 1, delta=50.0, step=1.0)
    assert clipped
    theta = policy.stage_params[0]
    assert theta.max() <= 0.5 and theta.min() >= -0.5
    assert np.any(np.abs(theta) == 0.5)


def test_multiplier_update_moves_against_the_gap_and_clamps():
    cfg = TrainerConfig(episodes=1, penalty_floor=-2.0)
    new, floor_hit, zero_hit = multiplier_update(
        np.array([-1.0]), np.array([0.3]), 0.5, cfg
    )
    assert np.allclose(new, [-1.15])
    assert not floor_hit and not zero_hit

    new, floor_hit, zero_hit = multiplier_update(
        np.array([-1.9]), np.array([0.5]), 1.0, cfg
    )
    assert new[0] == -2.0 and floor_hit and not zero_hit

    new, floor_hit, zero_hit = multiplier_update(
        np.array([-0.1]), np.array([-0.5]), 1.0, cfg
    )
    assert new[0] == 0.0 and zero_hit and not floor_hit


def test_multiplier_update_positive_convention_mirrors_negative():
    cfg_n = TrainerConfig(episodes=1, penalty_floor=-2.0, multiplier_sign="negative")
    cfg_p = TrainerConfig(episodes=1, penalty_floor=-2.0, multiplier_sign="positive")
    rng = np.random.default_rng(4)
    stored_n = np.array([-0.4, -1.7])
    stored_p = -stored_n
    for _ in range(50):
        est = rng.normal(size=2)
        step = rng.uniform(0.01, 1.0)
        stored_n, fn, zn = multiplier_update(stored_n, est, step, cfg_n)
        stored_p, fp, zp = multiplier_update(stored_p, est, step, cfg_p)
        assert np.array_equal(stored_p, -stored_n)
        assert (fn, zn) == (fp, zp)


def test_training_is_deterministic_for_a_fixed_seed():
    rng = np.random.default_rng(5)
    model = random_cmdp(rng, 3, 2, 2, 1)
    config = TrainerConfig(episodes=150, seed=9)
    state_a, metrics_a = train(model, config)
    state_b, metrics_b = train(model, config)
    assert np.array_equal(metrics_a.returns, metrics_b.returns)
    assert np.array_equal(metrics_a.multipliers, metrics_b.multipliers)
    assert np.array_equal(state_a.multipliers, state_b.multipliers)
    for h in range(model.horizon):
        assert np.array_equal(state_a.policy.stage_params[h], state_b.policy.stage_params[h])
    # the critics start at zero, so the first recorded estimates are zero
    assert metrics_a.value_estimates[0] == 0.0
    assert np.array_equal(metrics_a.gap_estimates[0], [0.0])


def test_training_with_opposite_sign_conventions_matches_exactly():
    rng = np.random.default_rng(6)
    model = random_cmdp(rng, 3, 2, 2, 1)
    base = dict(episodes=300, seed=11)
    state_n, metrics_n = train(model, TrainerConfig(**base, multiplier_sign="negative"))
    state_p, metrics_p = train(model, TrainerConfig(**base, multiplier_sign="positive"))
    assert np.array_equal(metrics_n.returns, metrics_p.returns)
    assert np.array_equal(state_n.multipliers, -state_p.multipliers)
    assert np.array_equal(state_n.signed_multipliers(), state_p.signed_multipliers())
    for h in range(model.horizon):
        assert np.array_equal(state_n.policy.stage_params[h], state_p.policy.stage_params[h])


def test_training_runs_without_constraints():
    model = random_cmdp(np.random.default_rng(7), 3, 2, 2, 0)
    state, metrics = train(model, TrainerConfig(episodes=50, seed=1))
    assert metrics.multipliers.shape == (50, 0)
    assert state.multipliers.shape == (0,)
    assert not metrics.multiplier_floor_clipped.any()


def test_checkpoint_resume_reproduces_the_straight_run(tmp_path):
    rng = np.random.default_rng(8)
    model = random_cmdp(rng, 3, 2, 2, 1)
    full = TrainerConfig(episodes=200, seed=5)
    state_full, metrics_full = train(model, full)

    state_half, metrics_head = train(model, TrainerConfig(episodes=120, seed=5))
    path = tmp_path / "ckpt.json"
    save_checkpoint(state_half, path)
    loaded = load_checkpoint(path)
    assert loaded.episode == 120
    assert loaded.config == state_half.config
    state_resumed, metrics_tail = train(model, full, state=loaded)

    assert state_resumed.episode == 200
    assert np.array_equal(
        metrics_full.returns, np.concatenate([metrics_head.returns, metrics_tail.returns])
    )
    assert np.array_equal(
        metrics_full.multipliers,
        np.concatenate([metrics_head.multipliers, metrics_tail.multipliers]),
    )
    assert np.array_equal(state_full.multipliers, state_resumed.multipliers)
    for h in range(model.horizon):
        assert np.array_equal(
            state_full.policy.stage_params[h], state_resumed.policy.stage_params[h]
        )
    for h in range(model.horizon + 1):
        assert np.array_equal(state_full.critic.v[h], state_resumed.critic.v[h])


def test_stationarity_reports_exact_drift_for_interior_multipliers():
    rng = np.random.default_rng(9)
    model = random_cmdp(rng, 3, 2, 2, 1)
    policy = random_policy(model, rng)
    report = stationarity_diagnostics(model, policy, [-1.0])
    expected_return, totals = evaluate_policy(model, policy)
    assert report.expected_return == pytest.approx(expected_return)
    assert np.allclose(report.constraint_totals, totals)
    assert np.allclose(report.multiplier_drifts, -(totals - model.thresholds))
    assert report.multiplier_bound_active == 0
    grads = exact_gradient(model, policy, np.array([-1.0]))
    assert np.allclose(
        report.stage_gradient_norms, [np.linalg.norm(g) for g in grads]
    )
    # no parameter sits at the box edge, so projection changes nothing
    assert np.allclose(report.projected_gradient_norms, report.stage_gradient_norms)


def test_stationarity_drift_vanishes_for_slack_constraint_at_zero_multiplier():
    rng = np.random.default_rng(10)
    model = random_cmdp(rng, 3, 2, 2, 1)
    policy = random_policy(model, rng)
    _, totals = evaluate_policy(model, policy)
    slack = dataclasses.replace(model, thresholds=totals + 1.0)
    report = stationarity_diagnostics(slack, policy, [0.0])
    assert report.max_multiplier_drift == 0.0
    assert report.multiplier_bound_active == 1

    violated = dataclasses.replace(model, thresholds=totals - 0.5)
    report = stationarity_diagnostics(violated, policy, [0.0])
    assert report.max_multiplier_drift == pytest.approx(0.5)


def test_stationarity_drift_vanishes_for_violation_at_the_penalty_floor():
    rng = np.random.default_rng(11)
    model = random_cmdp(rng, 3, 2, 2, 1)
    policy = random_policy(model, rng)
    _, totals = evaluate_policy(model, policy)
    violated = dataclasses.replace(model, thresholds=totals - 1.0)
    report = stationarity_diagnostics(violated, policy, [-100.0], penalty_floor=-100.0)
    assert report.max_multiplier_drift == 0.0
    assert report.multiplier_bound_active == 1


def test_stationarity_projects_gradients_at_the_parameter_box():
    rng = np.random.default_rng(12)
    model = random_cmdp(rng, 3, 2, 2, 1)
    policy = random_policy(model, rng)
    bound = policy.param_bound
    policy.stage_params[0][:] = bound
    report = stationarity_diagnostics(model, policy, [-0.5])
    grads = exact_gradient(model, policy, np.array([-0.5]))
    assert report.projected_gradient_norms[0] == pytest.approx(
        np.linalg.norm(np.minimum(grads[0], 0.0))
    )
    assert report.projected_gradient_norms[0] <= report.stage_gradient_norms[0]
    assert report.theta_bound_active == policy.features.dim(0)
