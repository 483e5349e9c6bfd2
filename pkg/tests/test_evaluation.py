"""Evaluation protocol: sampled widths, deterministic rollouts, reports."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockspan.checkpoint import save_checkpoint
from blockspan.env import BridgeEnv
from blockspan.errors import ConfigurationError
from blockspan.evaluation import (EpisodeOutcome, EvalReport, evaluate_hard,
                                  evaluate_policy, rollout_episode,
                                  sample_hard_widths)
from blockspan.policy import AttentionPolicy, NetworkConfig
from blockspan.presets import scaled_curriculum, scaled_episode
from blockspan.trainer import TrainConfig, Trainer

HARD_BAND = scaled_curriculum().hard_band


def _policy(seed=0):
    return AttentionPolicy(NetworkConfig.for_episode(scaled_episode()),
                           seed=seed)


def _outcome(width=0.1, success=False, ever=False, blocks=0, reward=0.0):
    return EpisodeOutcome(valley_width=width, success=success,
                          ever_success=ever, blocks_used=blocks,
                          total_reward=reward, steps=30)


def test_rollout_episode_runs_to_horizon():
    env = BridgeEnv(scaled_episode())
    outcome = rollout_episode(_policy(), env, valley_width=0.1, seed=3)
    assert outcome.steps == scaled_episode().horizon
    assert outcome.valley_width == 0.1
    assert isinstance(outcome.success, bool)


def test_report_validation_rejects_bad_values():
    report = EvalReport(n_tasks=0, success_rate=0.5, seed=0,
                        width_range=(0.06, 0.18), deterministic=True)
    with pytest.raises(ConfigurationError):
        report.validate()
    report = EvalReport(n_tasks=4, success_rate=1.5, seed=0,
                        width_range=(0.06, 0.18), deterministic=True)
    with pytest.raises(ConfigurationError):
        report.validate()
    with pytest.raises(ConfigurationError):
        evaluate_policy(_policy(), scaled_episode(), n_tasks=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=500),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_hard_widths_are_strictly_inside_the_half_open_band(n, seed):
    widths = sample_hard_widths(HARD_BAND, n, np.random.default_rng(seed))
    assert widths.shape == (n,)
    assert np.all(widths > HARD_BAND[0])
    assert np.all(widths <= HARD_BAND[1])


def test_evaluate_policy_samples_the_episode_range_by_default():
    report = evaluate_policy(_policy(), scaled_episode(), n_tasks=12, seed=5)
    lo, hi = scaled_episode().scene.width_range
    assert report.width_range == (lo, hi)
    assert len(report.outcomes) == 12
    for o in report.outcomes:
        assert lo <= o.valley_width <= hi


def test_same_policy_and_seed_give_identical_reports():
    a = evaluate_policy(_policy(seed=2), scaled_episode(), n_tasks=8, seed=7)
    b = evaluate_policy(_policy(seed=2), scaled_episode(), n_tasks=8, seed=7)
    assert a.to_dict() == b.to_dict()
    assert a.outcomes == b.outcomes


def test_different_seeds_sample_different_widths():
    a = evaluate_policy(_policy(), scaled_episode(), n_tasks=8, seed=1)
    b = evaluate_policy(_policy(), scaled_episode(), n_tasks=8, seed=2)
    assert ([o.valley_width for o in a.outcomes]
            != [o.valley_width for o in b.outcomes])


def test_stochastic_evaluation_is_still_seeded():
    a = evaluate_policy(_policy(), scaled_episode(), n_tasks=4, seed=3,
                        deterministic=False)
    b = evaluate_policy(_policy(), scaled_episode(), n_tasks=4, seed=3,
                        deterministic=False)
    assert a.to_dict() == b.to_dict()
    assert a.deterministic is False


def test_width_histogram_partitions_all_tasks():
    report = evaluate_policy(_policy(), scaled_episode(), n_tasks=25, seed=11)
    hist = report.width_histogram
    assert len(hist) == 10
    assert sum(b["tasks"] for b in hist) == 25
    assert all(b["successes"] <= b["tasks"] for b in hist)


def test_blocks_used_distribution_counts_only_successes():
    report = EvalReport(
        n_tasks=4, success_rate=0.5, seed=0, width_range=(0.06, 0.18),
        deterministic=True,
        outcomes=[_outcome(success=True, blocks=1),
                  _outcome(success=True, blocks=2),
                  _outcome(success=True, blocks=2),
                  _outcome(success=False, blocks=3)])
    assert report.blocks_used_distribution == {1: 1, 2: 2}
    assert report.to_dict()["blocks_used_distribution"] == {"1": 1, "2": 2}


def test_untrained_policy_scores_near_zero_on_hard_tasks(tmp_path):
    trainer = Trainer(
        TrainConfig(n_workers=2, n_steps=16, n_minibatches=4, n_epochs=2,
                    total_steps=1000, checkpoint_interval=0),
        episode_config=scaled_episode(),
        curriculum_config=scaled_curriculum(), seed=0)
    path = str(tmp_path / "fresh.ckpt")
    save_checkpoint(path, trainer)
    trainer.close()

    report = evaluate_hard(path, n_tasks=20, seed=0)
    assert report.success_rate <= 0.1
    for o in report.outcomes:
        assert o.valley_width > HARD_BAND[0]
        assert o.valley_width <= HARD_BAND[1]


def test_evaluate_hard_is_reproducible(tmp_path):
    trainer = Trainer(
        TrainConfig(n_workers=2, n_steps=16, n_minibatches=4, n_epochs=2,
                    total_steps=1000, checkpoint_interval=0),
        episode_config=scaled_episode(),
        curriculum_config=scaled_curriculum(), seed=1)
    path = str(tmp_path / "fresh.ckpt")
    save_checkpoint(path, trainer)
    trainer.close()
    assert (evaluate_hard(path, n_tasks=10, seed=4).to_dict()
            == evaluate_hard(path, n_tasks=10, seed=4).to_dict())
