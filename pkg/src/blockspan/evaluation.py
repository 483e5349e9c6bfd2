"""Deterministic policy evaluation over sampled valley widths.

An evaluation rolls the policy's mode action (argmax per head) through
full episodes on freshly created scenes and tallies terminal success.
Widths come either uniformly from a closed range or, for hard-case
reports, uniformly from the half-open hard band (strictly wider than the
band's lower edge).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import (curriculum_config_from_dict,
                         episode_config_from_dict, load_policy)
from .env import BridgeEnv, EpisodeConfig
from .errors import ConfigurationError
from .policy import AttentionPolicy

N_HISTOGRAM_BINS = 10


@dataclass
class EpisodeOutcome:
    """Terminal summary of one evaluated episode."""

    valley_width: float
    success: bool
    ever_success: bool
    blocks_used: int
    total_reward: float
    steps: int


@dataclass
class EvalReport:
    """Aggregate outcome of an evaluation batch."""

    n_tasks: int
    success_rate: float
    seed: int
    width_range: Tuple[float, float]
    deterministic: bool
    outcomes: List[EpisodeOutcome] = field(repr=False, default_factory=list)

    def validate(self) -> None:
        if self.n_tasks <= 0:
            raise ConfigurationError(f"n_tasks must be positive, got {self.n_tasks}")
        if not 0.0 <= self.success_rate <= 1.0:
            raise ConfigurationError(
                f"success rate {self.success_rate} outside [0, 1]")

    @property
    def width_histogram(self) -> List[Dict]:
        """Tasks and successes per width bin across the sampled range."""
        lo, hi = self.width_range
        edges = np.linspace(lo, hi, N_HISTOGRAM_BINS + 1)
        bins = []
        for b in range(N_HISTOGRAM_BINS):
            caught = [o for o in self.outcomes
                      if edges[b] <= o.valley_width <= edges[b + 1]
                      and (b == 0 or o.valley_width > edges[b])]
            bins.append({"lo": float(edges[b]), "hi": float(edges[b + 1]),
                         "tasks": len(caught),
                         "successes": sum(o.success for o in caught)})
        return bins

    @property
    def blocks_used_distribution(self) -> Dict[int, int]:
        """How many successful episodes used k blocks, for each k."""
        dist: Dict[int, int] = {}
        for o in self.outcomes:
            if o.success:
                dist[o.blocks_used] = dist.get(o.blocks_used, 0) + 1
        return dist

    def to_dict(self) -> Dict:
        return {
            "n_tasks": self.n_tasks,
            "success_rate": self.success_rate,
            "seed": self.seed,
            "width_range": list(self.width_range),
            "deterministic": self.deterministic,
            "width_histogram": self.width_histogram,
            "blocks_used_distribution": {
                str(k): v for k, v in sorted(self.blocks_used_distribution.items())},
            "mean_reward": float(np.mean([o.total_reward for o in self.outcomes])),
            "ever_success_rate": float(np.mean([o.ever_success
                                                for o in self.outcomes])),
        }


def rollout_episode(policy: AttentionPolicy, env: BridgeEnv,
                    valley_width: float, seed: int,
                    deterministic: bool = True,
                    rng: Optional[np.random.Generator] = None) -> EpisodeOutcome:
    """Run one full episode and summarize its terminal state."""
    obs = env.reset(seed=seed, valley_width=valley_width)
    total, done, info = 0.0, False, {}
    while not done:
        action, _ = policy.sample_action(obs, rng=rng,
                                         deterministic=deterministic)
        obs, reward, done, info = env.step(action)
        total += reward.total
    return EpisodeOutcome(valley_width=valley_width,
                          success=bool(info["success"]),
                          ever_success=bool(info["ever_success"]),
                          blocks_used=int(info["blocks_in_valley"]),
                          total_reward=total, steps=int(info["t"]))


def sample_hard_widths(band: Tuple[float, float], n_tasks: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the half-open band (lo, hi]: every width is
    strictly harder than the band's lower edge."""
    lo, hi = band
    return lo + (hi - lo) * (1.0 - rng.random(n_tasks))


def evaluate_policy(policy: AttentionPolicy, episode_config: EpisodeConfig,
                    n_tasks: int = 100, seed: int = 0,
                    width_range: Optional[Tuple[float, float]] = None,
                    hard_band_only: bool = False,
                    deterministic: bool = True) -> EvalReport:
    """Evaluate over n_tasks sampled widths; same (policy, seed) twice
    gives the identical report."""
    if n_tasks <= 0:
        raise ConfigurationError(f"n_tasks must be positive, got {n_tasks}")
    widths_range = width_range or episode_config.scene.width_range
    root = np.random.SeedSequence(seed)
    width_seq, action_seq, env_seq = root.spawn(3)
    width_rng = np.random.default_rng(width_seq)
    action_rng = np.random.default_rng(action_seq)
    env_seeds = env_seq.generate_state(n_tasks)

    if hard_band_only:
        widths = sample_hard_widths(widths_range, n_tasks, width_rng)
    else:
        widths = width_rng.uniform(widths_range[0], widths_range[1], n_tasks)

    env = BridgeEnv(episode_config, seed=0)
    outcomes = [
        rollout_episode(policy, env, float(w), int(s),
                        deterministic=deterministic, rng=action_rng)
        for w, s in zip(widths, env_seeds)]
    report = EvalReport(
        n_tasks=n_tasks,
        success_rate=float(np.mean([o.success for o in outcomes])),
        seed=seed, width_range=tuple(widths_range),
        deterministic=deterministic, outcomes=outcomes)
    report.validate()
    return report


def evaluate_hard(checkpoint_path: str, n_tasks: int = 100,
                  seed: int = 0) -> EvalReport:
    """Success rate on hard tasks: widths uniform over the half-open hard
    band recorded in the checkpoint's curriculum configuration."""
    policy, header = load_policy(checkpoint_path)
    episode = episode_config_from_dict(header["episode"])
    curriculum = curriculum_config_from_dict(header["curriculum_config"])
    return evaluate_policy(policy, episode, n_tasks=n_tasks, seed=seed,
                           width_range=curriculum.hard_band,
                           hard_band_only=True, deterministic=True)
