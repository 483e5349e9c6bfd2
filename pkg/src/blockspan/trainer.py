"""Rollout collection, GAE, and clipped policy-gradient training.

The trainer steps a set of worker-owned environments in lockstep with a
snapshot policy, computes generalized advantage estimates, and optimizes
either plain clipped PPO every iteration or the phasic variant: several
policy-only iterations followed by a value phase that distills value
information into the shared trunk while a KL term pins the action
distributions to their pre-phase snapshot.

All randomness flows from a single seed through named generators (action
sampling, minibatch shuffling, curriculum widths), so a run is reproducible
bit-for-bit from (config, seed).
"""

from __future__ import annotations

import json
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Adam, Tensor, no_grad
from .curriculum import Curriculum, CurriculumConfig
from .env import BridgeEnv, EpisodeConfig
from .errors import ConfigurationError, TrainingDiverged
from .policy import ActionDistributions, AttentionPolicy, NetworkConfig

ALGORITHMS = ("ppo", "ppg")


@dataclass
class TrainConfig:
    """Optimization hyperparameters; defaults follow the reference setup."""

    n_workers: int = 32
    n_steps: int = 1024
    steps_are_total: bool = False  # alternate reading: n_steps counts the whole batch
    n_minibatches: int = 32
    n_epochs: int = 10
    gamma: float = 0.97
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 2.5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_grad_norm: float = 0.5
    algorithm: str = "ppg"
    beta_clone: float = 3.0
    n_policy_iters: int = 8   # policy iterations between value phases
    value_epochs: int = 6     # epochs over the buffer during a value phase
    buffer_batches: int = 8   # rollout batches kept for the value phase
    total_steps: int = 20_000_000
    checkpoint_interval: int = 50  # iterations; 0 disables periodic saves
    settle_threads: int = 1

    @property
    def rollout_steps(self) -> int:
        """Per-worker steps in one collection."""
        if self.steps_are_total:
            return max(1, self.n_steps // self.n_workers)
        return self.n_steps

    @property
    def batch_size(self) -> int:
        return self.rollout_steps * self.n_workers

    def validate(self) -> None:
        positive = ("n_workers", "n_steps", "n_minibatches", "n_epochs",
                    "learning_rate", "total_steps", "n_policy_iters",
                    "value_epochs", "buffer_batches", "settle_threads")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigurationError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if not 0.0 < self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigurationError("gamma must be in (0, 1], gae_lambda in [0, 1]")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(
                f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if min(self.entropy_coef, self.value_coef, self.beta_clone,
               self.max_grad_norm) < 0:
            raise ConfigurationError("coefficients must be non-negative")
        if self.batch_size % self.n_minibatches != 0:
            raise ConfigurationError(
                f"batch size {self.batch_size} not divisible into "
                f"{self.n_minibatches} minibatches")


@dataclass
class RolloutBatch:
    """One collection of aligned transition arrays (flattened time-major)."""

    observations: np.ndarray   # (B, R, 14)
    raw_actions: np.ndarray    # (B, 4)
    log_probs_old: np.ndarray  # (B,)
    rewards: np.ndarray        # (B,)
    dones: np.ndarray          # (B,)
    values: np.ndarray         # (B,)
    advantages: np.ndarray     # (B,) normalized before the policy loss
    returns: np.ndarray        # (B,) advantages_unnormalized + values

    def __len__(self) -> int:
        return self.observations.shape[0]


@dataclass
class IterationStats:
    """Episode-level outcomes observed during one collection."""

    episode_rewards: List[float] = field(default_factory=list)
    successes: List[bool] = field(default_factory=list)
    hard_flags: List[bool] = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.successes)

    @property
    def success_all(self) -> Optional[float]:
        if not self.successes:
            return None
        return float(np.mean(self.successes))

    @property
    def success_hard(self) -> Optional[float]:
        hard = [s for s, h in zip(self.successes, self.hard_flags) if h]
        if not hard:
            return None
        return float(np.mean(hard))

    @property
    def mean_reward(self) -> Optional[float]:
        if not self.episode_rewards:
            return None
        return float(np.mean(self.episode_rewards))


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap: np.ndarray, gamma: float,
                lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """Advantages and returns on (T, W) grids; done rows cut the recursion."""
    n_steps = rewards.shape[0]
    advantages = np.zeros_like(rewards)
    carry = np.zeros_like(bootstrap)
    for t in range(n_steps - 1, -1, -1):
        next_values = bootstrap if t == n_steps - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        carry = delta + gamma * lam * nonterminal * carry
        advantages[t] = carry
    return advantages, advantages + values


def ppo_surrogate(log_probs: Tensor, log_probs_old: np.ndarray,
                  advantages: np.ndarray, clip_eps: float) -> Tensor:
    """Mean clipped surrogate E[min(rho*A, clip(rho)*A)] (to be maximized)."""
    ratio = (log_probs - Tensor(log_probs_old)).exp()
    adv = Tensor(advantages)
    return (ratio * adv).minimum(ratio.clip(1.0 - clip_eps, 1.0 + clip_eps) * adv).mean()


def value_loss(values: Tensor, returns: np.ndarray) -> Tensor:
    """Half mean-squared error against the return targets."""
    return ((values - Tensor(returns)) ** 2.0).mean() * 0.5


def snapshot_distributions(dists: ActionDistributions) -> List[np.ndarray]:
    """Detach per-head probabilities for later KL anchoring."""
    return [p.data.copy() for p in dists.probs()]


def kl_to_snapshot(old_probs: Sequence[np.ndarray],
                   dists: ActionDistributions) -> Tensor:
    """Mean KL(old ‖ new) summed over the four factorized heads."""
    total = None
    for p_old, lp_new in zip(old_probs, dists.log_probs()):
        with np.errstate(divide="ignore"):
            lp_old = np.log(p_old)
        zero = p_old == 0.0
        lp_old[zero] = 0.0
        term = (Tensor(p_old) * (Tensor(lp_old) - lp_new.masked_fill(zero, 0.0)))
        head = term.sum(axis=-1)
        total = head if total is None else total + head
    return total.mean()


class JsonlWriter:
    """Append-only metrics stream, one JSON record per line."""

    def __init__(self, path: Optional[str]):
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def write(self, record: Dict) -> None:
        if self._fh is None:
            return
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class Trainer:
    """Owns the policy, optimizer, environments, and curriculum."""

    def __init__(self, train_config: TrainConfig,
                 episode_config: Optional[EpisodeConfig] = None,
                 curriculum_config: Optional[CurriculumConfig] = None,
                 variant: str = "shared", seed: int = 0,
                 metrics_path: Optional[str] = None,
                 checkpoint_dir: Optional[str] = None,
                 adaptive_curriculum: bool = True):
        train_config.validate()
        self.config = train_config
        self.episode_config = episode_config or EpisodeConfig()
        self.episode_config.validate()
        self.variant = variant
        self.seed = seed
        self.global_steps = 0
        self.iteration = 0
        self.adaptive_curriculum = adaptive_curriculum

        root = np.random.SeedSequence(seed)
        action_seq, shuffle_seq, width_seq, env_seq = root.spawn(4)
        self.action_rng = np.random.default_rng(action_seq)
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self.width_rng = np.random.default_rng(width_seq)
        env_seeds = env_seq.generate_state(train_config.n_workers)

        network = NetworkConfig.for_episode(self.episode_config, variant=variant)
        self.policy = AttentionPolicy(network, seed=seed)
        self.optimizer = Adam(self.policy.params, lr=train_config.learning_rate,
                              beta1=train_config.adam_beta1,
                              beta2=train_config.adam_beta2,
                              eps=train_config.adam_eps)

        cur_config = curriculum_config or CurriculumConfig()
        if not adaptive_curriculum:
            # fixed-difficulty baseline: pin the hard-case probability at its cap
            cur_config = replace(cur_config, p_init=cur_config.p_max)
        self.curriculum = Curriculum(cur_config,
                                     width_range=self.episode_config.scene.width_range)
        self.envs = [BridgeEnv(self.episode_config, seed=int(s)) for s in env_seeds]
        self._current_obs = np.stack([
            env.reset(valley_width=self._sample_width()) for env in self.envs])
        self._episode_reward_acc = np.zeros(train_config.n_workers)

        self.metrics = JsonlWriter(metrics_path)
        self.checkpoint_dir = checkpoint_dir
        if checkpoint_dir:
            os.makedirs(checkpoint_dir, exist_ok=True)
        self._buffer: deque = deque(maxlen=train_config.buffer_batches)
        self._pool = (ThreadPoolExecutor(max_workers=train_config.settle_threads)
                      if train_config.settle_threads > 1 else None)
        self._last_kl = 0.0

    # -- rollout collection ---------------------------------------------------

    def _sample_width(self) -> float:
        return self.curriculum.sample_width(self.width_rng)

    def _sample_actions(self, dists: ActionDistributions
                        ) -> Tuple[np.ndarray, np.ndarray]:
        n = dists.object_probs.shape[0]
        actions = np.empty((n, 4), dtype=np.int64)
        log_probs = np.zeros(n)
        probs = [p.data for p in dists.probs()]
        lps = [lp.data for lp in dists.log_probs()]
        for w in range(n):
            for i in range(4):
                cdf = np.cumsum(probs[i][w])
                idx = int(min(np.searchsorted(cdf, self.action_rng.random(),
                                              side="right"),
                              cdf.size - 1))
                actions[w, i] = idx
                log_probs[w] += lps[i][w, idx]
        return actions, log_probs

    def collect_rollouts(self) -> Tuple[RolloutBatch, IterationStats]:
        cfg = self.config
        n_steps, n_workers = cfg.rollout_steps, cfg.n_workers
        rows = self.episode_config.n_objects
        observations = np.empty((n_steps, n_workers, rows, 14))
        raw_actions = np.empty((n_steps, n_workers, 4), dtype=np.int64)
        log_probs = np.empty((n_steps, n_workers))
        rewards = np.empty((n_steps, n_workers))
        dones = np.zeros((n_steps, n_workers))
        values = np.empty((n_steps, n_workers))
        stats = IterationStats()
        reward_acc = self._episode_reward_acc

        for t in range(n_steps):
            observations[t] = self._current_obs  # copies the working buffer
            with no_grad():
                dists, value = self.policy.forward(self._current_obs)
            values[t] = value.data
            actions, lps = self._sample_actions(dists)
            raw_actions[t] = actions
            log_probs[t] = lps

            if self._pool is not None:
                results = list(self._pool.map(
                    lambda pair: pair[0].step(pair[1]),
                    zip(self.envs, actions)))
            else:
                results = [env.step(a) for env, a in zip(self.envs, actions)]

            for w, (obs, breakdown, done, info) in enumerate(results):
                rewards[t, w] = breakdown.total
                reward_acc[w] += breakdown.total
                if done:
                    dones[t, w] = 1.0
                    stats.episode_rewards.append(float(reward_acc[w]))
                    stats.successes.append(bool(info["success"]))
                    stats.hard_flags.append(
                        self.curriculum.is_hard(info["valley_width"]))
                    if self.adaptive_curriculum:
                        self.curriculum.update(bool(info["success"]))
                    reward_acc[w] = 0.0
                    obs = self.envs[w].reset(valley_width=self._sample_width())
                self._current_obs[w] = obs

        with no_grad():
            bootstrap = self.policy.value(self._current_obs).data.copy()
        advantages, returns = compute_gae(
            rewards, values, dones, bootstrap, cfg.gamma, cfg.gae_lambda)

        flat = lambda a: a.reshape(n_steps * n_workers, *a.shape[2:])
        batch = RolloutBatch(
            observations=flat(observations), raw_actions=flat(raw_actions),
            log_probs_old=flat(log_probs), rewards=flat(rewards),
            dones=flat(dones), values=flat(values),
            advantages=flat(advantages), returns=flat(returns))
        self.global_steps += len(batch)
        return batch, stats

    # -- optimization ----------------------------------------------------------

    def _check_finite(self, loss: Tensor, context: str,
                      minibatch: Dict[str, np.ndarray]) -> None:
        if np.isfinite(loss.data).all():
            return
        dump_dir = self.checkpoint_dir or "."
        dump_path = os.path.join(dump_dir, "diverged_minibatch.npz")
        np.savez(dump_path, **minibatch)
        raise TrainingDiverged(
            f"non-finite {context} loss at iteration {self.iteration}",
            dump_path=dump_path)

    def _minibatch_indices(self, n: int, size: int) -> List[np.ndarray]:
        order = self.shuffle_rng.permutation(n)
        return [order[i:i + size] for i in range(0, n - size + 1, size)]

    def policy_update(self, batch: RolloutBatch) -> Dict[str, float]:
        cfg = self.config
        adv = batch.advantages
        batch.advantages = (adv - adv.mean()) / (adv.std() + 1e-8)
        minibatch_size = len(batch) // cfg.n_minibatches
        train_value = cfg.algorithm == "ppo" or self.variant == "dual"
        loss_pi_acc, loss_v_acc, kl_acc, count = 0.0, 0.0, 0.0, 0
        for _ in range(cfg.n_epochs):
            for idx in self._minibatch_indices(len(batch), minibatch_size):
                obs = batch.observations[idx]
                actions = batch.raw_actions[idx]
                lp_old = batch.log_probs_old[idx]
                advantages = batch.advantages[idx]
                returns = batch.returns[idx]

                lp, entropy, values = self.policy.evaluate_actions(obs, actions)
                surrogate = ppo_surrogate(lp, lp_old, advantages, cfg.clip_eps)
                loss = -surrogate - entropy.mean() * cfg.entropy_coef
                if train_value:
                    l_v = value_loss(values, returns)
                    loss = loss + l_v * cfg.value_coef
                    loss_v_acc += float(l_v.data)
                self._check_finite(loss, "policy", {
                    "observations": obs, "actions": actions,
                    "log_probs_old": lp_old, "advantages": advantages,
                    "returns": returns})
                loss.backward()
                self.policy.params.clip_grad_norm(cfg.max_grad_norm)
                self.optimizer.step()

                with np.errstate(over="ignore"):
                    log_ratio = lp.data - lp_old
                    kl_acc += float(np.mean(np.expm1(log_ratio) - log_ratio))
                loss_pi_acc += float(surrogate.data)
                count += 1
        self._last_kl = kl_acc / count
        return {"loss_pi": loss_pi_acc / count,
                "loss_value": loss_v_acc / count if train_value else None,
                "kl": self._last_kl}

    def value_phase(self) -> Dict[str, float]:
        """Distill value targets into the policy trunk under a KL leash."""
        cfg = self.config
        observations = np.concatenate([obs for obs, _ in self._buffer])
        returns = np.concatenate([ret for _, ret in self._buffer])
        n = observations.shape[0]
        minibatch_size = max(1, len(self._buffer[0][1]) // cfg.n_minibatches)

        old_probs: List[List[np.ndarray]] = []
        with no_grad():
            for start in range(0, n, 1024):
                dists = self.policy.distributions(observations[start:start + 1024])
                old_probs.append(snapshot_distributions(dists))
        snapshots = [np.concatenate([chunk[h] for chunk in old_probs])
                     for h in range(4)]

        loss_v_acc, kl_acc, count = 0.0, 0.0, 0
        for _ in range(cfg.value_epochs):
            for idx in self._minibatch_indices(n, minibatch_size):
                obs = observations[idx]
                dists = self.policy.distributions(obs)
                aux_values = self.policy.aux_value(obs)
                l_v = value_loss(aux_values, returns[idx])
                kl = kl_to_snapshot([s[idx] for s in snapshots], dists)
                loss = l_v + kl * cfg.beta_clone
                if self.variant == "dual":
                    loss = loss + value_loss(self.policy.value(obs), returns[idx])
                self._check_finite(loss, "value-phase", {
                    "observations": obs, "returns": returns[idx]})
                loss.backward()
                self.policy.params.clip_grad_norm(cfg.max_grad_norm)
                self.optimizer.step()
                loss_v_acc += float(l_v.data)
                kl_acc += float(kl.data)
                count += 1
        self._last_kl = kl_acc / count
        return {"loss_value": loss_v_acc / count, "kl": self._last_kl}

    # -- driver ------------------------------------------------------------------

    def train_iteration(self) -> Dict:
        """One collect + update cycle; returns the metrics record."""
        batch, stats = self.collect_rollouts()
        update = self.policy_update(batch)
        self.iteration += 1
        if self.config.algorithm == "ppg":
            self._buffer.append((batch.observations, batch.returns))
            if self.iteration % self.config.n_policy_iters == 0:
                phase = self.value_phase()
                update["loss_value"] = phase["loss_value"]
                update["kl"] = phase["kl"]
        record = {
            "step": self.global_steps,
            "iteration": self.iteration,
            "variant": f"{self.config.algorithm}-{self.variant}",
            "mean_reward": stats.mean_reward,
            "success_all": stats.success_all,
            "success_hard": stats.success_hard,
            "episodes": stats.episodes,
            "hard_episodes": int(np.sum(stats.hard_flags)),
            "p": self.curriculum.p,
            "loss_pi": update.get("loss_pi"),
            "loss_value": update.get("loss_value"),
            "kl": update.get("kl"),
        }
        self.metrics.write(record)
        return record

    def run(self, max_steps: Optional[int] = None,
            stop_fn: Optional[Callable[["Trainer", Dict], bool]] = None) -> List[Dict]:
        """Iterate until the step budget is spent or stop_fn says stop."""
        from .checkpoint import save_checkpoint  # local import, cycle-free

        budget = max_steps if max_steps is not None else self.config.total_steps
        records = []
        while self.global_steps < budget:
            record = self.train_iteration()
            records.append(record)
            interval = self.config.checkpoint_interval
            if (self.checkpoint_dir and interval
                    and self.iteration % interval == 0):
                save_checkpoint(
                    os.path.join(self.checkpoint_dir,
                                 f"checkpoint_{self.iteration:06d}.ckpt"), self)
            if stop_fn is not None and stop_fn(self, record):
                break
        if self.checkpoint_dir:
            save_checkpoint(
                os.path.join(self.checkpoint_dir, "checkpoint_final.ckpt"), self)
        return records

    def close(self) -> None:
        self.metrics.close()
        if self._pool is not None:
            self._pool.shutdown()
