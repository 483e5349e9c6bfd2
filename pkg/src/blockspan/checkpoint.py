"""Versioned training checkpoints.

Layout (little-endian): magic ``BSCK``, u16 version, u16 reserved, u32
header length, u64 parameter-blob length, then a JSON header followed by
the parameter blob. The header carries every config plus curriculum and
RNG states; the blob is the ParamSet serialization including Adam moments,
so a resumed run continues with the exact optimizer state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .autodiff import ParamSet
from .curriculum import CurriculumConfig
from .env import EpisodeConfig
from .errors import CheckpointError
from .physics2d import SceneConfig
from .policy import AttentionPolicy, NetworkConfig
from .trainer import TrainConfig, Trainer

_MAGIC = b"BSCK"
_VERSION = 1
_HEADER = struct.Struct("<4sHHIQ")


def scene_config_from_dict(data: Dict) -> SceneConfig:
    data = dict(data)
    data["width_range"] = tuple(data["width_range"])
    return SceneConfig(**data)


def episode_config_from_dict(data: Dict) -> EpisodeConfig:
    data = dict(data)
    data["scene"] = scene_config_from_dict(data["scene"])
    data["rotations"] = tuple(data["rotations"])
    return EpisodeConfig(**data)


def train_config_from_dict(data: Dict) -> TrainConfig:
    return TrainConfig(**data)


def curriculum_config_from_dict(data: Dict) -> CurriculumConfig:
    data = dict(data)
    data["hard_band"] = tuple(data["hard_band"])
    return CurriculumConfig(**data)


def network_config_from_dict(data: Dict) -> NetworkConfig:
    return NetworkConfig(**data)


def _rng_state(rng: np.random.Generator) -> Dict:
    return rng.bit_generator.state


def _restore_rng(state: Dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


@dataclass
class CheckpointData:
    """Decoded checkpoint: header fields plus parameters and moments."""

    header: Dict
    params: ParamSet
    moments: Dict[str, Tuple[int, np.ndarray, np.ndarray]]

    @property
    def network_config(self) -> NetworkConfig:
        return network_config_from_dict(self.header["network"])

    @property
    def episode_config(self) -> EpisodeConfig:
        return episode_config_from_dict(self.header["episode"])

    @property
    def train_config(self) -> TrainConfig:
        return train_config_from_dict(self.header["train"])

    @property
    def curriculum_config(self) -> CurriculumConfig:
        return curriculum_config_from_dict(self.header["curriculum_config"])


def save_checkpoint(path: str, trainer: Trainer) -> None:
    header = {
        "seed": trainer.seed,
        "variant": trainer.variant,
        "adaptive_curriculum": trainer.adaptive_curriculum,
        "global_steps": trainer.global_steps,
        "iteration": trainer.iteration,
        "network": asdict(trainer.policy.config),
        "episode": asdict(trainer.episode_config),
        "train": asdict(trainer.config),
        "curriculum_config": asdict(trainer.curriculum.config),
        "curriculum_state": {
            "p": trainer.curriculum.p,
            "outcomes": [bool(o) for o in trainer.curriculum.outcomes],
            "updates": trainer.curriculum.updates,
        },
        "rng": {
            "action": _rng_state(trainer.action_rng),
            "shuffle": _rng_state(trainer.shuffle_rng),
            "width": _rng_state(trainer.width_rng),
        },
    }
    header_bytes = json.dumps(header).encode("utf-8")
    params_blob = trainer.policy.params.to_bytes(adam=trainer.optimizer)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, 0, len(header_bytes),
                              len(params_blob)))
        fh.write(header_bytes)
        fh.write(params_blob)


def load_checkpoint(path: str) -> CheckpointData:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path!r}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"checkpoint {path!r} truncated before header")
    magic, version, _, header_len, params_len = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    expected = _HEADER.size + header_len + params_len
    if len(blob) != expected:
        raise CheckpointError(
            f"checkpoint {path!r} has {len(blob)} bytes, expected {expected}")
    try:
        header = json.loads(blob[_HEADER.size:_HEADER.size + header_len])
    except ValueError as exc:
        raise CheckpointError(f"checkpoint header is not valid JSON: {exc}") from exc
    params, moments = ParamSet.from_bytes(blob[_HEADER.size + header_len:])
    return CheckpointData(header=header, params=params, moments=moments)


def load_policy(path: str) -> Tuple[AttentionPolicy, Dict]:
    """Policy-only load for evaluation and rollouts."""
    data = load_checkpoint(path)
    policy = AttentionPolicy(data.network_config, seed=0)
    policy.params.copy_from(data.params)
    policy.dtype = next(iter(policy.params.tensors())).data.dtype
    return policy, data.header


def restore_trainer(path: str, metrics_path: Optional[str] = None,
                    checkpoint_dir: Optional[str] = None) -> Trainer:
    """Rebuild a trainer from a checkpoint.

    Parameters, optimizer moments, curriculum state, and the named RNG
    streams continue exactly; the worker environments restart at a fresh
    episode boundary with widths drawn from the restored width stream.
    """
    data = load_checkpoint(path)
    header = data.header
    trainer = Trainer(
        data.train_config,
        episode_config=data.episode_config,
        curriculum_config=data.curriculum_config,
        variant=header["variant"],
        seed=header["seed"],
        metrics_path=metrics_path,
        checkpoint_dir=checkpoint_dir,
        adaptive_curriculum=header["adaptive_curriculum"],
    )
    trainer.policy.params.copy_from(data.params)
    trainer.policy.dtype = next(iter(trainer.policy.params.tensors())).data.dtype
    trainer.optimizer.load_state(data.moments)
    trainer.global_steps = header["global_steps"]
    trainer.iteration = header["iteration"]
    state = header["curriculum_state"]
    trainer.curriculum.p = state["p"]
    trainer.curriculum.outcomes = list(state["outcomes"])
    trainer.curriculum.updates = state["updates"]
    trainer.action_rng = _restore_rng(header["rng"]["action"])
    trainer.shuffle_rng = _restore_rng(header["rng"]["shuffle"])
    trainer.width_rng = _restore_rng(header["rng"]["width"])
    trainer._current_obs = np.stack([
        env.reset(valley_width=trainer._sample_width()) for env in trainer.envs])
    trainer._episode_reward_acc[:] = 0.0
    return trainer
