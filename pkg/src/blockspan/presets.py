"""Named configuration presets.

``full_*`` is the reference seven-block setup. ``scaled_*`` is a desk-scale
variant with three blocks on a narrower valley range (half to one-and-a-half
block lengths) whose hard band covers the widest thirty percent; it trains
to a useful policy within a couple million environment steps on one core.
"""

from __future__ import annotations

from dataclasses import replace

from .curriculum import CurriculumConfig
from .env import EpisodeConfig
from .physics2d import SceneConfig
from .trainer import TrainConfig

BLOCK_LENGTH = 0.12


def full_episode() -> EpisodeConfig:
    return EpisodeConfig()


def full_curriculum() -> CurriculumConfig:
    return CurriculumConfig()


def full_train(**overrides) -> TrainConfig:
    return TrainConfig(**overrides)


def scaled_episode(**scene_overrides) -> EpisodeConfig:
    scene = SceneConfig(n_blocks=3,
                        width_range=(0.5 * BLOCK_LENGTH, 1.5 * BLOCK_LENGTH),
                        **scene_overrides)
    return EpisodeConfig(scene=scene)


def scaled_curriculum() -> CurriculumConfig:
    return CurriculumConfig(hard_band=(1.2 * BLOCK_LENGTH, 1.5 * BLOCK_LENGTH))


def scaled_train(**overrides) -> TrainConfig:
    base = TrainConfig(n_workers=8, n_steps=256, total_steps=2_000_000)
    return replace(base, **overrides)


PRESETS = {
    "full": (full_episode, full_curriculum, full_train),
    "scaled": (scaled_episode, scaled_curriculum, scaled_train),
}
