"""Adaptive sampling of valley widths biased toward hard cases.

A width is drawn from the hard band with probability p and uniformly from
the whole range otherwise. p starts near zero and moves in 0.1 quanta each
time a full window of episode outcomes is collected: up when the window's
success rate is high, down when it is low.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import ConfigurationError


@dataclass
class CurriculumConfig:
    hard_band: Tuple[float, float] = (0.30, 0.42)
    p_init: float = 0.01
    p_min: float = 0.01
    p_max: float = 0.91
    p_step: float = 0.1
    raise_threshold: float = 0.6
    lower_threshold: float = 0.3
    window: int = 100

    def validate(self) -> None:
        if not (0.0 <= self.p_min <= self.p_init <= self.p_max <= 1.0):
            raise ConfigurationError(
                f"need 0 <= p_min <= p_init <= p_max <= 1, got "
                f"{self.p_min}/{self.p_init}/{self.p_max}")
        if self.hard_band[0] >= self.hard_band[1]:
            raise ConfigurationError(f"empty hard band {self.hard_band}")
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window}")
        if self.lower_threshold > self.raise_threshold:
            raise ConfigurationError("lower_threshold must not exceed raise_threshold")


@dataclass
class Curriculum:
    """Hard-case sampling state shared by all workers of one trainer."""

    config: CurriculumConfig = field(default_factory=CurriculumConfig)
    width_range: Tuple[float, float] = (0.06, 0.42)
    p: float = None  # type: ignore[assignment]
    outcomes: List[bool] = field(default_factory=list)
    updates: int = 0

    def __post_init__(self):
        self.config.validate()
        if self.p is None:
            self.p = self.config.p_init

    def sample_width(self, rng: np.random.Generator) -> float:
        """Hard-band width with probability p, otherwise whole-range uniform."""
        if rng.random() < self.p:
            lo, hi = self.config.hard_band
        else:
            lo, hi = self.width_range
        return float(rng.uniform(lo, hi))

    def is_hard(self, width: float) -> bool:
        return width > self.config.hard_band[0]

    def update(self, episode_success: bool) -> None:
        """Record an outcome; on a full window, move p and start a new window."""
        self.outcomes.append(bool(episode_success))
        cfg = self.config
        if len(self.outcomes) < cfg.window:
            return
        rate = sum(self.outcomes) / len(self.outcomes)
        if rate > cfg.raise_threshold:
            self.p = min(self.p + cfg.p_step, cfg.p_max)
        elif rate < cfg.lower_threshold:
            self.p = max(self.p - cfg.p_step, cfg.p_min)
        self.outcomes.clear()
        self.updates += 1

    @property
    def window_fill(self) -> int:
        return len(self.outcomes)
