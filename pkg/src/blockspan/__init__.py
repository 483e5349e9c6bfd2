"""Planar block-bridge construction: simulator, RL trainer, and tooling."""

__version__ = "0.1.0"
