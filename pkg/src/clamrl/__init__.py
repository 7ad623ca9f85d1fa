"""Contrastive agent-modeling encoder with an embedding-conditioned PPO policy."""

__version__ = "0.1.0"
