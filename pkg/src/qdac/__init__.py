"""Skill-conditioned constrained actor-critic with successor features, plus
exact tabular oracles, QD metrics and adaptation harnesses."""

__version__ = "0.1.0"
