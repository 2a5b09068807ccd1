"""Muscle-driven two-link arm reaching: plant, environment, CEM trainer,
movement metrics and an experiment grid harness."""

__version__ = "0.1.0"
