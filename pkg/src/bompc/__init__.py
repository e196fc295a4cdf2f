"""Bayesian optimization of linear MPC prediction models for a cable-driven soft robot."""

__version__ = "0.1.0"
