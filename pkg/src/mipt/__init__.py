"""Quantum trajectories of a continuously monitored, noisy, disordered Heisenberg chain."""

__version__ = "0.1.0"
