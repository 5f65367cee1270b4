"""Surrogate-model qubit characterization and gate-set optimization."""

__version__ = "0.1.0"
