"""Deterministic, chance-constrained and robust chance-constrained DC OPF."""

__version__ = "0.1.0"
