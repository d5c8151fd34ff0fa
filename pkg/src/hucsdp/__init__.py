"""Hydro unit commitment via SDP relaxation, MILP rounding, OPF re-optimization and rank reduction."""

__version__ = "0.1.0"
