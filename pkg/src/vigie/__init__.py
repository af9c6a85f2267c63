"""Vigie - sequential change-point anomaly search simulator."""

__version__ = "0.1.0"
