"""Terrain-aware sampling MPC with rollover constraints."""

__version__ = "0.1.0"
