"""Lattice agreement and atomic snapshot protocols with a round-metric simulator."""

__version__ = "0.1.0"
