"""Synthetic-population epidemic simulation with Gaussian-process emulation
and Moran's I spatial clustering comparison."""

__version__ = "0.1.0"
