"""Simulation of RIS-assisted cell-free massive MIMO with MR processing."""

__version__ = "0.1.0"
