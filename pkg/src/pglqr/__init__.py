"""REINFORCE variance laboratory for stochastic LQR systems."""

__version__ = "0.1.0"
