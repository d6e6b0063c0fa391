"""Sparse system identification of linear and residual recurrent state-space models."""

__version__ = "0.1.0"
