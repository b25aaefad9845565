"""Continual online depth learning with soft task boundaries, importance
regularisation and threshold-admitted replay, on synthetic layered worlds."""

__version__ = "0.1.0"
