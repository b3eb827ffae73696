"""Stochastic linear transport with irregular drift: characteristics, mean
equations, regularization studies and a two-phase porous-media iteration."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import TransportLabError
from .fields import GridSpec, ScalarField, VectorField, DriftSpec, make_drift

__all__ = ["__version__", "TransportLabError", "GridSpec", "ScalarField", "VectorField",
           "DriftSpec", "make_drift"]
