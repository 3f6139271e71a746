"""Pseudo-spectral laboratory for the damped stochastic KdV equation on the circle."""
from .backend import NAME as BACKEND
from .spectral import (
    Grid,
    SpectralField,
    derivative,
    field_from_modes,
    l2_inner,
    nonlinear_term,
    project_high,
    project_low,
    sobolev_norm,
    zeros,
)

__version__ = "0.1.0"
