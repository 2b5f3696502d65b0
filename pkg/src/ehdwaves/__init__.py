"""Steady periodic waves on a charged interface over a vortical liquid layer."""

from .params import (
    DegenerateRootError,
    TrivialState,
    VorticityRequiredError,
    WaveParams,
    admissible_field,
    bifurcation_speeds,
    dispersion,
    resonance_condition,
    resonance_field,
    sweep_resonant_vorticity,
    tk,
    trivial_constants,
)
from .strip import StripGrid, SurfaceProfile

__version__ = "0.1.0"
