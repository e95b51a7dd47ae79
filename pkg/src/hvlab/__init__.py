"""Numerical laboratory for Bohmian and observer-marginalized trajectory laws."""

__version__ = "0.1.0"

from .hilbert import (  # noqa: F401
    DensityGrid,
    Grid1D,
    HybridState,
    gaussian_packet,
    marginal_density,
    normalize,
    packet_overlap,
    state_from_terms,
)
from .dynamics import MeasurementModel, Potential, apply_measurement, evolve  # noqa: F401
from .velocity import (  # noqa: F401
    BOHMIAN,
    MARGINALIZED,
    VelocityFieldSpec,
    bohmian_velocity,
    marginal_velocity,
    velocity_field,
)
from .trajectories import Ensemble, equivariance_test, integrate, sample_initial  # noqa: F401
