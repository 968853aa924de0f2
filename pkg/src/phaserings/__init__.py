"""Phase retrieval for circular apertures from one far-field power map.

The package reconstructs the complex far field, and from it the aperture
field, of a circularly supported planar source given only the squared
magnitude of its radiated spectrum on the visible disk.  The retrieval
runs in two steps: one-dimensional spectral factorization along rings
and diameters of the spectrum tied together by congruence checks at
their crossings, then a global fit that polishes the modal expansion
against the full power map.
"""

from .errors import PhaseRingsError
from .spectral_core import (
    ApertureGeometry,
    ModalBasis,
    ModalCoefficients,
    RadialGrid,
    SpectralRadialGrid,
    truncation_orders,
)

__all__ = [
    "ApertureGeometry",
    "ModalBasis",
    "ModalCoefficients",
    "PhaseRingsError",
    "RadialGrid",
    "SpectralRadialGrid",
    "truncation_orders",
]

__version__ = "0.1.0"
