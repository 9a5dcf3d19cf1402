"""Hyperspectral dehazing toolkit.

Physics-based haze synthesis over hyperspectral cubes, a band-selection +
spectral-reconstruction + attention-refinement network with exact
hand-derived gradients, training utilities, and reference image-quality
metrics, all on plain NumPy.
"""

from .cube import BandMask, HsiCube, WavelengthTable
from .errors import (
    DehazeError,
    DimensionError,
    DomainError,
    FormatError,
    NumericError,
    ParameterError,
    ResourceError,
)

__all__ = [
    "HsiCube",
    "WavelengthTable",
    "BandMask",
    "DehazeError",
    "DimensionError",
    "DomainError",
    "FormatError",
    "NumericError",
    "ParameterError",
    "ResourceError",
]

__version__ = "0.1.0"
