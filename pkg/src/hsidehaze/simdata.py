"""Deterministic synthetic scenes for demos and desk-scale experiments.

Clean cubes are convex mixtures of a few smooth material spectra with
smoothly varying abundances, so they are strictly positive, spectrally
correlated, and easy to inspect. Cirrus patterns are smooth low-frequency
thickness fields in [0, max_thickness]. Everything is a pure function of
its arguments and seed.
"""

from __future__ import annotations

import numpy as np

from .cube import HsiCube, WavelengthTable
from .errors import ParameterError
from .hazesim import CirrusPatch


def fixture_wavelengths(bands: int, start_nm: float = 420.0, stop_nm: float = 2400.0) -> WavelengthTable:
    """Evenly spaced band centers spanning visible through shortwave IR."""
    if bands < 2:
        raise ParameterError(f"need at least 2 bands, got {bands}")
    centers = np.linspace(start_nm, stop_nm, bands)
    return WavelengthTable.from_centers(centers)


def _bilinear(field: np.ndarray, height: int, width: int) -> np.ndarray:
    """Upsample a coarse grid to (height, width) with bilinear weights."""
    h0, w0 = field.shape
    ys = np.linspace(0.0, h0 - 1.0, height)
    xs = np.linspace(0.0, w0 - 1.0, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h0 - 1)
    x1 = np.minimum(x0 + 1, w0 - 1)
    fy = (ys - y0)[:, np.newaxis]
    fx = (xs - x0)[np.newaxis, :]
    top = field[np.ix_(y0, x0)] * (1 - fx) + field[np.ix_(y0, x1)] * fx
    bottom = field[np.ix_(y1, x0)] * (1 - fx) + field[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def _smooth_field(rng, height: int, width: int, coarse: int = 4) -> np.ndarray:
    """A low-frequency random field normalized to [0, 1]."""
    grid = rng.uniform(0.0, 1.0, size=(coarse, coarse))
    field = _bilinear(grid, height, width)
    lo, hi = field.min(), field.max()
    if hi > lo:
        field = (field - lo) / (hi - lo)
    else:
        field = np.zeros_like(field)
    return field


def _material_spectrum(rng, bands: int) -> np.ndarray:
    """A smooth reflectance curve strictly inside (0, 1)."""
    x = np.linspace(0.0, 1.0, bands)
    y = rng.uniform(-0.3, 0.3) * x
    for _ in range(int(rng.integers(2, 4))):
        center = rng.uniform(0.0, 1.0)
        width = rng.uniform(0.08, 0.35)
        amp = rng.uniform(0.3, 1.0)
        y = y + amp * np.exp(-0.5 * ((x - center) / width) ** 2)
    y = y - y.min()
    peak = y.max()
    if peak > 0:
        y = y / peak
    return 0.1 + 0.8 * y


def smooth_mixture_cube(height: int, width: int, bands: int,
                        n_materials: int = 4, seed: int = 0) -> HsiCube:
    """A clean scene: per-pixel convex mixture of smooth material spectra.

    Values stay within (0, 1) strictly, so every derived quantity (relative
    errors, spectral angles, atmospheric light) is well defined.
    """
    if min(height, width) < 1 or bands < 1 or n_materials < 1:
        raise ParameterError("height, width, bands, n_materials must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(3,)))
    spectra = np.stack([_material_spectrum(rng, bands) for _ in range(n_materials)])
    fields = np.stack(
        [_smooth_field(rng, height, width) ** 2 + 0.05 for _ in range(n_materials)]
    )
    abundance = fields / fields.sum(axis=0, keepdims=True)
    data = np.einsum("mc,mhw->chw", spectra, abundance)
    return HsiCube(data=data.astype(np.float64))


def cirrus_pattern(height: int, width: int, seed: int = 0,
                   max_thickness: float = 0.85) -> CirrusPatch:
    """A smooth cloud-thickness field in [0, max_thickness].

    ``max_thickness`` must stay below 1 so a haze density of 1.0 still
    leaves the reference transmission strictly positive.
    """
    if not 0.0 < max_thickness < 1.0:
        raise ParameterError(f"max_thickness must lie in (0, 1), got {max_thickness!r}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(5,)))
    field = _smooth_field(rng, height, width, coarse=5) ** 1.5
    return CirrusPatch(values=field * max_thickness)
