"""Physics-based haze synthesis for hyperspectral cubes.

A haze realization starts from a cirrus reflectance patch ``b`` in [0, 1].
The reference transmission of the shortest-wavelength band is
``t1 = 1 - alpha * b`` with haze density ``alpha`` in (0, 1]. Longer
wavelengths scatter less, so band ``c`` receives

    t_c = exp((lambda_1 / lambda_c) ** gamma * ln t1)

which equals ``t1 ** ((lambda_1 / lambda_c) ** gamma)``: transmission is
nondecreasing in wavelength at every pixel. A hazy cube is then composed as

    H_c = G_c * t_c + A_c * (1 - t_c)

with per-band atmospheric light ``A_c`` estimated from the brightest pixels
of the clean cube ``G``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube import HsiCube, WavelengthTable, transform_planes
from .errors import DimensionError, DomainError, ParameterError

# Fraction of the brightest pixels averaged for atmospheric light.
BRIGHT_FRACTION = 1e-4


def _as_patch_array(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"cirrus patch must be a non-empty 2-D array, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if not np.isfinite(arr).all():
        raise DomainError("cirrus patch contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DomainError(
            f"cirrus patch values must lie in [0, 1], got range "
            f"[{arr.min():g}, {arr.max():g}]"
        )
    return arr


@dataclass(frozen=True)
class CirrusPatch:
    """A 2-D cirrus-cloud reflectance field with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_patch_array(self.values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TransmissionStack:
    """Per-band transmission maps plus the parameters that produced them.

    ``reference`` is the shortest-band map t1 in (0, 1]; ``bands`` has one
    map per band, each bounded below by ``reference``.
    """

    reference: np.ndarray
    bands: np.ndarray
    alpha: float
    gamma: float

    def __post_init__(self):
        ref = np.asarray(self.reference)
        bands = np.asarray(self.bands)
        if ref.ndim != 2 or bands.ndim != 3 or bands.shape[1:] != ref.shape:
            raise DimensionError(
                f"transmission shapes disagree: reference {ref.shape}, bands {bands.shape}"
            )

    def transformed(self, op: str) -> "TransmissionStack":
        """Apply one rigid spatial transform to every transmission map."""
        ref = transform_planes(self.reference[np.newaxis], op)[0]
        return TransmissionStack(
            reference=ref,
            bands=transform_planes(self.bands, op),
            alpha=self.alpha,
            gamma=self.gamma,
        )


def reference_transmission(patch: CirrusPatch, alpha: float) -> np.ndarray:
    """Shortest-band transmission map ``1 - alpha * patch``.

    ``alpha`` must lie in (0, 1] and must satisfy ``alpha * max(patch) < 1``
    so the map stays strictly positive (a zero would make the spectral
    extrapolation degenerate).
    """
    if not np.isfinite(alpha) or not 0.0 < alpha <= 1.0:
        raise ParameterError(f"haze density alpha={alpha!r} must lie in (0, 1]")
    t1 = 1.0 - alpha * patch.values
    if t1.min() <= 0.0:
        raise ParameterError(
            f"alpha={alpha:g} with patch maximum {patch.values.max():g} drives "
            "reference transmission to zero; reduce alpha or rescale the patch"
        )
    return t1


def band_transmission(
    t1: np.ndarray,
    wavelengths: WavelengthTable,
    gamma: float,
    alpha: float,
) -> TransmissionStack:
    """Extrapolate the reference map across all bands of a wavelength table.

    Band 1 reproduces ``t1`` exactly; later bands apply the wavelength-ratio
    power law. ``alpha`` is carried along for record keeping only.
    """
    t1 = np.asarray(t1)
    if t1.ndim != 2:
        raise DimensionError(f"reference transmission must be 2-D, got {t1.shape}")
    if not np.isfinite(t1).all() or t1.min() <= 0.0 or t1.max() > 1.0:
        raise DomainError("reference transmission values must lie in (0, 1]")
    if not np.isfinite(gamma) or gamma <= 0.0:
        raise ParameterError(f"gamma={gamma!r} must be positive")
    ratios = (wavelengths.centers[0] / wavelengths.centers) ** gamma
    log_t1 = np.log(t1)
    bands = np.exp(ratios[:, np.newaxis, np.newaxis] * log_t1[np.newaxis])
    # exp(log(x)) may round off by an ulp; the first band is t1 by definition.
    bands[0] = t1
    return TransmissionStack(
        reference=t1.copy(), bands=bands, alpha=float(alpha), gamma=float(gamma)
    )


def estimate_atmospheric_light(clean: HsiCube, fraction: float = BRIGHT_FRACTION) -> np.ndarray:
    """Per-band atmospheric light: mean of the brightest pixels of each band.

    The pixel count is ``max(1, round(fraction * pixels))``, so small cubes
    fall back to the single brightest pixel per band.
    """
    if not np.isfinite(fraction) or fraction <= 0.0:
        raise ParameterError(f"bright-pixel fraction {fraction!r} must be positive")
    n_pixels = clean.pixels
    k = max(1, int(np.rint(fraction * n_pixels)))
    flat = clean.data.reshape(clean.bands, n_pixels)
    if k >= n_pixels:
        return flat.mean(axis=1)
    top = np.partition(flat, n_pixels - k, axis=1)[:, n_pixels - k :]
    return top.mean(axis=1)


def compose_haze(clean: HsiCube, stack: TransmissionStack, light: np.ndarray) -> HsiCube:
    """Blend clean radiance with atmospheric light through the transmission.

    Each output sample is the convex combination
    ``G * t + A * (1 - t)``, so it lies between the clean sample and the
    band's atmospheric light.
    """
    light = np.asarray(light)
    if stack.bands.shape != clean.data.shape:
        raise DimensionError(
            f"transmission stack shape {stack.bands.shape} does not match "
            f"cube shape {clean.data.shape}"
        )
    if light.shape != (clean.bands,):
        raise DimensionError(
            f"atmospheric light has shape {light.shape}, expected ({clean.bands},)"
        )
    if not np.isfinite(light).all() or light.min() < 0.0:
        raise DomainError("atmospheric light must be finite and non-negative")
    t = stack.bands
    per_band = light[:, np.newaxis, np.newaxis]
    hazy = clean.data * t + per_band * (1.0 - t)
    # The two rounded products can overshoot an endpoint by an ulp when the
    # clean sample and the light nearly coincide; pin the blend back inside
    # its convex envelope.
    hazy = np.clip(hazy, np.minimum(clean.data, per_band), np.maximum(clean.data, per_band))
    return HsiCube(data=hazy)
