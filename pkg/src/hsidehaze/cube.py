"""Core hyperspectral data types.

A cube is stored band-major as a ``(bands, height, width)`` float array, so
``data[c]`` is the spatial plane of band ``c`` and ``data[:, i, j]`` is the
spectrum of pixel ``(i, j)``. All wrapper types are frozen dataclasses;
operations return new objects and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, ParameterError

# Spatial transforms usable for dataset augmentation. Quarter turns require
# square planes; flips and the half turn work on any shape.
AUGMENT_OPS = ("identity", "rot90", "rot180", "rot270", "fliph", "flipv")

WAVELENGTH_MIN_NM = 350.0
WAVELENGTH_MAX_NM = 2600.0
VISIBLE_LIMIT_NM = 700.0


def _as_float_array(values, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if arr.size == 0:
        raise DimensionError(f"{name} must be non-empty")
    if not np.isfinite(arr).all():
        raise DomainError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class HsiCube:
    """A hyperspectral cube of finite float samples, band-major."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.data, "cube data", 3)
        object.__setattr__(self, "data", arr)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def pixels(self) -> int:
        return self.data.shape[1] * self.data.shape[2]


@dataclass(frozen=True)
class WavelengthTable:
    """Band center wavelengths in nanometers, strictly increasing.

    ``visible_count`` is the number of leading bands treated as visible
    range; the remaining bands are treated as infrared. At least one band
    must fall on each side of the boundary.
    """

    centers: np.ndarray
    visible_count: int

    def __post_init__(self):
        arr = _as_float_array(self.centers, "wavelength centers", 1)
        if arr.min() < WAVELENGTH_MIN_NM or arr.max() > WAVELENGTH_MAX_NM:
            raise DomainError(
                f"wavelength centers must lie in [{WAVELENGTH_MIN_NM:g}, "
                f"{WAVELENGTH_MAX_NM:g}] nm, got range "
                f"[{arr.min():g}, {arr.max():g}]"
            )
        if arr.size < 2:
            raise DimensionError("wavelength table needs at least two bands")
        if not (np.diff(arr) > 0).all():
            raise DomainError("wavelength centers must be strictly increasing")
        if not 1 <= self.visible_count < arr.size:
            raise ParameterError(
                f"visible_count must be in [1, {arr.size - 1}], got {self.visible_count}"
            )
        object.__setattr__(self, "centers", arr)

    @property
    def bands(self) -> int:
        return self.centers.size

    @classmethod
    def from_centers(cls, centers, visible_limit_nm: float = VISIBLE_LIMIT_NM) -> "WavelengthTable":
        """Build a table deriving the visible count from a boundary wavelength.

        Bands with centers strictly below ``visible_limit_nm`` count as
        visible. The count is clamped to [1, bands - 1] so the invariant
        that both ranges are non-empty always holds.
        """
        arr = np.asarray(centers, dtype=np.float64)
        count = int(np.count_nonzero(arr < visible_limit_nm))
        count = min(max(count, 1), max(arr.size - 1, 1))
        return cls(centers=arr, visible_count=count)

    def select(self, keep: np.ndarray) -> "WavelengthTable":
        """Restrict the table to the bands flagged True in ``keep``."""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.bands,):
            raise DimensionError(
                f"keep mask length {keep.size} does not match {self.bands} bands"
            )
        new_visible = int(np.count_nonzero(keep[: self.visible_count]))
        new_centers = self.centers[keep]
        if new_centers.size < 2:
            raise DimensionError("band selection leaves fewer than two bands")
        new_visible = min(max(new_visible, 1), new_centers.size - 1)
        return WavelengthTable(centers=new_centers, visible_count=new_visible)


@dataclass(frozen=True)
class BandMask:
    """Boolean keep-mask over the bands of a cube."""

    keep: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.keep, dtype=bool)
        if arr.ndim != 1 or arr.size == 0:
            raise DimensionError("band mask must be a non-empty 1-D boolean array")
        if not arr.any():
            raise DomainError("band mask keeps no bands")
        object.__setattr__(self, "keep", arr)

    @property
    def kept(self) -> int:
        return int(np.count_nonzero(self.keep))

    @classmethod
    def from_dropped_ranges(cls, total_bands: int, ranges) -> "BandMask":
        """Build a mask from 1-based inclusive band ranges to drop."""
        if total_bands < 1:
            raise ParameterError(f"total_bands must be positive, got {total_bands}")
        keep = np.ones(total_bands, dtype=bool)
        for lo, hi in ranges:
            if not (1 <= lo <= hi <= total_bands):
                raise ParameterError(
                    f"drop range [{lo}, {hi}] is outside [1, {total_bands}]"
                )
            keep[lo - 1 : hi] = False
        return cls(keep=keep)


def aviris_water_vapor_mask() -> BandMask:
    """Keep-mask removing the noisy and water-absorption bands of a
    224-band AVIRIS cube, leaving the 172 usable bands."""
    return BandMask.from_dropped_ranges(
        224, [(1, 10), (104, 116), (152, 170), (215, 224)]
    )


def exclude_bands(cube: HsiCube, mask: BandMask) -> HsiCube:
    """Drop the masked-out bands, preserving the order of the kept ones.

    Any accompanying wavelength table must be filtered by the caller with
    :meth:`WavelengthTable.select` using the same mask.
    """
    if mask.keep.size != cube.bands:
        raise DimensionError(
            f"mask length {mask.keep.size} does not match cube bands {cube.bands}"
        )
    return HsiCube(data=cube.data[mask.keep].copy())


def to_matrix(cube: HsiCube) -> np.ndarray:
    """Flatten a cube to a ``(bands, pixels)`` matrix.

    Pixels are ordered row-major, so column ``i * width + j`` holds the
    spectrum of pixel ``(i, j)``.
    """
    return cube.data.reshape(cube.bands, cube.pixels).copy()


def from_matrix(matrix: np.ndarray, height: int, width: int) -> HsiCube:
    """Inverse of :func:`to_matrix` for the given spatial shape."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise DimensionError(f"matrix must be 2-D, got shape {matrix.shape}")
    if height < 1 or width < 1:
        raise ParameterError(f"height and width must be positive, got {height}x{width}")
    if matrix.shape[1] != height * width:
        raise DimensionError(
            f"matrix has {matrix.shape[1]} columns, expected {height * width} "
            f"for a {height}x{width} cube"
        )
    return HsiCube(data=matrix.reshape(matrix.shape[0], height, width).copy())


def transform_planes(planes: np.ndarray, op: str) -> np.ndarray:
    """Apply one spatial transform to every plane of a ``(C, H, W)`` stack."""
    if op not in AUGMENT_OPS:
        raise ParameterError(
            f"unknown augmentation {op!r}, expected one of {', '.join(AUGMENT_OPS)}"
        )
    if op in ("rot90", "rot270") and planes.shape[1] != planes.shape[2]:
        raise DimensionError(
            f"{op} requires square planes, got {planes.shape[1]}x{planes.shape[2]}"
        )
    if op == "identity":
        out = planes
    elif op == "rot90":
        out = np.rot90(planes, k=1, axes=(1, 2))
    elif op == "rot180":
        out = np.rot90(planes, k=2, axes=(1, 2))
    elif op == "rot270":
        out = np.rot90(planes, k=3, axes=(1, 2))
    elif op == "fliph":
        out = planes[:, :, ::-1]
    else:  # flipv
        out = planes[:, ::-1, :]
    return np.ascontiguousarray(out)


def augment(cube: HsiCube, op: str) -> HsiCube:
    """Return the cube with one rigid spatial transform applied to all bands.

    The transform permutes pixel positions only: every spectrum survives
    unchanged, bands are never reordered, and applying the inverse
    transform restores the original cube.
    """
    return HsiCube(data=transform_planes(cube.data, op))


def rgb_composite(cube: HsiCube, red_band: int, green_band: int, blue_band: int) -> np.ndarray:
    """Render three bands as an 8-bit RGB image of shape ``(H, W, 3)``.

    Band indices are 0-based. Each chosen band is min-max scaled to
    [0, 255] independently; a constant band renders as zeros.
    """
    out = np.zeros((cube.height, cube.width, 3), dtype=np.uint8)
    for slot, band in enumerate((red_band, green_band, blue_band)):
        if not 0 <= band < cube.bands:
            raise ParameterError(
                f"band index {band} out of range [0, {cube.bands - 1}]"
            )
        plane = cube.data[band].astype(np.float64)
        lo = plane.min()
        hi = plane.max()
        if hi > lo:
            scaled = np.rint((plane - lo) / (hi - lo) * 255.0)
            out[:, :, slot] = scaled.astype(np.uint8)
    return out
