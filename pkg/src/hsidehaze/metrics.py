"""Reference-based quality metrics: PSNR, UIQI, SAM, SSIM, plus the two
relative-error measures, bundled into one report.

All metrics compute in float64 regardless of input dtype. PSNR takes each
band's peak from the reference and may legitimately be infinite when the
two cubes are identical; everything else is finite on valid input. UIQI and
SSIM slide fully-contained windows with stride 1; window moments use the
population convention (the three-factor UIQI product is invariant to that
choice, so any consistent convention gives the same value).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .cube import HsiCube
from .errors import DimensionError, DomainError
from .training import mrae, rmrae

REPORT_KEYS = ("psnr", "uiqi", "sam", "ssim", "mrae", "rmrae", "n_skipped_windows")


def _paired(reference, estimate):
    r = reference.data if isinstance(reference, HsiCube) else np.asarray(reference)
    e = estimate.data if isinstance(estimate, HsiCube) else np.asarray(estimate)
    if r.shape != e.shape:
        raise DimensionError(f"reference shape {r.shape} != estimate shape {e.shape}")
    if r.ndim != 3:
        raise DimensionError(f"expected (bands, H, W) cubes, got shape {r.shape}")
    return r.astype(np.float64), e.astype(np.float64)


def _check_window(window: int, h: int, w: int, name: str):
    if window < 1:
        raise DimensionError(f"{name} window must be positive, got {window}")
    if window > h or window > w:
        raise DimensionError(
            f"{name} window {window} exceeds image extent {h}x{w}; "
            f"pass a smaller window for desk-scale cubes"
        )


def window_moments(a: np.ndarray, b: np.ndarray, window: int):
    """Two-pass moments of every fully-contained stride-1 window pair.

    Returns (mu_a, mu_b, var_a, var_b, cov, ptp_a, ptp_b), each of shape
    (H-window+1, W-window+1). Variances are population (divide by n);
    centering before squaring keeps them exact even when the variance is
    tiny relative to the mean. Row chunks bound peak memory.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    oh, ow = a.shape[0] - window + 1, a.shape[1] - window + 1
    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    out = [np.empty((oh, ow)) for _ in range(7)]
    mu_a, mu_b, var_a, var_b, cov, ptp_a, ptp_b = out
    chunk = max(1, (1 << 21) // max(1, ow * window * window))
    for r0 in range(0, oh, chunk):
        r1 = min(r0 + chunk, oh)
        sa = np.ascontiguousarray(wa[r0:r1])
        sb = np.ascontiguousarray(wb[r0:r1])
        ma = sa.mean(axis=(-2, -1))
        mb = sb.mean(axis=(-2, -1))
        da = sa - ma[..., np.newaxis, np.newaxis]
        db = sb - mb[..., np.newaxis, np.newaxis]
        mu_a[r0:r1] = ma
        mu_b[r0:r1] = mb
        var_a[r0:r1] = np.mean(da * da, axis=(-2, -1))
        var_b[r0:r1] = np.mean(db * db, axis=(-2, -1))
        cov[r0:r1] = np.mean(da * db, axis=(-2, -1))
        ptp_a[r0:r1] = sa.max(axis=(-2, -1)) - sa.min(axis=(-2, -1))
        ptp_b[r0:r1] = sb.max(axis=(-2, -1)) - sb.min(axis=(-2, -1))
    return mu_a, mu_b, var_a, var_b, cov, ptp_a, ptp_b


def psnr(reference, estimate) -> float:
    """Mean over bands of 10*log10(peak^2 / MSE) with the peak taken from
    the reference band. Identical cubes give the infinite sentinel."""
    r, e = _paired(reference, estimate)
    c = r.shape[0]
    flat_r = r.reshape(c, -1)
    flat_e = e.reshape(c, -1)
    peaks = flat_r.max(axis=1)
    for band, peak in enumerate(peaks):
        if peak * peak == 0.0:
            raise DomainError(f"band {band} of the reference has zero peak")
    mse = np.mean((flat_r - flat_e) ** 2, axis=1)
    values = np.where(
        mse > 0.0,
        10.0 * np.log10(peaks * peaks / np.where(mse > 0.0, mse, 1.0)),
        np.inf,
    )
    return float(values.mean())


def uiqi_details(reference, estimate, window: int = 64):
    """UIQI value plus the count of skipped degenerate windows.

    Per band, every window scores the three-factor product of correlation,
    luminance closeness, and contrast closeness; windows where either
    signal is constant (zero variance) or both means are zero are skipped
    and counted. Band values average their valid windows; the result
    averages the bands that had any valid window.
    """
    r, e = _paired(reference, estimate)
    _check_window(window, r.shape[1], r.shape[2], "uiqi")
    skipped = 0
    band_values = []
    for band in range(r.shape[0]):
        mu_a, mu_b, var_a, var_b, cov, ptp_a, ptp_b = window_moments(
            r[band], e[band], window
        )
        valid = (ptp_a > 0.0) & (ptp_b > 0.0) & (mu_a * mu_a + mu_b * mu_b > 0.0)
        skipped += int(valid.size - np.count_nonzero(valid))
        if not valid.any():
            continue
        ma = mu_a[valid]
        mb = mu_b[valid]
        # Fused form of correlation*luminance*contrast; numerator and
        # denominator share bit patterns when the inputs are identical,
        # so a perfect estimate scores exactly 1.
        num = (2.0 * cov[valid]) * (2.0 * ma * mb)
        den = (var_a[valid] + var_b[valid]) * (ma**2 + mb**2)
        band_values.append(float(np.mean(num / den)))
    if not band_values:
        raise DomainError("every window is degenerate; uiqi is undefined")
    return float(np.mean(band_values)), skipped


def uiqi(reference, estimate, window: int = 64) -> float:
    return uiqi_details(reference, estimate, window)[0]


def sam(reference, estimate) -> float:
    """Mean per-pixel spectral angle in degrees between the two cubes."""
    r, e = _paired(reference, estimate)
    c = r.shape[0]
    flat_r = r.reshape(c, -1)
    flat_e = e.reshape(c, -1)
    norm_r = np.linalg.norm(flat_r, axis=0)
    norm_e = np.linalg.norm(flat_e, axis=0)
    for name, norms in (("reference", norm_r), ("estimate", norm_e)):
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise DomainError(
                f"pixel {int(zero[0])} of the {name} has a zero-norm spectrum"
            )
    # Half-chord formula: well conditioned near zero angle, and exactly
    # zero when the two spectra match bit for bit.
    chord = np.linalg.norm(flat_r / norm_r - flat_e / norm_e, axis=0)
    angles = np.degrees(2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0)))
    return float(angles.mean())


def ssim(reference, estimate, window: int = 11) -> float:
    """Mean over bands and windows of the stabilized three-factor product.

    Stabilizers are C1=(0.01*R)^2, C2=(0.03*R)^2, C3=C2/2 with R the
    reference band's dynamic range (falling back to 1.0 for a constant
    band so the constants stay positive).
    """
    r, e = _paired(reference, estimate)
    _check_window(window, r.shape[1], r.shape[2], "ssim")
    band_values = []
    for band in range(r.shape[0]):
        ref_band = r[band]
        dyn = float(ref_band.max() - ref_band.min())
        if dyn == 0.0:
            dyn = 1.0
        c1 = (0.01 * dyn) ** 2
        c2 = (0.03 * dyn) ** 2
        mu_a, mu_b, var_a, var_b, cov, _, _ = window_moments(ref_band, e[band], window)
        # With C3 = C2/2 the contrast and structure factors fold into one
        # covariance ratio; the fused form scores a perfect estimate as
        # exactly 1 because numerator and denominator share bit patterns.
        lum = (2.0 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
        cs = (2.0 * cov + c2) / (var_a + var_b + c2)
        band_values.append(float(np.mean(lum * cs)))
    return float(np.mean(band_values))


@dataclass(frozen=True)
class MetricReport:
    """All quality metrics for one (reference, estimate) pair."""

    psnr: float
    uiqi: float
    sam: float
    ssim: float
    mrae: float
    rmrae: float
    n_skipped_windows: int

    def as_dict(self) -> dict:
        return {key: getattr(self, key) for key in REPORT_KEYS}

    def to_lines(self) -> list:
        """Plain-text ``key=value`` lines in the canonical key order."""
        lines = []
        for key, value in self.as_dict().items():
            if key == "n_skipped_windows":
                lines.append(f"{key}={value}")
            else:
                lines.append(f"{key}={value:.9g}")
        return lines

    @staticmethod
    def csv_header() -> str:
        return ",".join(REPORT_KEYS)

    def to_csv_row(self) -> str:
        cells = []
        for key, value in self.as_dict().items():
            cells.append(str(value) if key == "n_skipped_windows" else f"{value:.9g}")
        return ",".join(cells)


def evaluate(reference, estimate, uiqi_window: int = 64, ssim_window: int = 11) -> MetricReport:
    """Compute the full report for one pair."""
    uiqi_value, skipped = uiqi_details(reference, estimate, uiqi_window)
    return MetricReport(
        psnr=psnr(reference, estimate),
        uiqi=uiqi_value,
        sam=sam(reference, estimate),
        ssim=ssim(reference, estimate, ssim_window),
        mrae=mrae(reference, estimate),
        rmrae=rmrae(reference, estimate),
        n_skipped_windows=skipped,
    )
