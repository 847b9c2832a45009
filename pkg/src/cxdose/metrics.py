"""Reconstruction quality metrics and analytic fluence/SNR estimates.

Includes correlation-based SNR between two noise instances, within-support
mean squared error, Fourier ring correlation with the half-bit threshold,
a Gaussian feature-width fit, and closed-form fluence/SNR relations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DataError, DimensionError, NumericalError
from .grid import RealField, fft2c
from .phantom import ObjectModel, SupportMask


@dataclass(frozen=True)
class FrcCurve:
    ring_freqs: np.ndarray       # cycles/pixel, ring centers
    frc_values: np.ndarray
    ring_counts: np.ndarray      # pixels per ring
    halfbit_threshold: np.ndarray
    crossing_fraction_of_nyquist: float


@dataclass(frozen=True)
class FeatureFit:
    sigma: float        # pixels
    amplitude: float
    offset: float
    center: tuple[float, float]
    residual_rms: float


@dataclass(frozen=True)
class MetricsReport:
    snr: float
    r: float
    smse: float
    frc: FrcCurve | None = None
    feature_sigma: float | None = None


def correlation_r(img1: RealField, img2: RealField, region: SupportMask) -> float:
    """Pearson correlation of the two images over the region pixels only."""
    if img1.data.shape != img2.data.shape or img1.data.shape != region.mask.shape:
        raise DimensionError("image/region shapes differ")
    if region.area == 0:
        raise DataError("empty correlation region")
    a = img1.data[region.mask].astype(np.float64)
    b = img2.data[region.mask].astype(np.float64)
    a -= a.mean()
    b -= b.mean()
    denom = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if denom == 0:
        raise DataError("zero variance inside region")
    return float(np.sum(a * b) / denom)


def snr_from_r(r: float) -> float:
    """SNR = sqrt(r / (1 - r)); negative r clamps to 0, r >= 1 maps to inf."""
    if r >= 1:
        return math.inf
    if r <= 0:
        return 0.0
    return math.sqrt(r / (1.0 - r))


def smse(truth: ObjectModel, recon: ObjectModel, support: SupportMask,
         align_offset: bool = False) -> float:
    """Within-support mean squared phase error, in rad^2."""
    pt = truth.phase.data.astype(np.float64)
    pr = recon.phase.data.astype(np.float64)
    if pt.shape != pr.shape or pt.shape != support.mask.shape:
        raise DimensionError("phase/support shapes differ")
    if support.area == 0:
        raise DataError("empty support")
    diff = pt[support.mask] - pr[support.mask]
    if align_offset:
        diff -= diff.mean()
    return float(np.mean(diff**2))


def _halfbit_threshold(counts: np.ndarray) -> np.ndarray:
    root = np.sqrt(np.maximum(counts, 1))
    return (0.2071 + 1.9102 / root) / (1.2071 + 0.9102 / root)


def frc(img1: RealField, img2: RealField, ring_width: float | None = None) -> FrcCurve:
    """Fourier ring correlation of two equally shaped square images.

    Rings are one frequency pixel wide; the real part of the normalized ring
    cross-spectrum is reported.  The crossing fraction is the first downward
    crossing of the half-bit threshold (linearly interpolated between ring
    centers) as a fraction of the Nyquist frequency, or 1.0 if none occurs.
    """
    a, b = img1.data, img2.data
    if a.shape != b.shape:
        raise DimensionError("FRC inputs must have equal shapes")
    if a.shape[0] != a.shape[1]:
        raise DimensionError("FRC inputs must be square")
    n = a.shape[0]
    f1 = fft2c(a.astype(np.float64))
    f2 = fft2c(b.astype(np.float64))

    c = n // 2
    yy, xx = np.mgrid[0:n, 0:n]
    radius = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
    ring = np.rint(radius).astype(np.int64)
    nyq_ring = n // 2
    valid = (ring >= 1) & (ring <= nyq_ring)
    ring_v = ring[valid]

    cross = (f1 * np.conj(f2))[valid]
    num = (np.bincount(ring_v, weights=cross.real, minlength=nyq_ring + 1)
           + 1j * np.bincount(ring_v, weights=cross.imag, minlength=nyq_ring + 1))
    p1 = np.bincount(ring_v, weights=np.abs(f1[valid]) ** 2, minlength=nyq_ring + 1)
    p2 = np.bincount(ring_v, weights=np.abs(f2[valid]) ** 2, minlength=nyq_ring + 1)
    counts = np.bincount(ring_v, minlength=nyq_ring + 1)

    num = num[1:]
    p1, p2, counts = p1[1:], p2[1:], counts[1:]
    denom = np.sqrt(p1 * p2)
    values = np.where(denom > 0, num.real / np.maximum(denom, 1e-300), 0.0)
    freqs = np.arange(1, nyq_ring + 1) / n
    thresh = _halfbit_threshold(counts)

    crossing = 1.0
    for i in range(len(values)):
        if values[i] < thresh[i]:
            if i == 0:
                crossing = freqs[0] / 0.5
            else:
                # linear interpolation of (frc - threshold) between ring centers
                d0 = values[i - 1] - thresh[i - 1]
                d1 = values[i] - thresh[i]
                frac = d0 / (d0 - d1) if d0 != d1 else 0.0
                crossing = (freqs[i - 1] + frac * (freqs[i] - freqs[i - 1])) / 0.5
            break

    return FrcCurve(ring_freqs=freqs, frc_values=values, ring_counts=counts,
                    halfbit_threshold=thresh,
                    crossing_fraction_of_nyquist=float(min(crossing, 1.0)))


def fit_feature_sigma(img: RealField, center_hint: tuple[int, int],
                      window: int = 15) -> FeatureFit:
    """Least-squares fit of a symmetric 2D Gaussian + offset around a feature."""
    n_h, n_w = img.data.shape
    cy, cx = center_hint
    half = window // 2
    top, left = cy - half, cx - half
    if top < 0 or left < 0 or top + window > n_h or left + window > n_w:
        raise DimensionError("fit window does not fit inside the image")
    patch = img.data[top:top + window, left:left + window].astype(np.float64)
    yy, xx = np.mgrid[0:window, 0:window].astype(np.float64)

    def model(params):
        amp, y0, x0, sigma, bias = params
        return amp * np.exp(-((yy - y0) ** 2 + (xx - x0) ** 2) / (2 * sigma**2)) + bias

    def residual(params):
        return (model(params) - patch).ravel()

    base = float(np.median(patch))
    amp0 = float(patch.max() - base)
    span = float(patch.max() - patch.min())
    lo = [0.0, 0.0, 0.0, 0.3, patch.min() - span]
    hi = [max(4 * span, 1e-6), window - 1.0, window - 1.0, float(window), patch.max() + span]
    starts = [
        [max(amp0, 1e-6), half, half, 2.0, base],
        [max(amp0, 1e-6), half, half, 1.0, base],
        [max(span, 1e-6), half, half, 4.0, float(patch.min())],
    ]

    best = None
    for p0 in starts:
        try:
            sol = optimize.least_squares(residual, p0, bounds=(lo, hi))
        except ValueError:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None or not best.success:
        raise NumericalError("Gaussian feature fit did not converge")

    amp, y0, x0, sigma, bias = best.x
    rms = float(np.sqrt(np.mean(residual(best.x) ** 2)))
    if amp < 3 * rms:
        raise NumericalError("feature fit unreliable: amplitude below residual level")
    return FeatureFit(sigma=float(sigma), amplitude=float(amp), offset=float(bias),
                      center=(top + y0, left + x0), residual_rms=rms)


def fluence_for_snr(target_snr: float, mean_phase: float) -> float:
    """Photons/pixel needed for a target SNR: SNR^2 / (2 mean_phase^2)."""
    if mean_phase <= 0:
        raise ValueError("mean_phase must be > 0")
    return target_snr**2 / (2.0 * mean_phase**2)


def snr_ratio_ffp_nfh(fov_nfh: float, sigma_f: float, B: float = 1.0) -> float:
    """SNR advantage of a scanned Gaussian probe over full-field near-field imaging.

    sqrt(pi)/(8 B) * fov_nfh / (2 sqrt(2) sigma_f); the probe field of view is
    the equal-area disk diameter 2 sqrt(2) sigma_f of the Gaussian probe.
    """
    if fov_nfh <= 0 or sigma_f <= 0 or B <= 0:
        raise ValueError("all inputs must be > 0")
    return math.sqrt(math.pi) / (8.0 * B) * fov_nfh / (2.0 * math.sqrt(2.0) * sigma_f)
