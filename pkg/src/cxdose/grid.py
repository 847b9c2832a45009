"""Complex/real 2D field containers with FFT, padding, cropping and windowing.

All spectra use the centered layout (zero frequency at the array center)
and the unitary ("ortho") DFT normalization, so transforming a field
conserves its total power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as _sfft

from .errors import DimensionError


def _validate_2d(arr: np.ndarray, name: str) -> None:
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a 2D array with positive shape, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class ComplexField:
    """2D complex wavefield / image on a square pixel grid."""

    data: np.ndarray
    pixel_pitch: float | None = None  # meters per pixel

    def __post_init__(self):
        arr = np.asarray(self.data)
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.complex128)
        _validate_2d(arr, "ComplexField.data")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def power(self) -> float:
        """Total power sum(|f|^2)."""
        return float(np.sum(np.abs(self.data) ** 2))


@dataclass(frozen=True)
class RealField:
    """2D real-valued map (radians for phase, photons for intensities)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if np.iscomplexobj(arr):
            raise DimensionError("RealField.data must be real-valued")
        _validate_2d(arr, "RealField.data")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# Array-level kernels.  The ComplexField operations below are thin wrappers;
# performance-critical code (forward models, gradients) uses these directly.
# ---------------------------------------------------------------------------

def fft2c(a: np.ndarray, workers: int = 1) -> np.ndarray:
    """Unitary 2D FFT with zero frequency at the array center (last two axes)."""
    return _sfft.fftshift(
        _sfft.fft2(_sfft.ifftshift(a, axes=(-2, -1)), norm="ortho", workers=workers),
        axes=(-2, -1),
    )


def ifft2c(a: np.ndarray, workers: int = 1) -> np.ndarray:
    """Inverse of :func:`fft2c`."""
    return _sfft.fftshift(
        _sfft.ifft2(_sfft.ifftshift(a, axes=(-2, -1)), norm="ortho", workers=workers),
        axes=(-2, -1),
    )


def pad_center_array(a: np.ndarray, margin: int, fill=0.0) -> np.ndarray:
    if margin < 0:
        raise DimensionError("pad margin must be >= 0")
    if margin == 0:
        return a.copy()
    h, w = a.shape[-2:]
    out_shape = a.shape[:-2] + (h + 2 * margin, w + 2 * margin)
    out = np.full(out_shape, fill, dtype=a.dtype)
    out[..., margin:margin + h, margin:margin + w] = a
    return out


def crop_center_array(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = a.shape[-2:]
    if out_h > h or out_w > w or out_h < 1 or out_w < 1:
        raise DimensionError(f"cannot crop {h}x{w} to {out_h}x{out_w}")
    top = (h - out_h) // 2
    left = (w - out_w) // 2
    return a[..., top:top + out_h, left:left + out_w].copy()


# ---------------------------------------------------------------------------
# Field-level operations.
# ---------------------------------------------------------------------------

def fft2_centered(f: ComplexField) -> ComplexField:
    return ComplexField(fft2c(f.data), f.pixel_pitch)


def ifft2_centered(f: ComplexField) -> ComplexField:
    return ComplexField(ifft2c(f.data), f.pixel_pitch)


def pad_center(f: ComplexField, margin: int, fill: complex = 0.0) -> ComplexField:
    """Pad by `margin` pixels on each side, original field centered."""
    return ComplexField(pad_center_array(f.data, margin, fill), f.pixel_pitch)


def crop_center(f: ComplexField, out_h: int, out_w: int) -> ComplexField:
    """Centered sub-window; exact inverse of pad_center at the original size."""
    return ComplexField(crop_center_array(f.data, out_h, out_w), f.pixel_pitch)


def extract_patch(f: ComplexField, top: int, left: int, size: int) -> ComplexField:
    """size x size window at (top, left); non-wrapping."""
    if top < 0 or left < 0 or top + size > f.height or left + size > f.width:
        raise DimensionError(
            f"patch [{top}:{top + size}, {left}:{left + size}] outside {f.height}x{f.width} field"
        )
    return ComplexField(f.data[top:top + size, left:left + size].copy(), f.pixel_pitch)
