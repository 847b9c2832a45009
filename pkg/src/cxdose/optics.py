"""Free-space propagation parameterized by the per-pixel Fresnel number.

The near-field propagator is the angular-spectrum transfer function
exp(+i pi (fx^2 + fy^2) / d), with fx, fy in cycles/pixel, applied between
unitary FFTs; the d -> 0 limit (far field) is a single centered FFT.  The
sign is consistent with forward propagation exp(-ikz) for phase-advanced
(positive-phase) objects; it is pinned by a regression test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as _sfft

from .errors import DimensionError
from .grid import ComplexField, fft2c

FAR_FIELD = 0.0
IDENTITY = math.inf


@dataclass(frozen=True)
class PropagationSpec:
    """Propagation kind encoded by the per-pixel Fresnel number d = pitch^2/(lambda z).

    d > 0 finite: near field; d == 0: far field; d == inf: identity.
    """

    fresnel_number: float

    def __post_init__(self):
        d = self.fresnel_number
        if d < 0 or math.isnan(d):
            raise ValueError(f"invalid Fresnel number {d}")

    @property
    def kind(self) -> str:
        if self.fresnel_number == FAR_FIELD:
            return "far_field"
        if math.isinf(self.fresnel_number):
            return "identity"
        return "near_field"

    @classmethod
    def near_field(cls, d: float) -> "PropagationSpec":
        if not (d > 0 and math.isfinite(d)):
            raise ValueError("near-field propagation requires finite d > 0")
        return cls(d)

    @classmethod
    def far_field(cls) -> "PropagationSpec":
        return cls(FAR_FIELD)

    @classmethod
    def identity(cls) -> "PropagationSpec":
        return cls(IDENTITY)


def fresnel_number(pixel_pitch: float, wavelength: float, distance: float) -> float:
    """Per-pixel Fresnel number pitch^2 / (wavelength * distance)."""
    if pixel_pitch <= 0 or wavelength <= 0 or distance <= 0:
        raise ValueError("pixel_pitch, wavelength and distance must all be > 0")
    return pixel_pitch**2 / (wavelength * distance)


@lru_cache(maxsize=32)
def _transfer_kernel(h: int, w: int, d: float) -> np.ndarray:
    """Fresnel transfer function in the non-shifted FFT layout; |H| = 1."""
    fy = _sfft.fftfreq(h)[:, None]
    fx = _sfft.fftfreq(w)[None, :]
    return np.exp(1j * np.pi * (fx**2 + fy**2) / d)


def _propagate_array(a: np.ndarray, d: float, inverse: bool = False,
                     workers: int = 1) -> np.ndarray:
    h, w = a.shape[-2:]
    kernel = _transfer_kernel(h, w, d)
    if inverse:
        kernel = np.conj(kernel)
    spec = _sfft.fft2(a, norm="ortho", workers=workers)
    spec *= kernel
    return _sfft.ifft2(spec, norm="ortho", workers=workers)


def propagate(f: ComplexField, spec: PropagationSpec) -> ComplexField:
    """Propagate forward to the detector plane.  Unitary for all kinds."""
    if f.height < 2 or f.width < 2:
        raise DimensionError("propagation needs at least a 2x2 field")
    if spec.kind == "identity":
        return f
    if spec.kind == "far_field":
        return ComplexField(fft2c(f.data), f.pixel_pitch)
    return ComplexField(_propagate_array(f.data, spec.fresnel_number), f.pixel_pitch)


def propagate_back(f: ComplexField, spec: PropagationSpec) -> ComplexField:
    """Exact inverse (= adjoint, by unitarity) of :func:`propagate`."""
    if spec.kind == "identity":
        return f
    if spec.kind == "far_field":
        from .grid import ifft2c

        return ComplexField(ifft2c(f.data), f.pixel_pitch)
    return ComplexField(_propagate_array(f.data, spec.fresnel_number, inverse=True),
                        f.pixel_pitch)
