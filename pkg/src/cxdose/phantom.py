"""Test objects: procedural cell-like phase phantom, loader, and support mask.

The generator builds a blobby "cell" (smoothed noise biased by an elliptical
envelope, thresholded at an exact pixel quantile), adds granule-like bright
spots and a low-amplitude texture, then rescales so the in-support mean phase
hits the target exactly.  Phase is pure (absorption = 0) and bounded to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError
from .grid import RealField

PHASE_EPS = 1e-6  # pixels with phase above this count as support


@dataclass(frozen=True)
class ObjectModel:
    """Per-pixel phase (radians) plus optional absorption map."""

    phase: RealField
    absorption: RealField | None = None
    pixel_pitch: float | None = None

    def __post_init__(self):
        if self.absorption is not None:
            if self.absorption.data.shape != self.phase.data.shape:
                raise DataError("absorption and phase shapes differ")

    @property
    def size(self) -> int:
        return self.phase.height

    def support(self) -> np.ndarray:
        return self.phase.data > PHASE_EPS


@dataclass(frozen=True)
class SupportMask:
    """Loosened boolean support; dilation of the true support by a disk."""

    mask: np.ndarray
    looseness: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


def generate_phantom(seed: int, size: int = 512, target_mean_phase: float = 0.643,
                     target_support_fraction: float = 0.194) -> ObjectModel:
    """Procedural pure-phase cell phantom with prescribed summary statistics.

    Deterministic given (seed, parameters).  Support fraction is hit exactly
    (quantile threshold); the in-support mean phase is hit by a global rescale.
    """
    if size < 64:
        raise ValueError("size must be >= 64")
    if not (0 < target_support_fraction < 1):
        raise ValueError("target_support_fraction must be in (0, 1)")
    if not (0 < target_mean_phase <= 1):
        raise ValueError("target_mean_phase must be in (0, 1]")

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = cx = (size - 1) / 2.0

    # Blobby cell outline: elliptical envelope plus large-scale smoothed noise.
    a, b = 0.62 * size / 2, 0.50 * size / 2
    rho = np.sqrt(((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2)
    outline = ndimage.gaussian_filter(rng.standard_normal((size, size)), size / 24.0)
    outline /= max(outline.std(), 1e-12)
    score = 0.35 * outline - rho

    n_support = int(round(target_support_fraction * size * size))
    thresh = np.partition(score.ravel(), -n_support)[-n_support]
    support = score >= thresh

    # Low-amplitude smooth texture inside the cell.
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), 3.0)
    texture *= 0.05 / max(texture.std(), 1e-12)

    # Granules: a few bright Gaussian spots at interior support pixels.
    interior = ndimage.binary_erosion(support, iterations=max(2, size // 64))
    iy, ix = np.nonzero(interior)
    granules = np.zeros((size, size))
    if iy.size:
        n_gran = max(4, size // 48)
        picks = rng.choice(iy.size, size=min(n_gran, iy.size), replace=False)
        sigmas = rng.uniform(1.6, 2.8, size=picks.size)
        sigmas[0] = 2.0  # one well-defined feature for sharpness fits
        for p, sg in zip(picks, sigmas):
            gy, gx = iy[p], ix[p]
            granules += 0.30 * np.exp(-((yy - gy) ** 2 + (xx - gx) ** 2) / (2 * sg**2))

    raw = np.where(support, np.clip(1.0 + texture + granules, 0.3, None), 0.0)
    scale = target_mean_phase / raw[support].mean()
    phase = raw * scale
    if phase.max() > 1.0:
        raise DataError("cannot reach target mean phase without exceeding the 1 rad bound")

    phase = phase.astype(np.float32)
    return ObjectModel(phase=RealField(phase))


def find_bright_feature(obj: ObjectModel) -> tuple[int, int]:
    """(row, col) of the strongest granule-like spot; used for sharpness fits."""
    smoothed = ndimage.gaussian_filter(obj.phase.data.astype(np.float64), 1.0)
    idx = int(np.argmax(smoothed))
    return idx // obj.phase.width, idx % obj.phase.width


def make_support_mask(obj: ObjectModel, looseness: int = 9) -> SupportMask:
    """Dilate the true support by a disk of radius `looseness` (Euclidean)."""
    if looseness < 0:
        raise ValueError("looseness must be >= 0")
    support = obj.support()
    if looseness == 0:
        return SupportMask(mask=support, looseness=0)
    dist = ndimage.distance_transform_edt(~support)
    return SupportMask(mask=dist <= looseness, looseness=looseness)


def object_stats(obj: ObjectModel) -> tuple[float, float, float]:
    """(mean_phase, sigma_phase, support_fraction) over true-support pixels.

    sigma uses the population (divide by N) convention.
    """
    support = obj.support()
    n = int(np.count_nonzero(support))
    if n == 0:
        raise DataError("object has empty support")
    vals = obj.phase.data[support].astype(np.float64)
    return float(vals.mean()), float(vals.std()), n / support.size


def load_object(path) -> ObjectModel:
    """Read an ObjectModel container; validates the phase invariants."""
    from . import containers

    obj = containers.load_object(path)
    phase = obj.phase.data
    bad = int(np.count_nonzero((phase < -PHASE_EPS) | (phase >= 2 * np.pi)))
    if bad:
        raise DataError(f"phase outside [0, 2*pi) at {bad} pixels")
    return obj


def save_object(obj: ObjectModel, path) -> None:
    from . import containers

    containers.save_object(obj, path)
