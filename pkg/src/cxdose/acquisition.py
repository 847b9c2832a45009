"""Forward models for NFH, FFP and NFP: probes, scan grids, fluence, noise.

Conventions:
- forward() and simulate_noise_free() use unit illumination (plane wave of
  amplitude 1, probe peak 1, |structured| = 1); scale_to_fluence() then
  applies one global scalar so the photons landing in the object-array
  field of view average to n_ph per object pixel over all exposures.
- NFH keeps the full padded frame as the detector (nothing cropped).
- NFP scan offsets are a rounded lattice spanning [0, frame - object].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import DataError, DimensionError
from .grid import RealField, crop_center_array, pad_center_array
from .optics import PropagationSpec, _propagate_array
from .phantom import ObjectModel


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeSpec:
    kind: str  # plane_wave | gaussian | structured
    array_size: int
    sigma_mag: float = 6.0       # gaussian: magnitude std in pixels
    phase_peak: float = 0.5      # gaussian: center phase in radians
    phase_sigma: float = 0.3     # structured: per-pixel phase std before smoothing
    smooth_sigma: float = 5.0    # structured: smoothing kernel std in pixels
    seed: int = 0                # structured: phase noise seed

    def __post_init__(self):
        if self.kind not in ("plane_wave", "gaussian", "structured"):
            raise ValueError(f"unknown probe kind {self.kind!r}")
        if self.array_size < 1:
            raise ValueError("array_size must be >= 1")


def build_probe(spec: ProbeSpec) -> np.ndarray:
    """Complex probe array, deterministic given the spec (incl. seed)."""
    n = spec.array_size
    if spec.kind == "plane_wave":
        return np.ones((n, n), dtype=np.complex128)
    if spec.kind == "gaussian":
        c = n // 2
        yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
        r2 = (yy - c) ** 2 + (xx - c) ** 2
        mag = np.exp(-r2 / (2 * spec.sigma_mag**2))
        phase = spec.phase_peak * np.exp(-r2 / (2 * spec.sigma_mag**2))
        return mag * np.exp(1j * phase)
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal((n, n)) * spec.phase_sigma
    phase = ndimage.gaussian_filter(noise, spec.smooth_sigma)
    return np.exp(1j * phase)


# ---------------------------------------------------------------------------
# Scan grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanGrid:
    """Row-major list of patch/offset positions inside the object or frame."""

    rows: int
    cols: int
    patch_size: int
    row_offsets: tuple  # length rows
    col_offsets: tuple  # length cols

    @property
    def count(self) -> int:
        return self.rows * self.cols

    def position(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.count:
            raise IndexError(f"exposure index {k} out of range [0, {self.count})")
        return self.row_offsets[k // self.cols], self.col_offsets[k % self.cols]

    @classmethod
    def regular(cls, rows: int, cols: int, step: int, origin: tuple[int, int],
                patch_size: int) -> "ScanGrid":
        return cls(rows, cols, patch_size,
                   tuple(origin[0] + step * i for i in range(rows)),
                   tuple(origin[1] + step * j for j in range(cols)))

    @classmethod
    def spanning(cls, rows: int, cols: int, span: int, patch_size: int) -> "ScanGrid":
        """Positions spanning [0, span] with rounded equal spacing per axis."""
        return cls(rows, cols, patch_size,
                   tuple(round(i * span / (rows - 1)) for i in range(rows)),
                   tuple(round(j * span / (cols - 1)) for j in range(cols)))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AcquisitionGeometry:
    modality: str  # NFH | FFP | NFP
    propagation: PropagationSpec
    probe: ProbeSpec
    obj_size: int
    grid: ScanGrid | None = None       # FFP: patches in object; NFP: object offsets in frame
    pad_margin: int = 0                # NFH
    detector_crop: int | None = None   # NFP

    @property
    def num_exposures(self) -> int:
        return 1 if self.grid is None else self.grid.count

    def frame_shape(self) -> tuple[int, int]:
        if self.modality == "NFH":
            n = self.obj_size + 2 * self.pad_margin
            return n, n
        if self.modality == "FFP":
            return self.grid.patch_size, self.grid.patch_size
        return self.detector_crop, self.detector_crop


def nfh_geometry(obj_size: int = 512, d: float = 1e-3,
                 pad_margin: int | None = None) -> AcquisitionGeometry:
    if pad_margin is None:
        pad_margin = obj_size // 2
    return AcquisitionGeometry(
        modality="NFH",
        propagation=PropagationSpec.near_field(d),
        probe=ProbeSpec(kind="plane_wave", array_size=obj_size + 2 * pad_margin),
        obj_size=obj_size,
        pad_margin=pad_margin,
    )


def ffp_geometry(obj_size: int = 512, rows: int | None = None, cols: int | None = None,
                 step: int = 5, patch_size: int = 72, sigma_mag: float = 6.0,
                 phase_peak: float = 0.5) -> AcquisitionGeometry:
    # Default 66x68 at 512; other sizes scale the counts proportionally,
    # clamped so the patch grid still fits inside the object array.
    fit_max = (obj_size - patch_size) // step + 1
    if rows is None:
        rows = max(2, min(round(66 * obj_size / 512), fit_max))
    if cols is None:
        cols = max(2, min(round(68 * obj_size / 512), fit_max))
    span_r = (rows - 1) * step + patch_size
    span_c = (cols - 1) * step + patch_size
    if span_r > obj_size or span_c > obj_size:
        raise DimensionError("FFP scan grid does not fit inside the object array")
    origin = (math.ceil((obj_size - span_r) / 2), math.ceil((obj_size - span_c) / 2))
    return AcquisitionGeometry(
        modality="FFP",
        propagation=PropagationSpec.far_field(),
        probe=ProbeSpec(kind="gaussian", array_size=patch_size,
                        sigma_mag=sigma_mag, phase_peak=phase_peak),
        obj_size=obj_size,
        grid=ScanGrid.regular(rows, cols, step, origin, patch_size),
    )


def nfp_geometry(obj_size: int = 512, d: float = 1e-3, frame_size: int | None = None,
                 rows: int = 4, cols: int = 4, phase_sigma: float = 0.3,
                 smooth_sigma: float = 5.0, probe_seed: int = 0) -> AcquisitionGeometry:
    if frame_size is None:
        frame_size = obj_size + obj_size // 2  # 768 for a 512 object
    if frame_size < obj_size:
        raise DimensionError("NFP illumination frame must contain the object")
    return AcquisitionGeometry(
        modality="NFP",
        propagation=PropagationSpec.near_field(d),
        probe=ProbeSpec(kind="structured", array_size=frame_size,
                        phase_sigma=phase_sigma, smooth_sigma=smooth_sigma,
                        seed=probe_seed),
        obj_size=obj_size,
        grid=ScanGrid.spanning(rows, cols, frame_size - obj_size, patch_size=obj_size),
        detector_crop=obj_size,
    )


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Stack of measured detector frames plus acquisition metadata."""

    frames: np.ndarray  # (num_exposures, H, W), photons per pixel
    geometry: AcquisitionGeometry
    fluence: float | None = None  # photons per object pixel; None = unit illumination
    seed: int | None = None       # noise seed, None while noise-free
    noise_free: bool = True

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise DimensionError("frames must be a (num_exposures, H, W) stack")
        if frames.shape[0] != self.geometry.num_exposures:
            raise DataError(
                f"expected {self.geometry.num_exposures} frames, got {frames.shape[0]}")
        if frames.min() < 0:
            raise DataError("negative intensity in dataset")
        object.__setattr__(self, "frames", frames)


def _exit_wave(obj: ObjectModel) -> np.ndarray:
    phase = obj.phase.data.astype(np.float64)
    if obj.absorption is not None:
        return np.exp(1j * phase - obj.absorption.data.astype(np.float64))
    return np.exp(1j * phase)


def forward(obj: ObjectModel, geom: AcquisitionGeometry, exposure_index: int = 0) -> RealField:
    """Noise-free detector intensity for one exposure, unit illumination."""
    t = _exit_wave(obj)
    if t.shape != (geom.obj_size, geom.obj_size):
        raise DimensionError("object size does not match geometry")
    d = geom.propagation.fresnel_number
    if geom.modality == "NFH":
        if exposure_index != 0:
            raise IndexError("NFH has a single exposure")
        frame = pad_center_array(t, geom.pad_margin, fill=1.0 + 0.0j)
        out = _propagate_array(frame, d)
    elif geom.modality == "FFP":
        top, left = geom.grid.position(exposure_index)
        p = geom.grid.patch_size
        patch = t[top:top + p, left:left + p]
        from .grid import fft2c

        out = fft2c(patch * build_probe(geom.probe))
    elif geom.modality == "NFP":
        oy, ox = geom.grid.position(exposure_index)
        n = geom.obj_size
        frame = np.ones((geom.probe.array_size,) * 2, dtype=np.complex128)
        frame[oy:oy + n, ox:ox + n] = t
        frame *= build_probe(geom.probe)
        out = crop_center_array(_propagate_array(frame, d),
                                geom.detector_crop, geom.detector_crop)
    else:
        raise ValueError(f"unknown modality {geom.modality!r}")
    return RealField(np.abs(out) ** 2)


def simulate_noise_free(obj: ObjectModel, geom: AcquisitionGeometry) -> Dataset:
    frames = np.stack([forward(obj, geom, k).data for k in range(geom.num_exposures)])
    return Dataset(frames=frames, geometry=geom)


def illumination_power_factor(geom: AcquisitionGeometry, n_ph: float) -> float:
    """Intensity scale turning unit-illumination frames into n_ph photons/object-pixel."""
    if n_ph < 0:
        raise ValueError("fluence must be >= 0")
    if geom.modality == "NFH":
        return n_ph
    if geom.modality == "FFP":
        probe_power = float(np.sum(np.abs(build_probe(geom.probe)) ** 2))
        return n_ph * geom.obj_size**2 / (geom.grid.count * probe_power)
    if geom.modality == "NFP":
        return n_ph / geom.grid.count
    raise ValueError(f"unknown modality {geom.modality!r}")


def scale_to_fluence(data: Dataset, n_ph: float) -> Dataset:
    """Apply the single global fluence scalar to a unit-illumination dataset."""
    if not data.noise_free:
        raise DataError("can only rescale noise-free data")
    if data.fluence is not None:
        raise DataError("dataset is already fluence-scaled")
    factor = illumination_power_factor(data.geometry, n_ph)
    return replace(data, frames=data.frames * factor, fluence=float(n_ph))


def add_poisson_noise(data: Dataset, seed: int) -> Dataset:
    """Replace each pixel by an exact Poisson draw with the noise-free mean.

    Each frame draws from its own counter-based stream (Philox keyed by
    (seed, frame index)), so results do not depend on evaluation order.
    """
    if not data.noise_free:
        raise DataError("dataset already contains noise")
    if data.fluence is None:
        raise DataError("scale_to_fluence must run before noise injection")
    noisy = np.empty_like(data.frames)
    for k in range(data.frames.shape[0]):
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(k,))))
        noisy[k] = rng.poisson(data.frames[k]).astype(np.float64)
    return replace(data, frames=noisy, seed=int(seed), noise_free=False)


def simulate(obj: ObjectModel, geom: AcquisitionGeometry, fluence: float,
             seed: int | None = None) -> Dataset:
    """Forward-model all exposures, scale to fluence, optionally add noise."""
    ds = scale_to_fluence(simulate_noise_free(obj, geom), fluence)
    if seed is None:
        return ds
    return add_poisson_noise(ds, seed)


def photon_accounting(data: Dataset) -> list[tuple[float, float, float]]:
    """Per exposure: (detector sum, incident photons in the FOV, relative difference).

    For NFP the detector crop exchanges a small amount of energy with the
    frame border; the relative difference reports that crop flux error.
    """
    geom = data.geometry
    factor = 1.0 if data.fluence is None else illumination_power_factor(geom, data.fluence)
    rows = []
    for k in range(data.frames.shape[0]):
        det = float(data.frames[k].sum())
        if geom.modality == "NFH":
            incident = factor * (geom.obj_size + 2 * geom.pad_margin) ** 2
        elif geom.modality == "FFP":
            incident = factor * float(np.sum(np.abs(build_probe(geom.probe)) ** 2))
        else:
            incident = factor * geom.detector_crop**2
        rows.append((det, incident, (det - incident) / incident))
    return rows
