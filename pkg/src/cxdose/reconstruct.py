"""Gradient-based phase reconstruction with LSQ or Poisson costs.

The unknown is the per-pixel phase map of a pure-phase object.  Gradients
are computed by the analytic reverse-mode chain through each forward model:
detector residual -> inverse (adjoint) propagation -> conjugate-illumination
multiply -> window scatter -> imaginary-part projection onto the phase.
Updates use Adam, followed by support projection and a nonnegativity clamp.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as _sfft

from .acquisition import Dataset, build_probe, illumination_power_factor
from .errors import DataError, DimensionError, NumericalError
from .grid import ComplexField, RealField
from .optics import _transfer_kernel
from .phantom import ObjectModel, SupportMask

_TINY = 1e-300


class CostKind(enum.Enum):
    LSQ = "lsq"
    POISSON = "poisson"


@dataclass(frozen=True)
class ReconstructionConfig:
    cost: CostKind = CostKind.LSQ
    max_iters: int = 3000
    step_size: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_seed: int = 0
    support: SupportMask | None = None
    nonneg: bool = True
    poisson_floor: float = 1e-12  # photons; |pred| guard is its square root
    batch: str = "full"           # full | per_position
    precision: str = "double"     # double | single
    rel_tol: float = 1e-7         # relative cost change over 20-iteration window


@dataclass
class ReconstructionResult:
    object: ObjectModel
    cost_history: list
    iters_run: int
    converged: bool


# ---------------------------------------------------------------------------
# Residuals (dC_pixel / d g*, without the 1/(Np Nk) normalization)
# ---------------------------------------------------------------------------

def _lsq_terms(mag, sqrt_y):
    return (mag - sqrt_y) ** 2


def _lsq_residual(g, mag, sqrt_y):
    return g * (1.0 - sqrt_y / np.maximum(mag, 1e-12))


def _poisson_terms(mag, y, floor):
    return mag**2 - 2.0 * y * np.log(np.maximum(mag, floor))


def _poisson_residual(g, mag, y, floor):
    ratio = np.where(mag > floor, y / np.maximum(mag, floor) ** 2, 0.0)
    return g * (1.0 - ratio)


# ---------------------------------------------------------------------------
# Public cost operations (detector-layout fields, as produced by acquisition)
# ---------------------------------------------------------------------------

def _stack_magnitudes(predicted_fields, measured: Dataset) -> np.ndarray:
    mags = np.stack([np.abs(f.data) for f in predicted_fields])
    if mags.shape != measured.frames.shape:
        raise DimensionError(
            f"predicted stack {mags.shape} does not match measured {measured.frames.shape}")
    return mags


def cost_lsq(predicted_fields, measured: Dataset) -> float:
    """Mean over all detector pixels and exposures of (|pred| - sqrt(y))^2."""
    mags = _stack_magnitudes(predicted_fields, measured)
    return float(np.mean(_lsq_terms(mags, np.sqrt(measured.frames))))


def cost_poisson(predicted_fields, measured: Dataset,
                 poisson_floor: float = 1e-12) -> float:
    """Mean over pixels of |pred|^2 - 2 y log(max(|pred|, floor))."""
    mags = _stack_magnitudes(predicted_fields, measured)
    return float(np.mean(_poisson_terms(mags, measured.frames, np.sqrt(poisson_floor))))


# ---------------------------------------------------------------------------
# Per-modality cost/gradient engines
# ---------------------------------------------------------------------------

class _Engine:
    """Precomputed forward/adjoint chain for one dataset."""

    def __init__(self, data: Dataset, cfg: ReconstructionConfig):
        geom = data.geometry
        self.geom = geom
        self.cfg = cfg
        self.cdtype = np.complex64 if cfg.precision == "single" else np.complex128
        self.fdtype = np.float32 if cfg.precision == "single" else np.float64
        # fluence None means raw unit-illumination frames: scale is exactly 1
        scale = (1.0 if data.fluence is None
                 else illumination_power_factor(geom, data.fluence))
        self.s = self.fdtype(np.sqrt(scale))
        self.nk = geom.num_exposures
        h, w = geom.frame_shape()
        self.np_pixels = h * w
        self.norm = 2.0 / (self.np_pixels * self.nk)
        self.floor = np.sqrt(cfg.poisson_floor)
        self.n = geom.obj_size

        y = data.frames
        if geom.modality == "FFP":
            # Work in the non-centered FFT layout; |FFT| is shift-invariant,
            # so permuting the measured frames once matches pixel for pixel.
            y = _sfft.ifftshift(y, axes=(-2, -1))
            p = geom.grid.patch_size
            tops = np.array([geom.grid.position(k)[0] for k in range(self.nk)])
            lefts = np.array([geom.grid.position(k)[1] for k in range(self.nk)])
            ar = np.arange(p)
            rows = (tops[:, None] + ar)[:, :, None]          # (nk, p, 1)
            cols = (lefts[:, None] + ar)[:, None, :]         # (nk, 1, p)
            self.flat_idx = (rows * self.n + cols).astype(np.int64)
            self.probe = build_probe(geom.probe).astype(self.cdtype)
        elif geom.modality == "NFP":
            self.illum = (build_probe(geom.probe) * self.s).astype(self.cdtype)
            self.kernel = _transfer_kernel(*self.illum.shape,
                                           geom.propagation.fresnel_number).astype(self.cdtype)
            self.offsets = [geom.grid.position(k) for k in range(self.nk)]
            f = geom.probe.array_size
            self.crop0 = (f - geom.detector_crop) // 2
        elif geom.modality == "NFH":
            fsz = geom.obj_size + 2 * geom.pad_margin
            self.kernel = _transfer_kernel(fsz, fsz,
                                           geom.propagation.fresnel_number).astype(self.cdtype)
        else:
            raise ValueError(f"unknown modality {geom.modality!r}")
        self.y = y.astype(self.fdtype)
        self.sqrt_y = np.sqrt(self.y)

    def _residual(self, g, mag, k_sel):
        if self.cfg.cost is CostKind.LSQ:
            cost_terms = _lsq_terms(mag, self.sqrt_y[k_sel])
            r = _lsq_residual(g, mag, self.sqrt_y[k_sel])
        else:
            cost_terms = _poisson_terms(mag, self.y[k_sel], self.floor)
            r = _poisson_residual(g, mag, self.y[k_sel], self.floor)
        cost = float(np.sum(cost_terms, dtype=np.float64))
        return cost, r

    def cost_and_grad(self, phi: np.ndarray, k_subset=None):
        """Cost and dC/dphi, both including the 1/(Np Nk) normalization."""
        t = np.exp(1j * phi).astype(self.cdtype)
        geom = self.geom
        k_sel = slice(None) if k_subset is None else np.asarray(k_subset)
        nk_used = self.nk if k_subset is None else len(k_subset)
        norm = 1.0 / (self.np_pixels * nk_used)

        if geom.modality == "NFH":
            fsz = self.n + 2 * geom.pad_margin
            frame = np.ones((fsz, fsz), dtype=self.cdtype)
            m = geom.pad_margin
            frame[m:m + self.n, m:m + self.n] = t
            frame *= self.s
            g = _sfft.ifft2(_sfft.fft2(frame, norm="ortho") * self.kernel, norm="ortho")
            mag = np.abs(g)
            cost, r = self._residual(g, mag, 0)
            w = _sfft.fft2(_sfft.ifft2(r, norm="ortho") * np.conj(self.kernel), norm="ortho")
            acc = w[m:m + self.n, m:m + self.n] * self.s
        elif geom.modality == "FFP":
            idx = self.flat_idx[k_sel]
            patches = t.ravel()[idx]
            g = _sfft.fft2(patches * self.probe * self.s, norm="ortho", workers=1)
            mag = np.abs(g)
            cost, r = self._residual(g, mag, k_sel)
            u = _sfft.ifft2(r, norm="ortho", workers=1)
            u *= np.conj(self.probe) * self.s
            flat = idx.ravel()
            acc = (np.bincount(flat, weights=u.real.ravel(), minlength=self.n**2)
                   + 1j * np.bincount(flat, weights=u.imag.ravel(), minlength=self.n**2))
            acc = acc.reshape(self.n, self.n)
        else:  # NFP
            offs = self.offsets if k_subset is None else [self.offsets[k] for k in k_subset]
            fsz = self.illum.shape[0]
            frames = np.broadcast_to(self.illum, (len(offs), fsz, fsz)).copy()
            for i, (oy, ox) in enumerate(offs):
                frames[i, oy:oy + self.n, ox:ox + self.n] *= t
            g_full = _sfft.ifft2(_sfft.fft2(frames, norm="ortho") * self.kernel, norm="ortho")
            c0, cn = self.crop0, geom.detector_crop
            g = g_full[:, c0:c0 + cn, c0:c0 + cn]
            mag = np.abs(g)
            cost, r = self._residual(g, mag, k_sel)
            r_full = np.zeros_like(g_full)
            r_full[:, c0:c0 + cn, c0:c0 + cn] = r
            w = _sfft.fft2(_sfft.ifft2(r_full, norm="ortho") * np.conj(self.kernel),
                           norm="ortho")
            w *= np.conj(self.illum)
            acc = np.zeros((self.n, self.n), dtype=self.cdtype)
            for i, (oy, ox) in enumerate(offs):
                acc += w[i, oy:oy + self.n, ox:ox + self.n]

        grad = 2.0 * norm * np.imag(np.conj(t) * acc)
        return cost * norm, grad.astype(np.float64)


def gradient(obj: ObjectModel, data: Dataset, cost: CostKind) -> RealField:
    """Exact dC/dphase at the given object (matches central finite differences)."""
    engine = _Engine(data, ReconstructionConfig(cost=cost))
    _, grad = engine.cost_and_grad(obj.phase.data.astype(np.float64))
    return RealField(grad)


def predict_fields(obj: ObjectModel, data: Dataset) -> list[ComplexField]:
    """Detector-plane complex fields of the forward model at the dataset's fluence."""
    from .acquisition import forward

    s = (1.0 if data.fluence is None
         else np.sqrt(illumination_power_factor(data.geometry, data.fluence)))
    fields = []
    for k in range(data.geometry.num_exposures):
        inten = forward(obj, data.geometry, k).data
        # forward returns unit-illumination intensity; recover modulus via scaling
        fields.append(ComplexField(np.sqrt(inten) * s + 0.0j))
    return fields


def reconstruct(data: Dataset, cfg: ReconstructionConfig) -> ReconstructionResult:
    """Adam minimization of the configured cost over the per-pixel phase map."""
    geom = data.geometry
    support = cfg.support
    if geom.modality == "NFH":
        if support is None:
            raise DataError("NFH reconstruction requires a support mask")
        if support.mask.shape != (geom.obj_size, geom.obj_size):
            raise DimensionError("support mask shape does not match object")
    elif support is not None:
        warnings.warn(f"{geom.modality} does not use a support constraint; ignoring it")
        support = None

    engine = _Engine(data, cfg)
    rng = np.random.default_rng(cfg.init_seed)
    phi = np.clip(rng.normal(0.0, 0.1, (geom.obj_size, geom.obj_size)), 0.0, None)

    m = np.zeros_like(phi)
    v = np.zeros_like(phi)
    history: list[tuple[int, float]] = []
    converged = False
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2

    if cfg.batch == "per_position":
        batches = [[k] for k in range(geom.num_exposures)]
    elif cfg.batch == "full":
        batches = [None]
    else:
        raise ValueError(f"unknown batch strategy {cfg.batch!r}")

    it = 0
    for it in range(1, cfg.max_iters + 1):
        cost, grad = engine.cost_and_grad(phi, batches[(it - 1) % len(batches)])
        if not np.isfinite(cost):
            raise NumericalError(f"cost diverged at iteration {it}")
        history.append((it, cost))

        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        m_hat = m / (1 - b1**it)
        v_hat = v / (1 - b2**it)
        phi = phi - cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)

        if support is not None:
            phi = np.where(support.mask, phi, 0.0)
        if cfg.nonneg:
            phi = np.maximum(phi, 0.0)

        if it > 20:
            prev = history[-21][1]
            if abs(cost - prev) < cfg.rel_tol * max(abs(prev), 1e-30):
                converged = True
                break

    result_obj = ObjectModel(phase=RealField(phi.astype(np.float64)),
                             pixel_pitch=None)
    return ReconstructionResult(object=result_obj, cost_history=history,
                                iters_run=it, converged=converged)
