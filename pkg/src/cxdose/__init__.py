"""Dose-efficiency simulations for coherent x-ray imaging (NFH, FFP, NFP)."""

from .acquisition import (
    AcquisitionGeometry,
    Dataset,
    ProbeSpec,
    ScanGrid,
    add_poisson_noise,
    build_probe,
    ffp_geometry,
    forward,
    nfh_geometry,
    nfp_geometry,
    scale_to_fluence,
    simulate,
    simulate_noise_free,
)
from .grid import ComplexField, RealField, crop_center, extract_patch, fft2_centered, pad_center
from .metrics import (
    FrcCurve,
    MetricsReport,
    correlation_r,
    fit_feature_sigma,
    fluence_for_snr,
    frc,
    smse,
    snr_from_r,
    snr_ratio_ffp_nfh,
)
from .optics import PropagationSpec, fresnel_number, propagate, propagate_back
from .phantom import (
    ObjectModel,
    SupportMask,
    generate_phantom,
    load_object,
    make_support_mask,
    object_stats,
    save_object,
)
from .reconstruct import (
    CostKind,
    ReconstructionConfig,
    ReconstructionResult,
    cost_lsq,
    cost_poisson,
    gradient,
    reconstruct,
)
from .sweep import SweepConfig, SweepRow, grid_artifact_experiment, run_sweep

__version__ = "0.1.0"
