"""Fluence sweep driver: paired noise instances, reconstructions, metrics table.

Each sweep cell (modality, cost, fluence) simulates two independent noise
instances, reconstructs each, and scores the pair (correlation SNR, paired
FRC) plus truth-referenced metrics (SMSE, ground-truth FRC, feature width).
Cell RNG streams derive from (base seed, cell id, instance id), so the CSV
is byte-identical across repeated runs (wall_time column aside).
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import acquisition, metrics, phantom
from .acquisition import AcquisitionGeometry
from .errors import CxdoseError
from .phantom import ObjectModel, SupportMask
from .reconstruct import CostKind, ReconstructionConfig, reconstruct

DEFAULT_FLUENCES = (0.8, 2.0, 8.0, 35.0, 200.0, 350.0, 1000.0, 20000.0)


@dataclass(frozen=True)
class SweepConfig:
    modalities: tuple = ("NFH", "FFP", "NFP")
    fluences: tuple = DEFAULT_FLUENCES
    costs: tuple = (CostKind.LSQ,)
    noise_instances: int = 2
    base_seed: int = 0
    obj_size: int = 512
    phantom_seed: int = 1
    mean_phase: float = 0.643
    support_fraction: float = 0.194
    looseness: int = 9
    fresnel_number: float = 1e-3
    nfp_fluences: tuple | None = None  # default: every 2nd fluence (NFP subset)
    max_iters: int = 3000
    step_size: float = 5e-3
    precision: str = "single"
    threads: int = 1

    def __post_init__(self):
        if self.noise_instances < 2:
            raise ValueError("paired metrics need at least 2 noise instances")


@dataclass
class SweepRow:
    modality: str
    cost: str
    fluence: float
    pair: str
    snr: float = math.nan
    r: float = math.nan
    smse: float = math.nan
    frc_crossing: float = math.nan
    frc_crossing_truth: float = math.nan
    feature_sigma: float = math.nan
    iters: int = 0
    wall_time_s: float = 0.0
    error: str = ""


CSV_COLUMNS = ["modality", "cost", "fluence", "pair", "snr", "r", "smse",
               "frc_crossing", "frc_crossing_truth", "feature_sigma", "iters",
               "wall_time_s", "error"]


def make_geometry(cfg: SweepConfig, modality: str) -> AcquisitionGeometry:
    if modality == "NFH":
        return acquisition.nfh_geometry(cfg.obj_size, d=cfg.fresnel_number)
    if modality == "FFP":
        return acquisition.ffp_geometry(cfg.obj_size)
    if modality == "NFP":
        return acquisition.nfp_geometry(cfg.obj_size, d=cfg.fresnel_number)
    raise ValueError(f"unknown modality {modality!r}")


def _cell_seed(base: int, key: tuple, n: int = 1):
    ss = np.random.SeedSequence(entropy=base, spawn_key=key)
    state = ss.generate_state(n)
    return [int(s) for s in state]


def _recon_config(cfg: SweepConfig, modality: str, cost: CostKind,
                  support: SupportMask, init_seed: int) -> ReconstructionConfig:
    nfh = modality == "NFH"
    return ReconstructionConfig(
        cost=cost,
        max_iters=cfg.max_iters,
        step_size=cfg.step_size,
        init_seed=init_seed,
        support=support if nfh else None,
        nonneg=nfh,
        precision=cfg.precision,
    )


def _masked(img, region: SupportMask):
    m = region.mask
    return type(img)((img.data - img.data[m].mean()) * m)


def run_cell(cfg: SweepConfig, obj: ObjectModel, support: SupportMask,
             noise_free: acquisition.Dataset, modality: str, cost: CostKind,
             fluence: float, cell_key: tuple,
             feature_center: tuple[int, int]) -> SweepRow:
    row = SweepRow(modality=modality, cost=cost.value, fluence=fluence, pair="0-1")
    t0 = time.perf_counter()
    try:
        scaled = acquisition.scale_to_fluence(noise_free, fluence)
        recons = []
        iters = 0
        # Both noise instances share one initialization, so the pair differs
        # only in its noise realization and the correlation SNR measures
        # photon-noise reproducibility, not optimizer path variance (smooth
        # phase modes are weakly constrained and init-sensitive for FFP).
        init_seed = _cell_seed(cfg.base_seed, cell_key)[0]
        for inst in range(2):
            noise_seed = _cell_seed(cfg.base_seed, cell_key + (inst,))[0]
            noisy = acquisition.add_poisson_noise(scaled, noise_seed)
            rcfg = _recon_config(cfg, modality, cost, support, init_seed)
            res = reconstruct(noisy, rcfg)
            recons.append(res.object)
            iters = max(iters, res.iters_run)
        row.iters = iters

        # Correlation SNR is scored over the loose mask, which includes the
        # support boundary and hence the full phase contrast; SMSE over the
        # true support only, since the signal-free margin converges slowly
        # for FFP and would dilute the within-support error.  FRC images are
        # mean-subtracted and masked so pixels outside the mask (which the
        # ptychographic modalities never observe) do not decorrelate rings.
        true_sup = SupportMask(mask=obj.support(), looseness=0)
        p0, p1 = recons[0].phase, recons[1].phase
        row.r = metrics.correlation_r(p0, p1, support)
        row.snr = metrics.snr_from_r(row.r)
        row.smse = metrics.smse(obj, recons[0], true_sup,
                                align_offset=(modality != "NFH"))
        pm0 = _masked(p0, support)
        pm1 = _masked(p1, support)
        tm = _masked(obj.phase, support)
        row.frc_crossing = metrics.frc(pm0, pm1).crossing_fraction_of_nyquist
        row.frc_crossing_truth = metrics.frc(
            tm, pm0).crossing_fraction_of_nyquist
        try:
            row.feature_sigma = metrics.fit_feature_sigma(p0, feature_center).sigma
        except CxdoseError:
            row.feature_sigma = math.nan
    except CxdoseError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    row.wall_time_s = time.perf_counter() - t0
    return row


def run_sweep(cfg: SweepConfig, obj: ObjectModel | None = None) -> list[SweepRow]:
    if obj is None:
        obj = phantom.generate_phantom(cfg.phantom_seed, cfg.obj_size,
                                       cfg.mean_phase, cfg.support_fraction)
    support = phantom.make_support_mask(obj, cfg.looseness)
    feature_center = phantom.find_bright_feature(obj)

    nfp_fluences = cfg.nfp_fluences
    if nfp_fluences is None:
        nfp_fluences = cfg.fluences[::2]

    noise_free = {m: acquisition.simulate_noise_free(obj, make_geometry(cfg, m))
                  for m in cfg.modalities}

    cells = []
    for mi, modality in enumerate(cfg.modalities):
        fluences = nfp_fluences if modality == "NFP" else cfg.fluences
        for ci, cost in enumerate(cfg.costs):
            for fi, fluence in enumerate(fluences):
                cells.append((modality, cost, float(fluence), (mi, ci, fi)))

    def run_one(cell):
        modality, cost, fluence, key = cell
        return run_cell(cfg, obj, support, noise_free[modality], modality,
                        cost, fluence, key, feature_center)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(run_one, cells))
    else:
        rows = [run_one(c) for c in cells]
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, col)) for col in CSV_COLUMNS])


# ---------------------------------------------------------------------------
# Supplementary experiment: coarse vs fine FFP scan grid at equal fluence
# ---------------------------------------------------------------------------

def grid_artifact_experiment(obj: ObjectModel, fluence: float = 20.0,
                             base_seed: int = 0, max_iters: int = 1500,
                             step_size: float = 5e-3,
                             precision: str = "single") -> dict:
    """Fine grid vs doubled probe spacing over the same area, equal fluence.

    With the same photons per object pixel, each coarse-grid exposure carries
    roughly 4x the photons of a fine-grid exposure (half the positions per
    axis).  Returns per-grid per-exposure photon budgets and LSQ SMSEs.
    """
    size = obj.size
    fine = acquisition.ffp_geometry(size)
    span_r = (fine.grid.rows - 1) * 5
    span_c = (fine.grid.cols - 1) * 5
    origin = (fine.grid.row_offsets[0], fine.grid.col_offsets[0])
    coarse = replace(
        fine,
        grid=acquisition.ScanGrid.regular(span_r // 10 + 1, span_c // 10 + 1, 10,
                                          origin, fine.grid.patch_size),
    )
    region = SupportMask(mask=obj.support(), looseness=0)

    out = {}
    for grid_id, (name, geom) in enumerate((("fine", fine), ("coarse", coarse))):
        ds = acquisition.simulate(obj, geom, fluence,
                                  seed=_cell_seed(base_seed, (100 + grid_id,))[0])
        cfg = ReconstructionConfig(cost=CostKind.LSQ, max_iters=max_iters,
                                   step_size=step_size, nonneg=False,
                                   precision=precision)
        res = reconstruct(ds, cfg)
        per_exposure = (acquisition.illumination_power_factor(geom, fluence)
                        * float(np.sum(np.abs(acquisition.build_probe(geom.probe)) ** 2)))
        out[name] = {
            "positions": geom.grid.count,
            "photons_per_exposure": per_exposure,
            "smse": metrics.smse(obj, res.object, region, align_offset=True),
            "recon": res.object,
        }
    out["per_exposure_ratio"] = (out["coarse"]["photons_per_exposure"]
                                 / out["fine"]["photons_per_exposure"])
    return out
