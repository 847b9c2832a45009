"""On-disk container format: JSON manifest + raw little-endian IEEE-754 blobs.

A container is a pair of files: `<name>.json` (manifest: array table, kind,
metadata) and `<name>.bin` (concatenated raw arrays, little-endian, 32-bit
floats for real data and 32-bit float pairs for complex).  Round trips are
bit-exact.  Also provides PGM quick-look export with the scaling recorded
in the image comment.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionGeometry, Dataset, ProbeSpec, ScanGrid
from .errors import DataError
from .grid import RealField
from .optics import PropagationSpec
from .phantom import ObjectModel, SupportMask

FORMAT_NAME = "cxdose-container"
FORMAT_VERSION = 1

_DTYPES = {"f4": "<f4", "c8": "<c8", "u1": "u1"}


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix != ".json":
        p = p.with_suffix(p.suffix + ".json") if p.suffix else p.with_suffix(".json")
    return p, p.with_suffix(".bin")


def _write(path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> Path:
    manifest_path, blob_path = _paths(path)
    table = []
    offset = 0
    blob = bytearray()
    for name, arr in arrays.items():
        if arr.dtype == np.bool_:
            tag = "u1"
            raw = arr.astype("u1")
        elif np.iscomplexobj(arr):
            tag = "c8"
            raw = arr.astype("<c8")
        else:
            tag = "f4"
            raw = arr.astype("<f4")
        data = raw.tobytes(order="C")
        table.append({"name": name, "shape": list(arr.shape), "dtype": tag,
                      "offset": offset, "nbytes": len(data)})
        blob.extend(data)
        offset += len(data)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": kind,
        "endianness": "little",
        "blob": blob_path.name,
        "arrays": table,
        "meta": meta,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    blob_path.write_bytes(bytes(blob))
    return manifest_path


def _read(path) -> tuple[dict, dict[str, np.ndarray]]:
    manifest_path, blob_path = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse container manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != FORMAT_NAME:
        raise DataError(f"{manifest_path} is not a {FORMAT_NAME} file")
    blob_path = manifest_path.parent / manifest["blob"]
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read blob {blob_path}: {exc}") from exc
    arrays = {}
    for entry in manifest["arrays"]:
        dtype = _DTYPES[entry["dtype"]]
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(bool) if entry["dtype"] == "u1" else arr.copy()
    return manifest, arrays


# ---------------------------------------------------------------------------
# Objects and masks
# ---------------------------------------------------------------------------

def save_object(obj: ObjectModel, path, extra_meta: dict | None = None) -> Path:
    arrays = {"phase": obj.phase.data}
    if obj.absorption is not None:
        arrays["absorption"] = obj.absorption.data
    meta = {"pixel_pitch": obj.pixel_pitch}
    meta.update(extra_meta or {})
    return _write(path, "object", arrays, meta)


def load_object(path) -> ObjectModel:
    manifest, arrays = _read(path)
    if manifest["kind"] not in ("object", "result"):
        raise DataError(f"expected an object container, got kind={manifest['kind']!r}")
    if "phase" not in arrays:
        raise DataError("object container has no phase array")
    absorption = arrays.get("absorption")
    return ObjectModel(
        phase=RealField(arrays["phase"]),
        absorption=RealField(absorption) if absorption is not None else None,
        pixel_pitch=manifest["meta"].get("pixel_pitch"),
    )


def save_mask(mask: SupportMask, path) -> Path:
    return _write(path, "mask", {"mask": mask.mask}, {"looseness": mask.looseness})


def load_mask(path) -> SupportMask:
    manifest, arrays = _read(path)
    if manifest["kind"] != "mask":
        raise DataError(f"expected a mask container, got kind={manifest['kind']!r}")
    return SupportMask(mask=arrays["mask"], looseness=manifest["meta"].get("looseness", 0))


# ---------------------------------------------------------------------------
# Geometry and datasets
# ---------------------------------------------------------------------------

def geometry_to_dict(geom: AcquisitionGeometry) -> dict:
    d = {
        "modality": geom.modality,
        "fresnel_number": geom.propagation.fresnel_number,
        "probe": asdict(geom.probe),
        "obj_size": geom.obj_size,
        "pad_margin": geom.pad_margin,
        "detector_crop": geom.detector_crop,
        "grid": None,
    }
    if geom.grid is not None:
        d["grid"] = {
            "rows": geom.grid.rows,
            "cols": geom.grid.cols,
            "patch_size": geom.grid.patch_size,
            "row_offsets": list(geom.grid.row_offsets),
            "col_offsets": list(geom.grid.col_offsets),
        }
    return d


def geometry_from_dict(d: dict) -> AcquisitionGeometry:
    grid = None
    if d.get("grid"):
        g = d["grid"]
        grid = ScanGrid(rows=g["rows"], cols=g["cols"], patch_size=g["patch_size"],
                        row_offsets=tuple(g["row_offsets"]),
                        col_offsets=tuple(g["col_offsets"]))
    fresnel = d["fresnel_number"]
    return AcquisitionGeometry(
        modality=d["modality"],
        propagation=PropagationSpec(float(fresnel)),
        probe=ProbeSpec(**d["probe"]),
        obj_size=d["obj_size"],
        grid=grid,
        pad_margin=d.get("pad_margin", 0),
        detector_crop=d.get("detector_crop"),
    )


def save_dataset(data: Dataset, path) -> Path:
    meta = {
        "geometry": geometry_to_dict(data.geometry),
        "fluence": data.fluence,
        "seed": data.seed,
        "noise_free": data.noise_free,
    }
    return _write(path, "dataset", {"frames": data.frames}, meta)


def load_dataset(path) -> Dataset:
    manifest, arrays = _read(path)
    if manifest["kind"] != "dataset":
        raise DataError(f"expected a dataset container, got kind={manifest['kind']!r}")
    meta = manifest["meta"]
    return Dataset(
        frames=arrays["frames"].astype(np.float64),
        geometry=geometry_from_dict(meta["geometry"]),
        fluence=meta.get("fluence"),
        seed=meta.get("seed"),
        noise_free=bool(meta.get("noise_free", True)),
    )


def save_result(obj: ObjectModel, path, iters_run: int, converged: bool) -> Path:
    return _write(path, "result", {"phase": obj.phase.data},
                  {"pixel_pitch": obj.pixel_pitch, "iters_run": iters_run,
                   "converged": converged})


# ---------------------------------------------------------------------------
# PGM quick-look export
# ---------------------------------------------------------------------------

def write_pgm(path, array: np.ndarray, vmin: float | None = None,
              vmax: float | None = None, bits: int = 16) -> Path:
    """Linear grayscale PGM; the scaling window is recorded in a comment."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    arr = np.asarray(array, dtype=np.float64)
    lo = float(arr.min()) if vmin is None else float(vmin)
    hi = float(arr.max()) if vmax is None else float(vmax)
    maxval = (1 << bits) - 1
    if hi > lo:
        scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0) * maxval
    else:
        scaled = np.zeros_like(arr)
    pix = scaled.round().astype(">u2" if bits == 16 else "u1")
    header = (f"P5\n# scale min={lo!r} max={hi!r}\n"
              f"{arr.shape[1]} {arr.shape[0]}\n{maxval}\n")
    p = Path(path)
    p.write_bytes(header.encode("ascii") + pix.tobytes())
    return p
