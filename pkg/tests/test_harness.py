import csv
import json
import math

import numpy as np
import pytest

from cxdose import cli, containers, sweep
from cxdose.acquisition import ffp_geometry, nfh_geometry, nfp_geometry, simulate
from cxdose.errors import DataError, NumericalError
from cxdose.phantom import generate_phantom, make_support_mask
from cxdose.reconstruct import CostKind


@pytest.fixture(scope="module")
def small_obj():
    return generate_phantom(seed=2, size=64)


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

def test_mask_round_trip(tmp_path, small_obj):
    mask = make_support_mask(small_obj, 4)
    containers.save_mask(mask, tmp_path / "mask.json")
    loaded = containers.load_mask(tmp_path / "mask.json")
    assert np.array_equal(loaded.mask, mask.mask)
    assert loaded.looseness == 4


def test_dataset_round_trip(tmp_path, small_obj):
    for geom in (nfh_geometry(64), nfp_geometry(64)):
        ds = simulate(small_obj, geom, 25.0, seed=3)
        containers.save_dataset(ds, tmp_path / "ds.json")
        loaded = containers.load_dataset(tmp_path / "ds.json")
        # frames are Poisson counts, exactly representable in float32
        assert np.array_equal(loaded.frames, ds.frames)
        assert loaded.geometry == ds.geometry
        assert loaded.fluence == 25.0 and loaded.seed == 3 and not loaded.noise_free


def test_geometry_dict_round_trip():
    for geom in (nfh_geometry(128), ffp_geometry(512), nfp_geometry(256)):
        assert containers.geometry_from_dict(containers.geometry_to_dict(geom)) == geom


def test_kind_checks(tmp_path, small_obj):
    containers.save_object(small_obj, tmp_path / "obj.json")
    with pytest.raises(DataError):
        containers.load_mask(tmp_path / "obj.json")
    with pytest.raises(DataError):
        containers.load_dataset(tmp_path / "obj.json")


def test_missing_and_corrupt_files(tmp_path):
    with pytest.raises(DataError):
        containers.load_object(tmp_path / "nothing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DataError):
        containers.load_object(bad)
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(DataError):
        containers.load_object(other)


def test_result_container(tmp_path, small_obj):
    containers.save_result(small_obj, tmp_path / "res.json", iters_run=7, converged=True)
    loaded = containers.load_object(tmp_path / "res.json")
    assert np.array_equal(loaded.phase.data, small_obj.phase.data)
    manifest = json.loads((tmp_path / "res.json").read_text())
    assert manifest["meta"]["iters_run"] == 7
    assert manifest["meta"]["converged"] is True


# ---------------------------------------------------------------------------
# PGM export
# ---------------------------------------------------------------------------

def test_pgm_8bit_values(tmp_path):
    arr = np.array([[0.0, 1.0], [2.0, 3.0]])
    p = containers.write_pgm(tmp_path / "img.pgm", arr, bits=8)
    raw = p.read_bytes()
    header, pixels = raw.rsplit(b"\n255\n", 1)
    assert header.startswith(b"P5\n")
    assert b"scale min=0.0 max=3.0" in header
    assert b"2 2" in header
    assert list(pixels) == [0, 85, 170, 255]


def test_pgm_16bit_window(tmp_path):
    arr = np.array([[-1.0, 0.0], [0.5, 2.0]])
    p = containers.write_pgm(tmp_path / "img.pgm", arr, vmin=0.0, vmax=1.0, bits=16)
    raw = p.read_bytes()
    pixels = np.frombuffer(raw.rsplit(b"\n65535\n", 1)[1], dtype=">u2")
    assert list(pixels) == [0, 0, 32768, 65535]  # clipped to the window


def test_pgm_constant_image(tmp_path):
    p = containers.write_pgm(tmp_path / "flat.pgm", np.full((3, 3), 7.0))
    pixels = np.frombuffer(p.read_bytes().rsplit(b"\n65535\n", 1)[1], dtype=">u2")
    assert np.all(pixels == 0)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

def _tiny_cfg(**kw):
    defaults = dict(modalities=("NFH",), fluences=(8.0, 35.0), obj_size=64,
                    phantom_seed=2, looseness=3, max_iters=25)
    defaults.update(kw)
    return sweep.SweepConfig(**defaults)


def test_sweep_rows_and_determinism(small_obj):
    cfg = _tiny_cfg()
    rows_a = sweep.run_sweep(cfg, small_obj)
    rows_b = sweep.run_sweep(cfg, small_obj)
    assert [r.modality for r in rows_a] == ["NFH", "NFH"]
    assert [r.fluence for r in rows_a] == [8.0, 35.0]
    for a, b in zip(rows_a, rows_b):
        for col in sweep.CSV_COLUMNS:
            if col == "wall_time_s":
                continue
            va, vb = getattr(a, col), getattr(b, col)
            assert va == vb or (isinstance(va, float)
                                and math.isnan(va) and math.isnan(vb))


def test_sweep_csv_format(tmp_path, small_obj):
    rows = sweep.run_sweep(_tiny_cfg(fluences=(8.0,)), small_obj)
    out = tmp_path / "sweep.csv"
    sweep.write_sweep_csv(rows, out)
    with open(out, newline="") as fh:
        table = list(csv.reader(fh))
    assert table[0] == sweep.CSV_COLUMNS
    assert len(table) == 2
    row = dict(zip(table[0], table[1]))
    assert row["modality"] == "NFH" and row["cost"] == "lsq"
    assert float(row["fluence"]) == 8.0
    assert float(row["snr"]) >= 0.0
    assert row["error"] == ""


def test_sweep_nfp_uses_fluence_subset(small_obj):
    cfg = _tiny_cfg(modalities=("NFP",), fluences=(8.0, 35.0, 200.0, 1000.0),
                    max_iters=10)
    rows = sweep.run_sweep(cfg, small_obj)
    assert [r.fluence for r in rows] == [8.0, 200.0]


def test_sweep_cell_records_errors(small_obj):
    from cxdose import acquisition

    cfg = _tiny_cfg()
    support = make_support_mask(small_obj, 3)
    scaled = acquisition.scale_to_fluence(
        acquisition.simulate_noise_free(small_obj, nfh_geometry(64)), 8.0)
    # feeding already-scaled data is a data error the cell must trap
    row = sweep.run_cell(cfg, small_obj, support, scaled, "NFH", CostKind.LSQ,
                         8.0, (0, 0, 0), (32, 32))
    assert row.error.startswith("DataError")
    assert math.isnan(row.snr)


def test_sweep_requires_two_instances():
    with pytest.raises(ValueError):
        _tiny_cfg(noise_instances=1)


def test_sweep_threaded_matches_serial(small_obj):
    cfg = _tiny_cfg(max_iters=10)
    serial = sweep.run_sweep(cfg, small_obj)
    threaded = sweep.run_sweep(_tiny_cfg(max_iters=10, threads=2), small_obj)
    for a, b in zip(serial, threaded):
        assert a.snr == b.snr and a.smse == b.smse


def test_grid_artifact_experiment_smoke():
    obj = generate_phantom(seed=2, size=128)
    out = sweep.grid_artifact_experiment(obj, fluence=20.0, max_iters=40)
    assert out["fine"]["positions"] > out["coarse"]["positions"]
    # halving the positions per axis concentrates ~4x photons per exposure
    assert out["per_exposure_ratio"] == pytest.approx(4.0, rel=0.25)
    assert out["fine"]["smse"] >= 0.0 and out["coarse"]["smse"] >= 0.0


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    d = str(tmp_path)
    assert cli.main(["phantom", "--size", "64", "--seed", "2", "--out-dir", d]) == 0
    assert (tmp_path / "phantom.json").exists()
    assert (tmp_path / "phantom.bin").exists()
    assert (tmp_path / "phantom.pgm").exists()

    assert cli.main(["simulate", "--modality", "nfh", "--object",
                     str(tmp_path / "phantom.json"), "--fluence", "50",
                     "--seed", "1", "--out-dir", d]) == 0
    assert (tmp_path / "dataset.json").exists()

    assert cli.main(["reconstruct", "--data", str(tmp_path / "dataset.json"),
                     "--support", str(tmp_path / "phantom.json"),
                     "--looseness", "3", "--nonneg", "--max-iters", "20",
                     "--out-dir", d]) == 0
    assert (tmp_path / "recon.json").exists()
    assert (tmp_path / "recon.cost.csv").exists()

    assert cli.main(["metrics", "--truth", str(tmp_path / "phantom.json"),
                     "--recon", str(tmp_path / "recon.json"),
                     "--looseness", "3", "--out-dir", d]) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert "smse" in report and "frc_crossing_truth" in report
    capsys.readouterr()


def test_cli_sweep(tmp_path, capsys):
    assert cli.main(["sweep", "--modalities", "nfh", "--fluences", "8",
                     "--size", "64", "--phantom-seed", "2", "--looseness", "3",
                     "--max-iters", "10", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "sweep.csv").exists()
    capsys.readouterr()


def test_cli_usage_errors():
    with pytest.raises(SystemExit) as exc:
        cli.main(["phantom", "--size", "0"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate"])  # missing required arguments
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["no-such-command"])
    assert exc.value.code == 2


def test_cli_data_error_exit_code(tmp_path, capsys):
    code = cli.main(["metrics", "--truth", str(tmp_path / "missing.json"),
                     "--recon", str(tmp_path / "missing.json"),
                     "--out-dir", str(tmp_path)])
    assert code == 3
    assert "error" in capsys.readouterr().err


def test_cli_numerical_error_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise NumericalError("synthetic failure")

    monkeypatch.setattr(cli.phantom, "generate_phantom", boom)
    code = cli.main(["phantom", "--size", "64", "--out-dir", str(tmp_path)])
    assert code == 4
    assert "numerical failure" in capsys.readouterr().err
