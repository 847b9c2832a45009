"""Command-line interface: phantom, simulate, reconstruct, metrics, sweep.

Exit codes: 0 ok, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path


from . import acquisition, containers, metrics, phantom, sweep
from .errors import CxdoseError, DataError, NumericalError
from .reconstruct import CostKind, ReconstructionConfig, reconstruct


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _out_path(args, name: str) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def _cost_kind(text: str) -> CostKind:
    return CostKind(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_phantom(args) -> int:
    obj = phantom.generate_phantom(args.seed, args.size, args.mean_phase,
                                   args.support_fraction)
    out = _out_path(args, args.out)
    containers.save_object(obj, out)
    containers.write_pgm(out.with_suffix(".pgm"), obj.phase.data, vmin=0.0, vmax=1.0)
    mean, sigma, fraction = phantom.object_stats(obj)
    print(f"phantom: size={args.size} mean_phase={mean:.4f} sigma_phase={sigma:.4f} "
          f"support_fraction={fraction:.4f}")
    print(f"wrote {out} (+ .bin, .pgm)")
    return 0


def cmd_simulate(args) -> int:
    obj = phantom.load_object(args.object)
    size = obj.size
    if args.modality == "nfh":
        geom = acquisition.nfh_geometry(size, d=args.fresnel_number,
                                        pad_margin=args.pad_margin)
    elif args.modality == "ffp":
        geom = acquisition.ffp_geometry(size, rows=args.grid_rows, cols=args.grid_cols,
                                        step=args.grid_step, patch_size=args.patch_size)
    else:
        geom = acquisition.nfp_geometry(size, d=args.fresnel_number,
                                        probe_seed=args.probe_seed)
    ds = acquisition.simulate(obj, geom, args.fluence,
                              seed=None if args.noise_free else args.seed)
    out = _out_path(args, args.out)
    containers.save_dataset(ds, out)
    containers.write_pgm(out.with_suffix(".pgm"), ds.frames[0])
    print(f"simulated {geom.modality}: {ds.frames.shape[0]} frame(s) of "
          f"{ds.frames.shape[1]}x{ds.frames.shape[2]}, fluence={args.fluence}")
    print(f"wrote {out} (+ .bin, .pgm)")
    return 0


def cmd_reconstruct(args) -> int:
    ds = containers.load_dataset(args.data)
    support = None
    if args.support:
        manifest, _ = containers._read(args.support)
        if manifest["kind"] == "mask":
            support = containers.load_mask(args.support)
        else:
            truth = phantom.load_object(args.support)
            support = phantom.make_support_mask(truth, args.looseness)
    if ds.geometry.modality == "NFH" and support is None:
        raise DataError("NFH reconstruction requires --support (mask or object container)")

    cfg = ReconstructionConfig(
        cost=args.cost, max_iters=args.max_iters, step_size=args.step_size,
        init_seed=args.init_seed, support=support, nonneg=args.nonneg,
        precision=args.precision,
    )
    res = reconstruct(ds, cfg)
    out = _out_path(args, args.out)
    containers.save_result(res.object, out, res.iters_run, res.converged)
    containers.write_pgm(out.with_suffix(".pgm"), res.object.phase.data,
                         vmin=0.0, vmax=1.0)
    with open(out.with_suffix(".cost.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "cost"])
        writer.writerows(res.cost_history)
    print(f"reconstructed {ds.geometry.modality} ({args.cost.value}): "
          f"{res.iters_run} iters, final cost {res.cost_history[-1][1]:.6g}, "
          f"converged={res.converged}")
    print(f"wrote {out} (+ .bin, .pgm, .cost.csv)")
    return 0


def cmd_metrics(args) -> int:
    truth = phantom.load_object(args.truth)
    recon_a = containers.load_object(args.recon[0])
    support = phantom.make_support_mask(truth, args.looseness)
    align = not args.no_align_offset

    report = {"smse": metrics.smse(truth, recon_a, support, align_offset=align)}
    if len(args.recon) > 1:
        recon_b = containers.load_object(args.recon[1])
        r = metrics.correlation_r(recon_a.phase, recon_b.phase, support)
        curve = metrics.frc(recon_a.phase, recon_b.phase)
        report.update(r=r, snr=metrics.snr_from_r(r),
                      frc_crossing=curve.crossing_fraction_of_nyquist)
    truth_curve = metrics.frc(truth.phase, recon_a.phase)
    report["frc_crossing_truth"] = truth_curve.crossing_fraction_of_nyquist
    try:
        center = phantom.find_bright_feature(truth)
        report["feature_sigma"] = metrics.fit_feature_sigma(recon_a.phase, center).sigma
    except CxdoseError:
        report["feature_sigma"] = None

    out = _out_path(args, args.out)
    out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(json.dumps(report, indent=1, sort_keys=True))
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = sweep.SweepConfig(
        modalities=tuple(m.upper() for m in args.modalities),
        fluences=tuple(args.fluences),
        costs=tuple(_cost_kind(c) for c in args.costs),
        base_seed=args.seed,
        obj_size=args.size,
        phantom_seed=args.phantom_seed,
        looseness=args.looseness,
        max_iters=args.max_iters,
        step_size=args.step_size,
        precision=args.precision,
        threads=args.threads,
    )
    out = _out_path(args, args.out)
    if args.grid_experiment:
        obj = phantom.generate_phantom(cfg.phantom_seed, cfg.obj_size,
                                       cfg.mean_phase, cfg.support_fraction)
        result = sweep.grid_artifact_experiment(obj, fluence=args.fluences[0],
                                                base_seed=cfg.base_seed,
                                                max_iters=cfg.max_iters,
                                                precision=cfg.precision)
        for name in ("fine", "coarse"):
            containers.write_pgm(out.with_suffix(f".{name}.pgm"),
                                 result[name]["recon"].phase.data, vmin=0.0, vmax=1.0)
            print(f"{name}: positions={result[name]['positions']} "
                  f"photons/exposure={result[name]['photons_per_exposure']:.4g} "
                  f"smse={result[name]['smse']:.6g}")
        print(f"per-exposure photon ratio coarse/fine: {result['per_exposure_ratio']:.4g}")
        return 0
    rows = sweep.run_sweep(cfg)
    sweep.write_sweep_csv(rows, out)
    failures = [r for r in rows if r.error]
    print(f"sweep: {len(rows)} cells, {len(failures)} failed; wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cxdose",
        description="Dose-efficiency simulations for NFH, FFP and NFP coherent imaging.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("phantom", help="generate a cell-like phase phantom")
    add_common(p)
    p.add_argument("--size", type=_positive_int, default=512)
    p.add_argument("--mean-phase", type=float, default=0.643)
    p.add_argument("--support-fraction", type=float, default=0.194)
    p.add_argument("--out", default="phantom.json")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="simulate a measurement dataset")
    add_common(p)
    p.add_argument("--modality", choices=["nfh", "ffp", "nfp"], required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--fluence", type=float, default=350.0)
    p.add_argument("--noise-free", action="store_true")
    p.add_argument("--fresnel-number", type=float, default=1e-3)
    p.add_argument("--pad-margin", type=int, default=None)
    p.add_argument("--grid-rows", type=int, default=None)
    p.add_argument("--grid-cols", type=int, default=None)
    p.add_argument("--grid-step", type=int, default=5)
    p.add_argument("--patch-size", type=int, default=72)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--out", default="dataset.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct the phase from a dataset")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--cost", type=_cost_kind, choices=list(CostKind), default=CostKind.LSQ)
    p.add_argument("--support", default=None,
                   help="mask container, or object container to derive a mask from")
    p.add_argument("--looseness", type=int, default=9)
    p.add_argument("--nonneg", action="store_true")
    p.add_argument("--max-iters", type=int, default=3000)
    p.add_argument("--step-size", type=float, default=5e-3)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--precision", choices=["single", "double"], default="double")
    p.add_argument("--out", default="recon.json")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("metrics", help="score reconstructions against truth/each other")
    add_common(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--recon", action="append", required=True,
                   help="repeat for a second instance to get paired metrics")
    p.add_argument("--looseness", type=int, default=9)
    p.add_argument("--no-align-offset", action="store_true")
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="run a fluence sweep and emit a metrics CSV")
    add_common(p)
    p.add_argument("--modalities", nargs="+", default=["nfh", "ffp", "nfp"])
    p.add_argument("--fluences", nargs="+", type=float,
                   default=list(sweep.DEFAULT_FLUENCES))
    p.add_argument("--costs", nargs="+", choices=["lsq", "poisson"], default=["lsq"])
    p.add_argument("--size", type=_positive_int, default=512)
    p.add_argument("--phantom-seed", type=int, default=1)
    p.add_argument("--looseness", type=int, default=9)
    p.add_argument("--max-iters", type=int, default=3000)
    p.add_argument("--step-size", type=float, default=5e-3)
    p.add_argument("--precision", choices=["single", "double"], default="single")
    p.add_argument("--grid-experiment", action="store_true",
                   help="run the coarse-vs-fine FFP grid comparison instead")
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, CxdoseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
