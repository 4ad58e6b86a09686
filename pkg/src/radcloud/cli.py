"""
Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 degenerate geometry, 5 filter non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from .cloudio import read_ply, read_spherical_csv, read_xyz, write_grid_csv, write_ply, write_spherical_csv, write_xyz
from .compare import (ComparisonReport, M3c2Params, fit_error_model, range_bin_repeatability, summary_table,
                      uncertainty_breakdown, m3c2, InsufficientPointsError, GeometryMismatchError)
from .datacube import CubeFormatError, read_cube, write_cube
from .georef import FrameError, GeorefError, read_gcp_csv, write_gcp_csv
from .pipeline import (GCP_STUDY_COLUMNS, ConfigError, ConvergenceError, PipelineConfig, build_manifest,
                       run_gcp_study, run_pipeline, summarize_gcp_study)
from .synth import SceneError, generate_scene, read_scene_spec

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DEGENERATE, EXIT_NONCONVERGENCE = 0, 2, 3, 4, 5

log = logging.getLogger("radcloud")


def _read_cloud(path):
    p = Path(path)
    if p.suffix.lower() == ".ply":
        return read_ply(p)
    return read_xyz(p)


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    spec = read_scene_spec(args.spec)
    cube, truth = generate_scene(spec, as_power=args.as_power)
    write_cube(cube, args.out)
    if args.truth:
        Path(args.truth).write_text(truth.to_json() + "\n", encoding="utf-8")
    if args.gcp_out:
        if truth.gcps is None:
            raise ConfigError("scene has no GCPs to export")
        write_gcp_csv(truth.gcps, args.gcp_out)
    return EXIT_OK


def _pipeline_config(args) -> PipelineConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    overrides = {
        "cube_path": args.cube, "mode": args.mode, "gating": args.gating, "gcp_path": args.gcps,
        "output_dir": args.out_dir, "seed": args.seed, "smoothing_window": args.smoothing_window,
        "threads": args.threads,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_snr_filter:
        base["snr_filter"] = False
    if args.no_voronoi:
        base["voronoi_filter"] = False
    if args.format:
        base["export_formats"] = tuple(args.format)
    cfg = PipelineConfig.from_dict(base)
    if cfg.cube_path is None:
        raise ConfigError("an input cube is required")
    cfg.validate()
    return cfg


def cmd_extract(args) -> int:
    cfg = _pipeline_config(args)
    cube = read_cube(cfg.cube_path)
    gcps = None
    if cfg.gcp_path:
        if cube.radar_origin_ecef is None:
            raise ConfigError("cube has no radar origin; cannot georeference")
        gcps = read_gcp_csv(cfg.gcp_path, cube.radar_origin_ecef)
    result = run_pipeline(cube, cfg, gcps)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    if "xyz" in cfg.export_formats:
        write_xyz(result.cartesian, out / "cloud.xyz")
        artifacts.append("cloud.xyz")
    if "ply" in cfg.export_formats:
        write_ply(result.cartesian, out / "cloud.ply")
        artifacts.append("cloud.ply")
    write_spherical_csv(result.spherical, out / "cloud_spherical.csv")
    (out / "filter_report.json").write_text(result.report.to_json() + "\n", encoding="utf-8")
    artifacts += ["cloud_spherical.csv", "filter_report.json"]
    if result.transform is not None:
        _write_json(result.transform.to_dict(), out / "transform.json")
        artifacts.append("transform.json")
    _write_json(build_manifest(cfg, result, artifacts), out / "manifest.json")
    if not result.report.converged:
        print(f"error: Voronoi filter did not converge in {cfg.max_voronoi_iterations} passes", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_compare(args) -> int:
    test, ref = _read_cloud(args.test), _read_cloud(args.ref)
    if test.frame != ref.frame:
        raise ConfigError(f"clouds are in different frames: {test.frame} vs {ref.frame}")
    if args.sphere_radius is not None:
        params = M3c2Params(args.sphere_radius)
    elif args.range_m is not None and args.beamwidth is not None:
        params = M3c2Params.from_footprint(args.range_m, args.beamwidth)
    else:
        raise ConfigError("give --sphere-radius, or --range-m with --beamwidth")
    result = m3c2(test, ref, params, args.origin)
    breakdown = uncertainty_breakdown(result, args.sigma_ref)
    model = None
    if args.fit_csv:
        with open(args.fit_csv, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        model = fit_error_model([float(r["range_km"]) for r in rows], [float(r["sigma"]) for r in rows],
                                args.model_kind)
    report = ComparisonReport(result, breakdown, args.site, args.algorithm, model,
                              {"params": {"sphere_radius": params.sphere_radius, "cylinder_radius": params.radius}})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(report.to_json() + "\n", encoding="utf-8")
    table = summary_table([(args.site, args.algorithm, breakdown)])
    (out / "summary.tsv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_gcp_study(args) -> int:
    cloud = _read_cloud(args.cloud)
    ref = _read_cloud(args.ref)
    gcps = read_gcp_csv(args.gcps, args.radar_ecef)
    rows = run_gcp_study(cloud, gcps, ref, M3c2Params(args.sphere_radius), args.sigma_ref, args.sample,
                         args.seed, args.max_core_points)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gcp_study.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GCP_STUDY_COLUMNS)
        for r in rows:
            w.writerow(r.as_csv_row())
    with open(out / "gcp_study_by_size.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("size", "n_subsets", "n_ok", "mean_sigma_a2", "mean_n_removed"))
        for size, s in summarize_gcp_study(rows).items():
            w.writerow((size, s["n_subsets"], s["n_ok"], f"{s['mean_sigma_a2']:.6g}", f"{s['mean_n_removed']:.6g}"))
    print(f"{len(rows)} GCP combinations written to {out / 'gcp_study.csv'}")
    return EXIT_OK


def cmd_repeatability(args) -> int:
    a, b = read_spherical_csv(args.a), read_spherical_csv(args.b)
    res = range_bin_repeatability(a, b)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_grid_csv(res.delta_bins, out / "delta_bins.csv")
    with open(out / "histogram.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("delta_bins", "count"))
        w.writerows(zip(res.values.tolist(), res.counts.tolist()))
    _write_json(res.to_dict(), out / "repeatability.json")
    print(f"delta range bin std = {res.std:.3f} over {res.n} directions")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radcloud", description=__doc__.strip().splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic cube from a scene spec (JSON)")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True, help="output PCUBE/1 file")
    s.add_argument("--truth", help="ground-truth JSON output")
    s.add_argument("--gcp-out", help="GCP CSV output")
    s.add_argument("--as-power", action="store_true", help="store received power instead of SNR")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("extract", help="cube -> filtered (and optionally georeferenced) point cloud")
    e.add_argument("--cube")
    e.add_argument("--config", help="JSON pipeline config; flags override it")
    e.add_argument("--mode", choices=("single", "multiple"))
    e.add_argument("--gating", choices=("auto", "force_on", "force_off"))
    e.add_argument("--no-snr-filter", action="store_true")
    e.add_argument("--no-voronoi", action="store_true")
    e.add_argument("--gcps", help="GCP CSV; enables georeferencing")
    e.add_argument("--out-dir")
    e.add_argument("--seed", type=int)
    e.add_argument("--smoothing-window", type=int)
    e.add_argument("--format", action="append", choices=("xyz", "ply"))
    e.add_argument("--threads", type=int, help="worker bound (stages here run single-threaded)")
    e.set_defaults(func=cmd_extract)

    c = sub.add_parser("compare", help="M3C2 comparison and uncertainty breakdown")
    c.add_argument("--test", required=True, help="cloud under test (.xyz or .ply)")
    c.add_argument("--ref", required=True, help="reference cloud (.xyz or .ply)")
    c.add_argument("--origin", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    c.add_argument("--sphere-radius", type=float)
    c.add_argument("--range-m", type=float)
    c.add_argument("--beamwidth", type=float, help="degrees")
    c.add_argument("--sigma-ref", type=float, default=0.006)
    c.add_argument("--site", default="site")
    c.add_argument("--algorithm", default="pipeline")
    c.add_argument("--fit-csv", help="CSV with range_km,sigma columns for an error-model fit")
    c.add_argument("--model-kind", choices=("linear", "exponential"), default="linear")
    c.add_argument("--out-dir", default="compare_out")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gcp-study", help="uncertainty versus GCP subset")
    g.add_argument("--cloud", required=True, help="radar_local cloud (.xyz or .ply)")
    g.add_argument("--ref", required=True, help="ECEF reference cloud")
    g.add_argument("--gcps", required=True)
    g.add_argument("--radar-ecef", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    g.add_argument("--sphere-radius", type=float, required=True)
    g.add_argument("--sigma-ref", type=float, default=0.006)
    g.add_argument("--sample", type=int, help="random subset count (required above 16 GCPs)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-core-points", type=int)
    g.add_argument("--out-dir", default="gcp_study_out")
    g.set_defaults(func=cmd_gcp_study)

    r = sub.add_parser("repeatability", help="range-bin differences between two scans")
    r.add_argument("--a", required=True, help="spherical CSV of scan A")
    r.add_argument("--b", required=True, help="spherical CSV of scan B")
    r.add_argument("--out-dir", default="repeatability_out")
    r.set_defaults(func=cmd_repeatability)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, SceneError, FrameError, InsufficientPointsError, GeometryMismatchError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CubeFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GeorefError as exc:
        print(f"degenerate geometry: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
