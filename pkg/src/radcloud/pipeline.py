"""
End-to-end processing chain and the GCP-count experiment.

averaging -> extraction -> [SNR filter, single mode] -> Voronoi filter -> georeference
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import platform
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .clouds import CartesianPointCloud, SphericalPointCloud
from .compare import M3c2Params, breakdown_from_stats, m3c2
from .datacube import DataCube
from .extraction import GATING_MODES, ExtractionDetails, extract_multiple, extract_single
from .filtering import FilterReport, NoThresholdWarning, apply_snr_filter, protected_ids, snr_threshold, voronoi_filter
from .georef import GcpSet, GeorefError, RigidTransform, estimate_transform, georeference, spherical_to_cartesian

MODES = ("single", "multiple")
MAX_EXHAUSTIVE_GCPS = 16


class ConfigError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    cube_path: Optional[str] = None
    mode: str = "single"
    gating: str = "auto"
    snr_filter: bool = True
    voronoi_filter: bool = True
    gcp_path: Optional[str] = None
    output_dir: str = "out"
    seed: int = 0
    smoothing_window: Optional[int] = None
    max_voronoi_iterations: int = 100
    export_formats: tuple = ("xyz", "ply")
    threads: int = 1

    def validate(self, check_paths: bool = True) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.gating not in GATING_MODES:
            raise ConfigError(f"gating must be one of {GATING_MODES}")
        if self.smoothing_window is not None and self.smoothing_window < 1:
            raise ConfigError("smoothing window must be >= 1")
        if self.max_voronoi_iterations < 1:
            raise ConfigError("max_voronoi_iterations must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        bad = set(self.export_formats) - {"xyz", "ply"}
        if bad:
            raise ConfigError(f"unknown export formats {sorted(bad)}")
        if check_paths:
            for name in ("cube_path", "gcp_path"):
                p = getattr(self, name)
                if p is not None and not Path(p).is_file():
                    raise ConfigError(f"{name} does not exist: {p}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["export_formats"] = list(self.export_formats)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "export_formats" in d:
            d["export_formats"] = tuple(d["export_formats"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class PipelineResult:
    spherical: SphericalPointCloud
    cartesian: CartesianPointCloud
    report: FilterReport
    details: ExtractionDetails
    transform: Optional[RigidTransform] = None
    timings: dict = field(default_factory=dict)


def _snr_and_voronoi(cloud, config, report, protected=None):
    if config.snr_filter and protected is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoThresholdWarning)
            thr, _ = snr_threshold(cloud)
        if np.isfinite(thr):
            cloud, removed = apply_snr_filter(cloud, thr)
            report.removed_low_snr = removed
            report.threshold_snr_db = thr
    if config.voronoi_filter:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cloud, report = voronoi_filter(cloud, protected, config.max_voronoi_iterations, report)
    return cloud, report


def run_pipeline(cube: DataCube, config: PipelineConfig, gcps: Optional[GcpSet] = None,
                 strict_convergence: bool = False) -> PipelineResult:
    """Run the chain on an in-memory cube.

    In multiple mode the single-point chain runs first and multiple-cloud
    points coinciding with its survivors are protected from Voronoi removal.
    """
    config.validate(check_paths=False)
    timings = {}
    t0 = time.perf_counter()
    single, details = extract_single(cube, config.gating, config.smoothing_window, return_details=True)
    timings["extract_single"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report = FilterReport()
    single, report = _snr_and_voronoi(single, config, report)
    timings["filter_single"] = time.perf_counter() - t0
    cloud = single
    if config.mode == "multiple":
        t0 = time.perf_counter()
        multi, details = extract_multiple(cube, config.gating, config.smoothing_window, return_details=True)
        timings["extract_multiple"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        keep = protected_ids(multi, single)
        report = FilterReport(removed_low_snr=0)
        cloud, report = _snr_and_voronoi(multi, config, report, protected=keep)
        timings["filter_multiple"] = time.perf_counter() - t0
    if strict_convergence and not report.converged:
        raise ConvergenceError(f"Voronoi filter did not converge in {config.max_voronoi_iterations} passes")

    cart = spherical_to_cartesian(cloud)
    transform = None
    if gcps is not None:
        t0 = time.perf_counter()
        transform = estimate_transform(gcps)
        cart = georeference(cart, transform)
        timings["georeference"] = time.perf_counter() - t0
    return PipelineResult(cloud, cart, report, details, transform, timings)


def environment_versions() -> dict:
    import scipy
    import statsmodels
    return {"radcloud": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "statsmodels": statsmodels.__version__}


def build_manifest(config: PipelineConfig, result: Optional[PipelineResult] = None, artifacts=()) -> dict:
    m = {"config": config.to_dict(), "config_sha256": config.digest(), "versions": environment_versions(),
         "artifacts": sorted(str(a) for a in artifacts)}
    if result is not None:
        m["timings_s"] = {k: round(v, 6) for k, v in result.timings.items()}
        m["n_points"] = len(result.spherical)
        m["frame"] = result.cartesian.frame
        m["filter_report"] = result.report.to_dict()
    return m


# -- GCP-count experiment ----------------------------------------------------

@dataclass
class GcpStudyRow:
    subset: tuple
    size: int
    status: str  # ok | insufficient | degenerate
    sigma_a2: float = math.nan
    mean_l: float = math.nan
    delta_e: float = math.nan
    n_removed: int = -1
    rotation_rms: float = math.nan

    def as_csv_row(self) -> list:
        return [";".join(self.subset), self.size, self.status, f"{self.sigma_a2:.6g}", f"{self.mean_l:.6g}",
                f"{self.delta_e:.6g}", self.n_removed, f"{self.rotation_rms:.6g}"]


GCP_STUDY_COLUMNS = ("subset", "size", "status", "sigma_a2", "mean_l", "delta_e", "n_removed", "rotation_rms")


def gcp_subsets(ids, sample: Optional[int] = None, seed: int = 0) -> list[tuple]:
    """All non-empty subsets (2^n - 1), or ``sample`` distinct random ones."""
    ids = tuple(ids)
    n = len(ids)
    if sample is None:
        if n > MAX_EXHAUSTIVE_GCPS:
            raise ConfigError(f"{n} GCPs gives {2 ** n - 1} subsets; pass a sample size")
        return [c for k in range(1, n + 1) for c in itertools.combinations(ids, k)]
    total = 2 ** n - 1
    sample = min(int(sample), total)
    rng = np.random.default_rng(seed)
    masks = set()
    while len(masks) < sample:
        masks.add(int(rng.integers(1, total + 1)))
    return [tuple(ids[i] for i in range(n) if (m >> i) & 1) for m in sorted(masks)]


def run_gcp_study(local_cloud: CartesianPointCloud, gcps: GcpSet, reference, params: M3c2Params,
                  sigma_ref: float = 0.006, sample: Optional[int] = None, seed: int = 0,
                  max_core_points: Optional[int] = None) -> list[GcpStudyRow]:
    """Georeference with every GCP subset and compare against an ECEF reference."""
    if len(gcps) < 2:
        raise ConfigError("the GCP study needs at least 2 GCPs")
    if local_cloud.frame != "radar_local":
        raise ConfigError("the GCP study expects a radar_local cloud")
    test = local_cloud
    if max_core_points is not None and len(test) > max_core_points:
        idx = np.random.default_rng(seed).choice(len(test), max_core_points, replace=False)
        test = test.subset(np.sort(idx))
    origin = np.asarray(gcps.radar_ecef, dtype=np.float64)
    rows = []
    for subset in gcp_subsets([g.id for g in gcps.gcps], sample, seed):
        if len(subset) < 2:
            rows.append(GcpStudyRow(subset, len(subset), "insufficient"))
            continue
        try:
            tf = estimate_transform(gcps.subset(subset))
        except GeorefError:
            rows.append(GcpStudyRow(subset, len(subset), "degenerate"))
            continue
        res = m3c2(georeference(test, tf), reference, params, origin)
        if res.n_valid < 2:
            rows.append(GcpStudyRow(subset, len(subset), "insufficient", n_removed=res.n_removed,
                                    rotation_rms=tf.residual_rms))
            continue
        sigma_l = float(np.mean(res.lod95[res.valid]))
        b = breakdown_from_stats(res.sigma_m3c2, res.mean_l, sigma_l, sigma_ref)
        rows.append(GcpStudyRow(subset, len(subset), "ok", b.sigma_a2, b.mean_l, b.delta_e, res.n_removed,
                                tf.residual_rms))
    return rows


def summarize_gcp_study(rows: list[GcpStudyRow]) -> dict:
    """Mean sigma_A2 and removed-point count per subset size (ok rows only)."""
    out = {}
    for size in sorted({r.size for r in rows}):
        ok = [r for r in rows if r.size == size and r.status == "ok"]
        out[size] = {
            "n_subsets": sum(1 for r in rows if r.size == size),
            "n_ok": len(ok),
            "mean_sigma_a2": float(np.mean([r.sigma_a2 for r in ok])) if ok else math.nan,
            "mean_n_removed": float(np.mean([r.n_removed for r in ok])) if ok else math.nan,
        }
    return out
