"""
Cloud-to-cloud comparison (M3C2 at a single scale), uncertainty
decomposition, range-bin repeatability and range-dependent error models.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .beam import footprint_radius
from .clouds import SINGLE_MAX, SphericalPointCloud
from .georef import FrameError

LOD_Z = 1.96
MIN_SPHERE_NEIGHBORS = 4
RULES = ("sigma_m3c2", "sigma_l", "sigma_ref", "delta_e")


class InsufficientPointsError(ValueError):
    pass


class GeometryMismatchError(ValueError):
    pass


class ErrorModelRangeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class M3c2Params:
    sphere_radius: float  # D/2
    cylinder_radius: Optional[float] = None  # d/2, defaults to D/2
    max_half_length_factor: float = 10.0  # cylinder half-length = factor * D/2
    projection_direction: str = "toward_origin"

    def __post_init__(self):
        if not self.sphere_radius > 0:
            raise ValueError("sphere radius must be positive")
        if self.cylinder_radius is not None and not self.cylinder_radius > 0:
            raise ValueError("cylinder radius must be positive")
        if self.projection_direction != "toward_origin":
            raise ValueError(f"unsupported projection direction {self.projection_direction!r}")

    @property
    def radius(self) -> float:
        return self.sphere_radius if self.cylinder_radius is None else self.cylinder_radius

    @property
    def half_length(self) -> float:
        return self.max_half_length_factor * self.sphere_radius

    @classmethod
    def from_footprint(cls, range_m: float, beamwidth_deg: float, **kw) -> "M3c2Params":
        """Scale set by the beam footprint, D/2 = R tan(beamwidth / 2)."""
        return cls(float(footprint_radius(range_m, beamwidth_deg)), **kw)


@dataclass
class M3c2Result:
    core_point_id: np.ndarray
    distance: np.ndarray  # signed, positive toward the origin; NaN when invalid
    lod95: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    normal: np.ndarray
    valid: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def n_removed(self) -> int:
        """Core points without a match in either cloud."""
        return int((~self.valid).sum())

    @property
    def mean_l(self) -> float:
        return float(np.mean(self.distance[self.valid])) if self.n_valid else math.nan

    @property
    def sigma_m3c2(self) -> float:
        return float(np.std(self.distance[self.valid])) if self.n_valid else math.nan

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=np.float64)]
        return {
            "core_point_id": self.core_point_id.astype(int).tolist(),
            "distance": clean(self.distance), "lod95": clean(self.lod95),
            "n1": self.n1.astype(int).tolist(), "n2": self.n2.astype(int).tolist(),
            "sigma1": clean(self.sigma1), "sigma2": clean(self.sigma2),
            "valid": self.valid.astype(bool).tolist(),
            "mean_l": self.mean_l, "sigma_m3c2": self.sigma_m3c2, "n_removed": self.n_removed,
        }


def _xyz(cloud) -> np.ndarray:
    return np.asarray(getattr(cloud, "xyz", cloud), dtype=np.float64).reshape(-1, 3)


def _plane_normal(pts: np.ndarray) -> np.ndarray:
    centred = pts - pts.mean(axis=0)
    _, vecs = np.linalg.eigh(centred.T @ centred)
    return vecs[:, 0]


def _axial_spread(proj: np.ndarray) -> float:
    return float(np.std(proj, ddof=1)) if proj.size > 1 else 0.0


def m3c2(test_cloud, ref_cloud, params: M3c2Params, radar_origin) -> M3c2Result:
    """Distance from ``ref_cloud`` to ``test_cloud`` at every test point.

    Accepts CartesianPointCloud objects or (n, 3) arrays. Each test point is a
    core point; the normal comes from a plane fit to the test points inside
    the sphere and is oriented toward ``radar_origin``.
    """
    fa, fb = getattr(test_cloud, "frame", None), getattr(ref_cloud, "frame", None)
    if fa is not None and fb is not None and fa != fb:
        raise FrameError(f"clouds in different frames: {fa} vs {fb}")
    a, b = _xyz(test_cloud), _xyz(ref_cloud)
    origin = np.asarray(radar_origin, dtype=np.float64).reshape(3)
    ids = np.asarray(getattr(test_cloud, "point_id", np.arange(a.shape[0])))
    n = a.shape[0]
    out = {k: np.full(n, np.nan) for k in ("distance", "lod95", "sigma1", "sigma2")}
    n1 = np.zeros(n, dtype=np.int64)
    n2 = np.zeros(n, dtype=np.int64)
    normals = np.full((n, 3), np.nan)
    valid = np.zeros(n, dtype=bool)
    if n == 0 or b.shape[0] == 0:
        return M3c2Result(ids, out["distance"], out["lod95"], n1, n2, out["sigma1"], out["sigma2"], normals, valid)

    tree_a, tree_b = cKDTree(a), cKDTree(b)
    r, h = params.radius, params.half_length
    # balls of radius hypot(r, step / 2) spaced ``step`` along the axis cover the cylinder
    n_steps = max(1, math.ceil(2 * h / r))
    offsets = np.linspace(-h, h, n_steps + 1)
    ball = math.hypot(r, h / n_steps)
    sphere = tree_a.query_ball_point(a, params.sphere_radius)

    def candidates(tree, c, nrm):
        hits = tree.query_ball_point(c + offsets[:, None] * nrm, ball)
        return np.unique(np.concatenate([np.asarray(x, dtype=np.int64) for x in hits]))

    for i in range(n):
        if len(sphere[i]) < MIN_SPHERE_NEIGHBORS:
            continue
        c = a[i]
        nrm = _plane_normal(a[sphere[i]])
        if np.dot(origin - c, nrm) < 0:
            nrm = -nrm
        normals[i] = nrm

        def cylinder(pts, idx):
            d = pts[idx] - c
            ax = d @ nrm
            radial = np.linalg.norm(d - np.outer(ax, nrm), axis=1)
            keep = (np.abs(ax) <= h) & (radial <= r)
            return pts[idx][keep], ax[keep]

        pa, axa = cylinder(a, candidates(tree_a, c, nrm))
        pb, axb = cylinder(b, candidates(tree_b, c, nrm))
        n1[i], n2[i] = axa.size, axb.size
        if axa.size == 0 or axb.size == 0:
            continue
        i1, i2 = pa.mean(axis=0), pb.mean(axis=0)
        s1, s2 = _axial_spread(axa), _axial_spread(axb)
        out["distance"][i] = float(np.dot(i1 - i2, nrm))
        out["sigma1"][i], out["sigma2"][i] = s1, s2
        out["lod95"][i] = LOD_Z * math.sqrt(s1 ** 2 / axa.size + s2 ** 2 / axb.size)
        valid[i] = True
    return M3c2Result(ids, out["distance"], out["lod95"], n1, n2, out["sigma1"], out["sigma2"], normals, valid)


@dataclass(frozen=True)
class UncertaintyBreakdown:
    sigma_a2: float
    sigma_m3c2: float
    sigma_ref: float
    sigma_l: float
    delta_e: float
    mean_l: float
    rule_applied: str
    systematic_offset_detected: bool

    def to_dict(self) -> dict:
        return asdict(self)


def select_sigma_a2(sigma_m3c2: float, sigma_l: float, sigma_ref: float) -> tuple[float, str]:
    """Pick the dominant positional uncertainty; cases are tried in order, first match wins."""
    sm, sl, sr = float(sigma_m3c2), float(sigma_l), float(sigma_ref)
    if min(sm, sl, sr) < 0:
        raise ValueError("uncertainties must be non-negative")
    if sm >= sl and sm >= sr:
        return sm, "sigma_m3c2"
    if sl >= sm >= sr:
        return sl, "sigma_l"
    if sr >= sm >= sl:
        return sr, "sigma_ref"
    if sl >= sm and sr >= sm:
        return math.hypot(sr, sl), "delta_e"
    raise AssertionError("unreachable: case selection is total")


def breakdown_from_stats(sigma_m3c2: float, mean_l: float, sigma_l: float, sigma_ref: float) -> UncertaintyBreakdown:
    delta_e = math.hypot(sigma_ref, sigma_l)
    sigma_a2, rule = select_sigma_a2(sigma_m3c2, sigma_l, sigma_ref)
    return UncertaintyBreakdown(sigma_a2, float(sigma_m3c2), float(sigma_ref), float(sigma_l), delta_e,
                                float(mean_l), rule, abs(mean_l) > delta_e)


def uncertainty_breakdown(result: M3c2Result, sigma_ref: float) -> UncertaintyBreakdown:
    """sigma_l is the mean LoD95 over valid core points."""
    if result.n_valid < 2:
        raise InsufficientPointsError(f"{result.n_valid} valid core point(s); need 2")
    sigma_l = float(np.mean(result.lod95[result.valid]))
    return breakdown_from_stats(result.sigma_m3c2, result.mean_l, sigma_l, sigma_ref)


@dataclass
class RepeatabilityResult:
    delta_bins: np.ndarray  # (phi, theta), NaN where either scan lacks a point
    values: np.ndarray  # histogram support (integer bin differences)
    counts: np.ndarray
    std: float
    mean: float
    n: int

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "counts": self.counts.tolist(),
                "std": self.std, "mean": self.mean, "n": self.n}


def _bin_map(cloud: SphericalPointCloud) -> np.ndarray:
    m = np.full(cloud.geometry.shape, np.nan)
    sel = cloud.kind == SINGLE_MAX
    m[cloud.phi_index[sel], cloud.theta_index[sel]] = cloud.range_bin[sel]
    return m


def range_bin_repeatability(scan_a: SphericalPointCloud, scan_b: SphericalPointCloud) -> RepeatabilityResult:
    """Per-direction bin_a - bin_b over the single_max points of two scans."""
    if scan_a.geometry != scan_b.geometry:
        raise GeometryMismatchError("scans have different scan geometries")
    delta = _bin_map(scan_a) - _bin_map(scan_b)
    vals = delta[np.isfinite(delta)].astype(np.int64)
    if vals.size == 0:
        return RepeatabilityResult(delta, np.empty(0, np.int64), np.empty(0, np.int64), math.nan, math.nan, 0)
    support, counts = np.unique(vals, return_counts=True)
    return RepeatabilityResult(delta, support, counts, float(np.std(vals)), float(np.mean(vals)), int(vals.size))


@dataclass(frozen=True)
class ErrorModel:
    """sigma(R) in metres with R in km: linear a R + b, or exponential a exp(b R)."""

    kind: str
    params: tuple[float, float]
    adjusted_r2: float = math.nan
    valid_range: tuple[float, float] = (1.0, 3.5)

    def __post_init__(self):
        if self.kind not in ("linear", "exponential"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.adjusted_r2 > 1 + 1e-12:
            raise ValueError("adjusted R^2 cannot exceed 1")

    def in_range(self, range_km) -> np.ndarray:
        r = np.asarray(range_km, dtype=np.float64)
        return (r >= self.valid_range[0]) & (r <= self.valid_range[1])

    def __call__(self, range_km):
        r = np.asarray(range_km, dtype=np.float64)
        if not np.all(self.in_range(r)):
            warnings.warn(f"range outside model validity {self.valid_range} km", ErrorModelRangeWarning, stacklevel=2)
        a, b = self.params
        out = a * r + b if self.kind == "linear" else a * np.exp(b * r)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params), "adjusted_r2": self.adjusted_r2,
                "valid_range": list(self.valid_range)}


PUBLISHED_MODELS = {
    ("single", "linear"): ErrorModel("linear", (0.89, -0.12)),
    ("multiple", "linear"): ErrorModel("linear", (0.79, -0.59)),
    ("single", "exponential"): ErrorModel("exponential", (0.58, 0.48)),
    ("multiple", "exponential"): ErrorModel("exponential", (1.07, 0.33)),
}


def _adjusted_r2(y, yhat, n_predictors: int = 1) -> float:
    y, yhat = np.asarray(y), np.asarray(yhat)
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -math.inf
    r2 = 1.0 - ss_res / ss_tot
    dof = y.size - n_predictors - 1
    return r2 if dof <= 0 else 1.0 - (1.0 - r2) * (y.size - 1) / dof


def fit_error_model(range_km, sigma, kind: str = "linear") -> ErrorModel:
    """Least-squares fit; the exponential form is fitted to log(sigma).

    Adjusted R^2 is computed against sigma on its original scale.
    """
    r = np.asarray(range_km, dtype=np.float64)
    s = np.asarray(sigma, dtype=np.float64)
    if r.shape != s.shape or r.size < 3:
        raise ValueError("need at least 3 paired samples")
    if kind == "linear":
        a, b = np.polyfit(r, s, 1)
        model = ErrorModel("linear", (float(a), float(b)))
    elif kind == "exponential":
        if np.any(s <= 0):
            raise ValueError("exponential model needs positive sigma")
        slope, intercept = np.polyfit(r, np.log(s), 1)
        model = ErrorModel("exponential", (float(math.exp(intercept)), float(slope)))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ErrorModelRangeWarning)
        pred = np.atleast_1d(model(r))
    if not np.all(model.in_range(r)):
        warnings.warn("fit data outside model validity range", ErrorModelRangeWarning, stacklevel=2)
    r2 = min(_adjusted_r2(s, pred), 1.0)
    return ErrorModel(model.kind, model.params, r2, model.valid_range)


@dataclass
class ComparisonReport:
    result: M3c2Result
    breakdown: Optional[UncertaintyBreakdown]
    site: str = ""
    algorithm: str = ""
    error_model: Optional[ErrorModel] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "site": self.site, "algorithm": self.algorithm,
            "m3c2": self.result.to_dict(),
            "breakdown": None if self.breakdown is None else self.breakdown.to_dict(),
            "error_model": None if self.error_model is None else self.error_model.to_dict(),
            **self.extra,
        }, indent=2, sort_keys=True)


SUMMARY_COLUMNS = ("Site", "Algorithm", "sigma_A2 (m)", "mean_l (m)", "Delta_E (m)")


def summary_table(rows: list[tuple[str, str, UncertaintyBreakdown]]) -> str:
    """Plain-text table with one line per (site, algorithm)."""
    lines = ["\t".join(SUMMARY_COLUMNS)]
    for site, algo, b in rows:
        lines.append(f"{site}\t{algo}\t±{b.sigma_a2:.2f}\t{b.mean_l:.2f}\t±{b.delta_e:.2f}")
    return "\n".join(lines) + "\n"
