"""
Synthetic radar scenes with ground truth.

Terrain is ray-cast per line of sight, each intersection deposits a Gaussian
echo in range, speckle is multiplicative unit-mean exponential on linear
power, and the background is unit-mean exponential (Rayleigh-amplitude)
noise. Every line of sight draws from its own counter-keyed RNG stream so
the result does not depend on generation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .clouds import MULTIPLE_ECHO, SINGLE_MAX, SphericalPointCloud
from .datacube import ChirpParams, DataCube, ScanGeometry, power_to_db, range_of_bin
from .georef import (Gcp, GcpSet, RigidTransform, direction_vectors, enu_to_ecef_rotation,
                     geodetic_to_ecef)

TERRAIN_KINDS = ("plane", "ramp", "step_benches", "quarry_profile")
_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class SceneError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    """Scene description; see ``SceneSpec.from_dict`` for the JSON layout.

    terrain_params by kind:
      plane          distance_m, normal_azimuth_deg=0, normal_elevation_deg=0
                     (normal points away from the radar; distance is perpendicular)
      ramp           boresight_range_m, slope_deg (0 = vertical face, tilting back)
      step_benches   near_m, far_m, band_theta_deg=[lo, hi]; both faces seen inside the band
      quarry_profile benches=[[phi_max_deg, distance_m], ...] ascending in phi
    """

    geometry: ScanGeometry
    chirp: ChirpParams
    terrain: str = "plane"
    terrain_params: dict = field(default_factory=lambda: {"distance_m": 1000.0})
    seed: int = 0
    terrain_snr_db: float = 20.0
    noise_floor_db: float = -90.0
    speckle: bool = True
    noise: bool = True
    echo_width_bins: float = 2.0  # FWHM
    gcps: tuple = ()  # ({"id", "theta_deg", "phi_deg", "range_m"}, ...)
    gcp_snr_db: float = 40.0
    radar_lat_deg: float = 56.35
    radar_lon_deg: float = -2.95
    radar_height_m: float = 60.0
    heading_deg: float = 0.0
    dwell_s: float = 0.1
    outlier_count: int = 0
    outlier_min_separation_bins: int = 10

    def __post_init__(self):
        if self.terrain not in TERRAIN_KINDS:
            raise SceneError(f"unknown terrain kind {self.terrain!r}")
        if self.echo_width_bins <= 0:
            raise SceneError("echo width must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.to_dict()
        d["chirp"] = self.chirp.to_dict()
        d["gcps"] = [dict(g) for g in self.gcps]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["geometry"] = ScanGeometry.from_dict(d["geometry"])
        d["chirp"] = ChirpParams.from_dict(d["chirp"])
        d["gcps"] = tuple(dict(g) for g in d.get("gcps", ()))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SceneError(f"unknown scene fields: {sorted(unknown)}")
        return cls(**d)


def read_scene_spec(path) -> SceneSpec:
    with open(path, encoding="utf-8") as fh:
        return SceneSpec.from_dict(json.load(fh))


def write_scene_spec(spec: SceneSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)


@dataclass
class GroundTruth:
    ranges: np.ndarray  # (phi, theta, max_surfaces), NaN-padded
    transform: RigidTransform
    gcps: Optional[GcpSet] = None
    outlier_ids: list = field(default_factory=list)

    def surface_count(self) -> np.ndarray:
        return np.isfinite(self.ranges).sum(axis=-1)

    def to_dict(self) -> dict:
        return {
            "ranges": np.where(np.isfinite(self.ranges), self.ranges, None).tolist(),
            "transform": self.transform.to_dict(),
            "gcps": None if self.gcps is None else [
                {"id": g.id, "theta_deg": g.theta_deg, "phi_deg": g.phi_deg,
                 "slant_range_m": g.slant_range_m, "ecef": list(g.ecef)} for g in self.gcps.gcps],
            "radar_ecef": None if self.gcps is None else list(self.gcps.radar_ecef),
            "outlier_ids": [int(i) for i in self.outlier_ids],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def ray_plane_range(dirs: np.ndarray, normal, distance: float) -> np.ndarray:
    """Range along unit rays to the plane n.x = d (NaN where the ray misses)."""
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    dots = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = distance / dots
    return np.where((dots > 1e-12) & (r > 0), r, np.nan)


def true_ranges(spec: SceneSpec) -> np.ndarray:
    """Analytic terrain ranges per line of sight, shape (phi, theta, surfaces)."""
    geom = spec.geometry
    tt, pp = np.meshgrid(geom.thetas, geom.phis)
    dirs = direction_vectors(tt, pp)
    prm = spec.terrain_params
    if spec.terrain == "plane":
        normal = direction_vectors(prm.get("normal_azimuth_deg", 0.0), prm.get("normal_elevation_deg", 0.0))
        out = ray_plane_range(dirs, normal, float(prm["distance_m"]))[..., None]
    elif spec.terrain == "ramp":
        s = math.radians(float(prm["slope_deg"]))
        normal = (0.0, math.cos(s), -math.sin(s))
        out = ray_plane_range(dirs, normal, float(prm["boresight_range_m"]) * math.cos(s))[..., None]
    elif spec.terrain == "step_benches":
        near = ray_plane_range(dirs, (0, 1, 0), float(prm["near_m"]))
        far = ray_plane_range(dirs, (0, 1, 0), float(prm["far_m"]))
        lo, hi = prm.get("band_theta_deg", (-np.inf, np.inf))
        in_band = (tt >= lo) & (tt <= hi)
        out = np.stack([np.where(in_band, near, np.nan), far], axis=-1)
    else:  # quarry_profile
        benches = sorted((float(a), float(b)) for a, b in prm["benches"])
        dist = np.full(pp.shape, np.nan)
        for phi_max, d in reversed(benches):
            dist = np.where(pp <= phi_max, d, dist)
        out = (dist / (np.cos(np.radians(tt)) * np.cos(np.radians(pp))))[..., None]
    return out


def radar_transform(spec: SceneSpec) -> RigidTransform:
    """Local (x right, y boresight, z up) to ECEF for a levelled radar with the given heading."""
    h = math.radians(spec.heading_deg)
    local_to_enu = np.array([[math.cos(h), math.sin(h), 0.0],
                             [-math.sin(h), math.cos(h), 0.0],
                             [0.0, 0.0, 1.0]])
    rot = enu_to_ecef_rotation(spec.radar_lat_deg, spec.radar_lon_deg) @ local_to_enu
    origin = geodetic_to_ecef(spec.radar_lat_deg, spec.radar_lon_deg, spec.radar_height_m)
    return RigidTransform(rot, origin)


def _los_rng(seed: int, phi_index: int, theta_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(phi_index, theta_index)))


def generate_scene(spec: SceneSpec, as_power: bool = False) -> tuple[DataCube, GroundTruth]:
    """Synthesize a cube (SNR dB, or received power dB with ``as_power``) and its ground truth."""
    geom, chirp = spec.geometry, spec.chirp
    ranges = true_ranges(spec)
    finite = ranges[np.isfinite(ranges)]
    if finite.size and (finite.max() >= chirp.max_range_m or finite.min() < 0):
        raise SceneError("terrain lies beyond the unambiguous range")

    n = chirp.n_range_bins
    bins = np.arange(n, dtype=np.float64)
    sigma = spec.echo_width_bins * _FWHM_TO_SIGMA
    half = int(math.ceil(6 * sigma)) + 1
    amp = 10.0 ** (spec.terrain_snr_db / 10.0)
    dr = chirp.range_resolution_m

    transform = radar_transform(spec)
    gcp_objs = []
    blobs = []
    for g in spec.gcps:
        k0 = (float(g["range_m"]) - chirp.range_offset_m) / dr
        if not 0 <= k0 < n:
            raise SceneError(f"GCP {g['id']} beyond the unambiguous range")
        ecef = transform.apply(float(g["range_m"]) * direction_vectors(g["theta_deg"], g["phi_deg"]))
        gcp_objs.append(Gcp(str(g["id"]), float(g["theta_deg"]), float(g["phi_deg"]), float(g["range_m"]),
                            tuple(float(v) for v in ecef)))
        blobs.append((float(g["theta_deg"]), float(g["phi_deg"]), k0))
    st = geom.beamwidth_theta * _FWHM_TO_SIGMA
    sp = geom.beamwidth_phi * _FWHM_TO_SIGMA
    gcp_amp = 10.0 ** (spec.gcp_snr_db / 10.0)

    lin = np.empty((geom.phi_count, geom.theta_count, n), dtype=np.float64)
    for p in range(geom.phi_count):
        phi = float(geom.phi_of(p))
        for t in range(geom.theta_count):
            theta = float(geom.theta_of(t))
            rng = _los_rng(spec.seed, p, t)
            noise = rng.standard_exponential(n)
            speckle = rng.standard_exponential(n)
            w = noise.copy() if spec.noise else np.zeros(n)
            echo = np.zeros(n)
            for r in ranges[p, t]:
                if not np.isfinite(r):
                    continue
                k0 = (r - chirp.range_offset_m) / dr
                lo, hi = max(0, int(k0) - half), min(n, int(k0) + half + 1)
                echo[lo:hi] += amp * np.exp(-0.5 * ((bins[lo:hi] - k0) / sigma) ** 2)
            for bt, bp, k0 in blobs:
                ang = ((theta - bt) / st) ** 2 + ((phi - bp) / sp) ** 2
                if ang > 32:
                    continue
                lo, hi = max(0, int(k0) - half), min(n, int(k0) + half + 1)
                echo[lo:hi] += gcp_amp * math.exp(-0.5 * ang) * np.exp(-0.5 * ((bins[lo:hi] - k0) / sigma) ** 2)
            w += echo * speckle if spec.speckle else echo
            lin[p, t] = w
    snr = power_to_db(np.maximum(lin, 1e-12))
    if as_power:
        snr = snr + spec.noise_floor_db
    timestamps = spec.dwell_s * np.arange(geom.phi_count * geom.theta_count, dtype=np.float64).reshape(geom.shape)
    cube = DataCube(snr.astype(np.float32), geom, chirp, timestamps, tuple(transform.translation),
                    {"generator": "radcloud.synth", "seed": int(spec.seed), "terrain": spec.terrain})
    gcps = GcpSet(tuple(gcp_objs), tuple(transform.translation)) if gcp_objs else None
    return cube, GroundTruth(ranges, transform, gcps)


def inject_outliers(cloud: SphericalPointCloud, count: int, truth: GroundTruth, seed: int = 0,
                    min_separation_bins: int = 10, max_rejections: int = 1000):
    """Add ``count`` labelled points at random (theta, phi, bin) away from every true surface.

    Returns ``(cloud', outlier_ids)``. Injected points carry the multiple_echo
    tag and an SNR resampled from the existing cloud.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return cloud, []
    rng = np.random.default_rng(seed)
    geom, chirp = cloud.geometry, cloud.chirp
    dr = chirp.range_resolution_m
    true_bins = (truth.ranges - chirp.range_offset_m) / dr
    taken = {tuple(k) for k in cloud.keys().tolist()}
    next_id = int(cloud.point_id.max()) + 1 if len(cloud) else 0
    snr_pool = cloud.snr_db if len(cloud) else np.array([0.0])
    rows = []
    rejections = 0
    while len(rows) < count:
        t = int(rng.integers(geom.theta_count))
        p = int(rng.integers(geom.phi_count))
        b = int(rng.integers(chirp.n_range_bins))
        tb = true_bins[p, t]
        tb = tb[np.isfinite(tb)]
        if (tb.size and np.min(np.abs(tb - b)) < min_separation_bins) or (p, t, b) in taken:
            rejections += 1
            if rejections >= max_rejections:
                raise PlacementError(f"could not place {count} outliers after {rejections} rejections")
            continue
        taken.add((p, t, b))
        rows.append((next_id, t, p, b, float(rng.choice(snr_pool))))
        next_id += 1
    ids = np.array([r[0] for r in rows])
    ti = np.array([r[1] for r in rows])
    pi = np.array([r[2] for r in rows])
    bi = np.array([r[3] for r in rows])
    extra = SphericalPointCloud(
        point_id=ids, theta_index=ti, phi_index=pi, range_bin=bi, range_m=range_of_bin(bi, chirp),
        theta_deg=geom.theta_of(ti), phi_deg=geom.phi_of(pi), snr_db=[r[4] for r in rows],
        kind=np.full(len(rows), MULTIPLE_ECHO), geometry=geom, chirp=chirp)
    return cloud.concat(extra), ids.tolist()


def truth_cloud(truth: GroundTruth, geometry: ScanGeometry, chirp: ChirpParams,
                snr_db: float = 20.0) -> SphericalPointCloud:
    """Noise-free cloud with one point per true surface, binned to the nearest range bin."""
    p, t, s = np.nonzero(np.isfinite(truth.ranges))
    r = truth.ranges[p, t, s]
    bins = np.rint((r - chirp.range_offset_m) / chirp.range_resolution_m).astype(np.int64)
    order = np.lexsort((bins, t, p))
    p, t, s, bins = p[order], t[order], s[order], bins[order]
    return SphericalPointCloud(
        point_id=np.arange(bins.size), theta_index=t, phi_index=p, range_bin=bins,
        range_m=range_of_bin(bins, chirp), theta_deg=geometry.theta_of(t), phi_deg=geometry.phi_of(p),
        snr_db=np.full(bins.size, snr_db), kind=np.where(s == 0, SINGLE_MAX, MULTIPLE_ECHO),
        geometry=geometry, chirp=chirp)
