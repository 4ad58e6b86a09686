"""
Local Cartesian conversion, GCP-based rotation estimation and ECEF georeferencing.

Local frame: +y is boresight at zero azimuth and elevation, +x is positive
azimuth (clockwise seen from above), +z is up.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .clouds import CartesianPointCloud, SphericalPointCloud

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


class GeorefError(ValueError):
    pass


class InsufficientGcpError(GeorefError):
    pass


class DegenerateGeometryError(GeorefError):
    pass


class GcpFitError(RuntimeError):
    pass


class FrameError(ValueError):
    pass


def direction_vectors(theta_deg, phi_deg) -> np.ndarray:
    """Unit line-of-sight vectors for azimuth/elevation angles, shape (..., 3)."""
    t = np.radians(np.asarray(theta_deg, dtype=np.float64))
    p = np.radians(np.asarray(phi_deg, dtype=np.float64))
    return np.stack([np.cos(p) * np.sin(t), np.cos(p) * np.cos(t), np.sin(p)], axis=-1)


def spherical_to_xyz(range_m, theta_deg, phi_deg) -> np.ndarray:
    return np.asarray(range_m, dtype=np.float64)[..., None] * direction_vectors(theta_deg, phi_deg)


def xyz_to_spherical(xyz) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xyz = np.asarray(xyz, dtype=np.float64)
    r = np.linalg.norm(xyz, axis=-1)
    theta = np.degrees(np.arctan2(xyz[..., 0], xyz[..., 1]))
    phi = np.degrees(np.arcsin(np.clip(xyz[..., 2] / np.where(r > 0, r, 1.0), -1, 1)))
    return r, theta, phi


def spherical_to_cartesian(cloud: SphericalPointCloud) -> CartesianPointCloud:
    xyz = spherical_to_xyz(cloud.range_m, cloud.theta_deg, cloud.phi_deg)
    source = np.stack([cloud.theta_index, cloud.phi_index, cloud.range_bin], axis=1)
    return CartesianPointCloud(xyz, cloud.snr_db, cloud.kind, source, "radar_local", cloud.point_id)


def geodetic_to_ecef(lat_deg, lon_deg, h_m) -> np.ndarray:
    """WGS-84 geodetic coordinates to ECEF (m)."""
    lat = np.radians(np.asarray(lat_deg, dtype=np.float64))
    lon = np.radians(np.asarray(lon_deg, dtype=np.float64))
    h = np.asarray(h_m, dtype=np.float64)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * np.sin(lat) ** 2)
    x = (n + h) * np.cos(lat) * np.cos(lon)
    y = (n + h) * np.cos(lat) * np.sin(lon)
    z = (n * (1.0 - WGS84_E2) + h) * np.sin(lat)
    return np.stack([x, y, z], axis=-1)


def enu_to_ecef_rotation(lat_deg: float, lon_deg: float) -> np.ndarray:
    """Columns are the east, north and up unit vectors expressed in ECEF."""
    lat, lon = np.radians(lat_deg), np.radians(lon_deg)
    east = [-np.sin(lon), np.cos(lon), 0.0]
    north = [-np.sin(lat) * np.cos(lon), -np.sin(lat) * np.sin(lon), np.cos(lat)]
    up = [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)]
    return np.array([east, north, up]).T


@dataclass(frozen=True)
class Gcp:
    id: str
    theta_deg: float
    phi_deg: float
    slant_range_m: float
    ecef: tuple[float, float, float]

    def __post_init__(self):
        if not self.slant_range_m > 0:
            raise ValueError(f"GCP {self.id}: slant range must be positive")


@dataclass(frozen=True)
class GcpSet:
    gcps: tuple[Gcp, ...]
    radar_ecef: tuple[float, float, float]

    def __len__(self):
        return len(self.gcps)

    def subset(self, ids: Sequence[str]) -> "GcpSet":
        wanted = set(ids)
        return GcpSet(tuple(g for g in self.gcps if g.id in wanted), self.radar_ecef)

    def local_directions(self) -> np.ndarray:
        return direction_vectors([g.theta_deg for g in self.gcps], [g.phi_deg for g in self.gcps]).reshape(-1, 3)

    def geo_directions(self) -> np.ndarray:
        rel = np.array([g.ecef for g in self.gcps], dtype=np.float64).reshape(-1, 3) - np.asarray(self.radar_ecef)
        return rel / np.linalg.norm(rel, axis=1, keepdims=True)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    residual_rms: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be proper orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def apply(self, xyz) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
                "residual_rms": self.residual_rms}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.array(d["rotation"]), np.array(d["translation"]), float(d.get("residual_rms", 0.0)))


def rotation_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    """Angle of the relative rotation a^T b, in degrees."""
    m = np.asarray(a, dtype=np.float64).T @ np.asarray(b, dtype=np.float64)
    # atan2 form stays accurate for tiny angles, unlike arccos of the trace
    axis = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    return float(np.degrees(np.arctan2(np.linalg.norm(axis) / 2.0, (np.trace(m) - 1.0) / 2.0)))


def align_directions(local_dirs: np.ndarray, geo_dirs: np.ndarray) -> tuple[np.ndarray, float]:
    """Proper rotation R minimising sum |R l_i - g_i|^2 over unit vectors.

    SVD of the 3x3 covariance sum(l_i g_i^T) = U S V^T gives R = (U V^T)^T,
    with the third axis sign-flipped when that would otherwise be a reflection.
    """
    local_dirs = np.asarray(local_dirs, dtype=np.float64).reshape(-1, 3)
    geo_dirs = np.asarray(geo_dirs, dtype=np.float64).reshape(-1, 3)
    if local_dirs.shape[0] < 2:
        raise InsufficientGcpError("at least 2 GCPs are needed to fix a rotation")
    h = local_dirs.T @ geo_dirs
    u, s, vt = np.linalg.svd(h)
    if s[1] <= 1e-10 * max(s[0], 1e-300):
        raise DegenerateGeometryError("GCP directions are collinear")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    resid = local_dirs @ rot.T - geo_dirs
    return rot, float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))


def estimate_transform(gcps: GcpSet) -> RigidTransform:
    if len(gcps) < 2:
        raise InsufficientGcpError(f"{len(gcps)} GCP(s) given, at least 2 needed")
    rot, rms = align_directions(gcps.local_directions(), gcps.geo_directions())
    return RigidTransform(rot, np.asarray(gcps.radar_ecef, dtype=np.float64), rms)


def georeference(cloud: CartesianPointCloud, transform: RigidTransform) -> CartesianPointCloud:
    """p_geo = A + R_lg p_loc for every point."""
    if cloud.frame != "radar_local":
        raise FrameError(f"expected a radar_local cloud, got {cloud.frame}")
    return CartesianPointCloud(transform.apply(cloud.xyz), cloud.snr_db, cloud.kind, cloud.source,
                               "ecef", cloud.point_id)


def _gauss2d(params, tt, pp):
    amp, tc, pc, st, sp, off = params
    return amp * np.exp(-((tt - tc) ** 2 / (2 * st ** 2) + (pp - pc) ** 2 / (2 * sp ** 2))) + off


def fit_gcp_center(patch, thetas, phis, initial_guess: Optional[tuple[float, float]] = None,
                   max_iterations: int = 200) -> tuple[float, float]:
    """Centre (theta, phi) of a reflector from a 2D Gaussian fit.

    ``patch`` is indexed (phi, theta) in linear or dB units; ``thetas`` and
    ``phis`` are the patch axes in degrees.
    """
    z = np.asarray(patch, dtype=np.float64)
    thetas = np.asarray(thetas, dtype=np.float64)
    phis = np.asarray(phis, dtype=np.float64)
    if z.shape != (phis.size, thetas.size):
        raise ValueError("patch shape must be (len(phis), len(thetas))")
    tt, pp = np.meshgrid(thetas, phis)
    offset = float(np.median(z))
    amp = float(z.max() - offset)
    spread = float(np.ptp(z))
    if not amp > 1e-9 * max(1.0, abs(offset)) or spread == 0:
        raise GcpFitError("patch has no dominant peak")
    if initial_guess is None:
        i, j = np.unravel_index(np.argmax(z), z.shape)
        initial_guess = (thetas[j], phis[i])
    dt = np.ptp(thetas) or 1.0
    dp = np.ptp(phis) or 1.0
    x0 = [amp, initial_guess[0], initial_guess[1], dt / 6, dp / 6, offset]
    res = least_squares(lambda p: (_gauss2d(p, tt, pp) - z).ravel(), x0, max_nfev=max_iterations,
                        x_scale=[amp, dt, dp, dt, dp, max(abs(offset), amp)])
    if not res.success:
        raise GcpFitError(f"Gaussian fit did not converge: {res.message}")
    tc, pc = float(res.x[1]), float(res.x[2])
    if not (thetas.min() <= tc <= thetas.max() and phis.min() <= pc <= phis.max()):
        raise GcpFitError("fitted centre lies outside the patch")
    return tc, pc


GCP_COLUMNS = ("id", "theta_deg", "phi_deg", "slant_range_m", "ecef_x", "ecef_y", "ecef_z")


def read_gcp_csv(path, radar_ecef) -> GcpSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(GCP_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"GCP file missing columns: {sorted(missing)}")
        gcps = tuple(
            Gcp(row["id"], float(row["theta_deg"]), float(row["phi_deg"]), float(row["slant_range_m"]),
                (float(row["ecef_x"]), float(row["ecef_y"]), float(row["ecef_z"])))
            for row in reader
        )
    return GcpSet(gcps, tuple(float(v) for v in radar_ecef))


def write_gcp_csv(gcps: GcpSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(GCP_COLUMNS)
        for g in gcps.gcps:
            w.writerow([g.id, *(repr(float(v)) for v in (g.theta_deg, g.phi_deg, g.slant_range_m, *g.ecef))])
