"""
Beam-overlap neighbour sets and the surface statistics that gate waveform averaging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .datacube import ScanGeometry

# Guards floor() and the strict overlap inequality against float round-off
# (0.35 / 0.05 evaluates to 6.999...).
_RATIO_EPS = 1e-9


class InsufficientSupportError(ValueError):
    """Fewer than three points available for surface statistics."""


@dataclass(frozen=True)
class NeighborSet:
    center: tuple[int, int]
    members: tuple[tuple[int, int], ...]  # (theta_index, phi_index)

    def __len__(self):
        return len(self.members)

    def __contains__(self, item):
        return tuple(item) in self.members


@dataclass(frozen=True)
class SurfaceStats:
    rms_height: float
    rms_slope: float
    correlation_length: float  # +inf when the slope spread is zero
    n_points_used: int


def overlap_counts(geometry: ScanGeometry) -> tuple[int, int]:
    """Number of overlapping footprints across the beam: floor(beamwidth / step)."""
    def count(width, step):
        ratio = width / step
        return int(math.floor(ratio * (1 + _RATIO_EPS)))
    return count(geometry.beamwidth_theta, geometry.theta_step), count(geometry.beamwidth_phi, geometry.phi_step)


def neighbor_offsets(geometry: ScanGeometry) -> list[tuple[int, int]]:
    """Index offsets (d_theta, d_phi) of every waveform overlapping a footprint.

    Axis members reach +-N//2 steps; off-axis members must lie strictly inside
    half the circular beamwidth min(theta2, phi2).
    """
    n_t, n_p = overlap_counts(geometry)
    half_t, half_p = n_t // 2, n_p // 2
    radius = min(geometry.beamwidth_theta, geometry.beamwidth_phi) / 2.0
    reach_t = max(half_t, int(radius / geometry.theta_step) + 1)
    reach_p = max(half_p, int(radius / geometry.phi_step) + 1)
    offsets = []
    for dp in range(-reach_p, reach_p + 1):
        for dt in range(-reach_t, reach_t + 1):
            if dp == 0:
                keep = abs(dt) <= half_t
            elif dt == 0:
                keep = abs(dp) <= half_p
            else:
                d = math.hypot(dt * geometry.theta_step, dp * geometry.phi_step)
                keep = d < radius * (1 - _RATIO_EPS)
            if keep:
                offsets.append((dt, dp))
    if (0, 0) not in offsets:
        offsets.append((0, 0))
    return sorted(offsets, key=lambda o: (o[1], o[0]))


def neighbor_set(center: tuple[int, int], geometry: ScanGeometry) -> NeighborSet:
    ti, pi = center
    if not geometry.contains(ti, pi):
        raise IndexError(f"centre {center} outside the scan grid")
    members = tuple(
        (ti + dt, pi + dp) for dt, dp in neighbor_offsets(geometry) if geometry.contains(ti + dt, pi + dp)
    )
    return NeighborSet((ti, pi), members)


def neighbor_kernel(geometry: ScanGeometry) -> np.ndarray:
    """Boolean (phi, theta) footprint mask centred on the middle element."""
    offsets = neighbor_offsets(geometry)
    rt = max(abs(o[0]) for o in offsets)
    rp = max(abs(o[1]) for o in offsets)
    k = np.zeros((2 * rp + 1, 2 * rt + 1), dtype=bool)
    for dt, dp in offsets:
        k[dp + rp, dt + rt] = True
    return k


def decorrelation_length(range_m: float, beamwidth_deg: float, wavelength_m: float) -> float:
    """Fading decorrelation distance lambda / (2 R tan(beamwidth / 2))."""
    if not range_m > 0:
        raise ValueError("range must be positive")
    t = math.tan(math.radians(beamwidth_deg) / 2.0)
    if t <= 1e-12:
        return math.inf
    return wavelength_m / (2.0 * range_m * t)


def decorrelation_lengths(range_m: float, geometry: ScanGeometry, wavelength_m: float) -> tuple[float, float]:
    """(azimuth, elevation) decorrelation distances."""
    return (decorrelation_length(range_m, geometry.beamwidth_theta, wavelength_m),
            decorrelation_length(range_m, geometry.beamwidth_phi, wavelength_m))


def footprint_radius(range_m, beamwidth_deg: float):
    """Half the beam spot diameter, R tan(beamwidth / 2)."""
    return np.asarray(range_m) * math.tan(math.radians(beamwidth_deg) / 2.0)


def correlation_length(rms_height: float, rms_slope: float) -> float:
    if rms_slope <= 0:
        return math.inf
    return math.sqrt(2.0) * rms_height / rms_slope


def local_slopes(xyz: np.ndarray, k: int = 8, tree: cKDTree | None = None) -> np.ndarray:
    """Gradient magnitude of a least-squares plane z = a x + b y + c over each point's k nearest neighbours."""
    xyz = np.asarray(xyz, dtype=np.float64)
    n = xyz.shape[0]
    if n < 3:
        raise InsufficientSupportError("need at least 3 points for slopes")
    k = min(k, n)
    tree = tree or cKDTree(xyz)
    _, idx = tree.query(xyz, k=k)
    nb = xyz[idx]  # (n, k, 3)
    centred = nb - nb.mean(axis=1, keepdims=True)
    a = centred[..., :2]
    z = centred[..., 2]
    ata = np.einsum("nki,nkj->nij", a, a)
    atz = np.einsum("nki,nk->ni", a, z)
    # pinv handles neighbourhoods that are degenerate in x-y (vertical faces)
    coef = np.einsum("nij,nj->ni", np.linalg.pinv(ata), atz)
    return np.hypot(coef[:, 0], coef[:, 1])


class SurfaceStatsMap:
    """Precomputed slopes and spatial index for repeated surface_stats queries."""

    def __init__(self, xyz, k: int = 8):
        self.xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if self.xyz.shape[0] == 0:
            raise InsufficientSupportError("empty coarse cloud")
        self.tree = cKDTree(self.xyz)
        self.slopes = local_slopes(self.xyz, k, self.tree) if self.xyz.shape[0] >= 3 else None

    def query(self, point, radius: float) -> SurfaceStats:
        if not radius > 0:
            raise ValueError("radius must be positive")
        idx = self.tree.query_ball_point(np.asarray(point, dtype=np.float64), radius)
        if len(idx) < 3 or self.slopes is None:
            raise InsufficientSupportError(f"{len(idx)} point(s) within {radius} m")
        z = self.xyz[idx, 2]
        sigma_h = float(np.std(z))
        sigma_m = float(np.std(self.slopes[idx]))
        return SurfaceStats(sigma_h, sigma_m, correlation_length(sigma_h, sigma_m), len(idx))


def surface_stats(coarse_xyz, query_point, neighborhood_radius: float, k: int = 8) -> SurfaceStats:
    """RMS height, RMS slope and correlation length of the points around ``query_point``."""
    return SurfaceStatsMap(coarse_xyz, k).query(query_point, neighborhood_radius)
