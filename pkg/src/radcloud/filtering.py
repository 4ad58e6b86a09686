"""
Low-SNR removal (histogram trough) and iterative Voronoi spatial outlier removal.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np
from statsmodels.nonparametric.smoothers_lowess import lowess

from .clouds import MULTIPLE_ECHO, SphericalPointCloud
from .voronoi import VoronoiDegeneracyError, area_percentile_threshold, build_voronoi

logger = logging.getLogger(__name__)

HIST_BINS = 1000
LOWESS_SPAN_BINS = 50
MIN_SNR_POINTS = 100
MIN_VORONOI_POINTS = 10
GEOMETRIES = ("R_theta", "R_phi", "theta_phi")


class NoThresholdWarning(UserWarning):
    pass


@dataclass
class SnrHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    smoothed: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


@dataclass
class FilterReport:
    removed_low_snr: int = 0
    threshold_snr_db: float = float("-inf")
    voronoi_iterations: int = 0
    removed_per_iteration: list = field(default_factory=list)
    area_percentile_threshold: dict = field(default_factory=dict)  # geometry -> cut percentile of last pass
    converged: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["threshold_snr_db"] = None if not np.isfinite(self.threshold_snr_db) else float(self.threshold_snr_db)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def first_trough(smoothed: np.ndarray) -> Optional[int]:
    """Index where the gradient first turns from negative to positive, scanning upward.

    Flat stretches are skipped, so on a plateau the upper end is returned.
    """
    g = np.diff(np.asarray(smoothed, dtype=np.float64))
    tol = 1e-9 * max(float(np.abs(smoothed).max()), 1e-300)
    last = 0
    for i, gi in enumerate(g):
        s = 1 if gi > tol else (-1 if gi < -tol else 0)
        if s == 0:
            continue
        if s > 0 and last < 0:
            return i
        last = s
    return None


def snr_threshold(cloud: SphericalPointCloud, n_bins: int = HIST_BINS,
                  span_bins: int = LOWESS_SPAN_BINS) -> tuple[float, Optional[SnrHistogram]]:
    """SNR at the first trough of the lowess-smoothed SNR histogram.

    Returns ``-inf`` (and warns) when there are too few points, the histogram
    is degenerate or no trough exists.
    """
    snr = np.asarray(cloud.snr_db, dtype=np.float64)
    if snr.size < MIN_SNR_POINTS:
        warnings.warn(f"only {snr.size} points; SNR filter skipped", NoThresholdWarning, stacklevel=2)
        return float("-inf"), None
    lo, hi = float(snr.min()), float(snr.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        warnings.warn("degenerate SNR histogram; SNR filter skipped", NoThresholdWarning, stacklevel=2)
        return float("-inf"), None
    counts, edges = np.histogram(snr, bins=n_bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    smoothed = lowess(counts.astype(np.float64), centers, frac=span_bins / n_bins, it=0, delta=0.0,
                      return_sorted=False)
    hist = SnrHistogram(edges, counts, smoothed)
    i = first_trough(smoothed)
    if i is None:
        warnings.warn("no trough in SNR histogram; SNR filter skipped", NoThresholdWarning, stacklevel=2)
        return float("-inf"), hist
    return float(centers[i]), hist


def apply_snr_filter(cloud: SphericalPointCloud, threshold: float) -> tuple[SphericalPointCloud, int]:
    """Keep points with SNR >= threshold. Single-point clouds only."""
    if np.any(cloud.kind == MULTIPLE_ECHO):
        raise ValueError("SNR filtering applies to single-point clouds only")
    keep = cloud.snr_db >= threshold
    return cloud.subset(keep), int((~keep).sum())


@dataclass
class PassDetails:
    candidate: np.ndarray
    cond1: np.ndarray
    cond2a: np.ndarray
    cond2b: np.ndarray
    removed: np.ndarray
    cut_percentile: dict


def plane_coordinates(cloud: SphericalPointCloud) -> dict:
    """The three 2D projections in native units (m, deg) with their clipping boxes."""
    geom = cloud.geometry
    dr = cloud.chirp.range_resolution_m
    t_box = (geom.theta_start - geom.theta_step / 2, geom.theta_of(geom.theta_count - 1) + geom.theta_step / 2)
    p_box = (geom.phi_start - geom.phi_step / 2, geom.phi_of(geom.phi_count - 1) + geom.phi_step / 2)
    if len(cloud):
        r_box = (float(cloud.range_m.min()) - dr / 2, float(cloud.range_m.max()) + dr / 2)
    else:
        r_box = (0.0, dr)
    return {
        "R_theta": (np.column_stack([cloud.range_m, cloud.theta_deg]), (*r_box, *t_box)),
        "R_phi": (np.column_stack([cloud.range_m, cloud.phi_deg]), (*r_box, *p_box)),
        "theta_phi": (np.column_stack([cloud.theta_deg, cloud.phi_deg]), (*t_box, *p_box)),
    }


def _diagram(points, box):
    try:
        return build_voronoi(points, box)
    except VoronoiDegeneracyError:
        return None


def voronoi_pass_details(cloud: SphericalPointCloud, protected: Optional[np.ndarray] = None) -> PassDetails:
    n = len(cloud)
    dr = cloud.chirp.range_resolution_m
    planes = plane_coordinates(cloud)
    diagrams = {name: _diagram(*planes[name]) for name in GEOMETRIES}

    candidate = np.zeros(n, dtype=bool)
    cuts = {}
    for name, d in diagrams.items():
        if d is None:
            cuts[name] = None
            continue
        # every point contributes its cell's area, so stacked duplicates keep their weight
        areas = d.areas[d.inverse]
        bounded = d.bounded[d.inverse]
        cut, area_thr = area_percentile_threshold(areas[bounded])
        cuts[name] = cut
        if cut is not None:
            candidate |= bounded & (areas > area_thr)

    # condition 1: at most one grid-adjacent neighbour has a rectangular (theta, phi) cell
    tp = diagrams["theta_phi"]
    rect_at = {}
    if tp is not None:
        rect = tp.rectangular
        for i in range(n):
            rect_at[(int(cloud.theta_index[i]), int(cloud.phi_index[i]))] = bool(rect[tp.inverse[i]])
    cond1 = np.zeros(n, dtype=bool)
    for i in range(n):
        t, p = int(cloud.theta_index[i]), int(cloud.phi_index[i])
        n_rect = sum(rect_at.get(nb, False) for nb in ((t - 1, p), (t + 1, p), (t, p - 1), (t, p + 1)))
        cond1[i] = n_rect <= 1

    # condition 2a: (R, phi) cell wider than one range bin along R
    rp = diagrams["R_phi"]
    if rp is None:
        cond2a = np.ones(n, dtype=bool)
    else:
        width = np.array([c.extent(0) for c in rp.cells])
        cond2a = (width > dr * (1 + 1e-9))[rp.inverse]

    # condition 2b: alone in its (elevation index, range bin)
    keys = np.column_stack([cloud.phi_index, cloud.range_bin])
    _, inv, cnt = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    cond2b = cnt[inv.reshape(-1)] == 1

    removed = candidate & (cond1 | (cond2a & cond2b))
    if protected is not None:
        removed &= ~protected
    return PassDetails(candidate, cond1, cond2a, cond2b, removed, cuts)


def _protected_mask(cloud: SphericalPointCloud, protected: Optional[Iterable[int]]) -> Optional[np.ndarray]:
    if protected is None:
        return None
    ids = np.fromiter((int(i) for i in protected), dtype=np.int64)
    return np.isin(cloud.point_id, ids)


def voronoi_filter_pass(cloud: SphericalPointCloud, protected: Optional[Iterable[int]] = None,
                        return_details: bool = False):
    """One removal pass; clouds with fewer than 10 points are returned unchanged."""
    if len(cloud) < MIN_VORONOI_POINTS:
        return (cloud, 0, None) if return_details else (cloud, 0)
    details = voronoi_pass_details(cloud, _protected_mask(cloud, protected))
    out = cloud.subset(~details.removed)
    removed = int(details.removed.sum())
    return (out, removed, details) if return_details else (out, removed)


def voronoi_filter(cloud: SphericalPointCloud, protected: Optional[Iterable[int]] = None,
                   max_iterations: int = 100, report: Optional[FilterReport] = None):
    """Repeat removal passes until one removes nothing."""
    report = report or FilterReport()
    protected = None if protected is None else set(int(i) for i in protected)
    report.converged = False
    for _ in range(max_iterations):
        cloud, removed, details = voronoi_filter_pass(cloud, protected, return_details=True)
        report.voronoi_iterations += 1
        report.removed_per_iteration.append(removed)
        if details is not None:
            report.area_percentile_threshold = details.cut_percentile
        if removed == 0:
            report.converged = True
            break
    if not report.converged:
        warnings.warn(f"Voronoi filter did not converge in {max_iterations} passes", RuntimeWarning, stacklevel=2)
    return cloud, report


def protected_ids(multi: SphericalPointCloud, single_filtered: SphericalPointCloud) -> set:
    """Ids of multi-cloud points that coincide with a surviving single-cloud point."""
    single_keys = {tuple(k) for k in single_filtered.keys().tolist()}
    return {int(pid) for pid, k in zip(multi.point_id, multi.keys().tolist()) if tuple(k) in single_keys}
