"""2D Voronoi cells with areas and a rectangularity test."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import Voronoi, cKDTree

RIGHT_ANGLE_TOL = 1e-6  # rad
COLLAPSE_FRACTION = 1e-9  # of the smallest generator spacing


class VoronoiDegeneracyError(ValueError):
    """Fewer than three distinct generators, or all of them collinear."""


@dataclass(frozen=True)
class VoronoiCellInfo:
    point_index: int
    area: float  # inf for unbounded cells
    vertex_count: int
    is_rectangular: bool
    is_bounded: bool
    vertices: np.ndarray  # ordered polygon, shape (m, 2); empty when unbounded

    def extent(self, axis: int) -> float:
        if not self.is_bounded:
            return np.inf
        return float(np.ptp(self.vertices[:, axis]))


@dataclass
class VoronoiDiagram:
    generators: np.ndarray  # distinct generator positions (g, 2)
    inverse: np.ndarray  # input point -> generator index
    cells: list  # VoronoiCellInfo per generator (point_index = generator index)

    def cell_of(self, i: int) -> VoronoiCellInfo:
        return self.cells[self.inverse[i]]

    @property
    def areas(self) -> np.ndarray:
        return np.array([c.area for c in self.cells])

    @property
    def bounded(self) -> np.ndarray:
        return np.array([c.is_bounded for c in self.cells])

    @property
    def rectangular(self) -> np.ndarray:
        return np.array([c.is_rectangular for c in self.cells])


def polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def order_polygon(vertices: np.ndarray, tol: float) -> np.ndarray:
    """Sort convex-polygon vertices by angle and merge near-coincident neighbours."""
    c = vertices.mean(axis=0)
    ang = np.arctan2(vertices[:, 1] - c[1], vertices[:, 0] - c[0])
    v = vertices[np.argsort(ang)]
    keep = [v[0]]
    for p in v[1:]:
        if np.hypot(*(p - keep[-1])) > tol:
            keep.append(p)
    if len(keep) > 1 and np.hypot(*(keep[0] - keep[-1])) <= tol:
        keep.pop()
    return np.array(keep)


def is_rectangle(poly: np.ndarray) -> bool:
    if poly.shape[0] != 4:
        return False
    for i in range(4):
        a = poly[i - 1] - poly[i]
        b = poly[(i + 1) % 4] - poly[i]
        na, nb = np.hypot(*a), np.hypot(*b)
        if na == 0 or nb == 0:
            return False
        cosang = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
        if abs(np.arccos(cosang) - np.pi / 2) > RIGHT_ANGLE_TOL:
            return False
    return True


def build_voronoi(points, bounds: Optional[tuple[float, float, float, float]] = None) -> VoronoiDiagram:
    """Voronoi diagram of 2D points after merging exact duplicates.

    With ``bounds = (xmin, xmax, ymin, ymax)`` every cell is clipped to that
    box (generators are mirrored across its four sides), so all cells are
    bounded. Without bounds, hull cells are reported unbounded.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    gens, inverse = np.unique(pts, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if gens.shape[0] < 3:
        raise VoronoiDegeneracyError(f"{gens.shape[0]} distinct generator(s); need 3")
    origin = gens.mean(axis=0)
    local = gens - origin
    scale = np.abs(local).max(axis=0)
    scale[scale == 0] = 1.0
    if np.linalg.matrix_rank(local / scale, tol=1e-12) < 2:
        raise VoronoiDegeneracyError("generators are collinear")

    spacing = cKDTree(local).query(local, k=2)[0][:, 1].min()
    tol = COLLAPSE_FRACTION * spacing

    if bounds is not None:
        xmin, xmax, ymin, ymax = (b - o for b, o in zip(bounds, (origin[0], origin[0], origin[1], origin[1])))
        if (local[:, 0].min() <= xmin or local[:, 0].max() >= xmax
                or local[:, 1].min() <= ymin or local[:, 1].max() >= ymax):
            raise ValueError("generators must lie strictly inside the clipping box")
        mirrored = [local,
                    np.column_stack([2 * xmin - local[:, 0], local[:, 1]]),
                    np.column_stack([2 * xmax - local[:, 0], local[:, 1]]),
                    np.column_stack([local[:, 0], 2 * ymin - local[:, 1]]),
                    np.column_stack([local[:, 0], 2 * ymax - local[:, 1]])]
        vor = Voronoi(np.vstack(mirrored))
    else:
        vor = Voronoi(local)

    cells = []
    for g in range(gens.shape[0]):
        region = vor.regions[vor.point_region[g]]
        if len(region) == 0 or -1 in region:
            cells.append(VoronoiCellInfo(g, np.inf, len(region), False, False, np.empty((0, 2))))
            continue
        poly = order_polygon(vor.vertices[region], tol)
        if poly.shape[0] < 3:
            cells.append(VoronoiCellInfo(g, 0.0, poly.shape[0], False, True, poly + origin))
            continue
        cells.append(VoronoiCellInfo(g, polygon_area(poly), poly.shape[0], is_rectangle(poly), True, poly + origin))
    return VoronoiDiagram(gens, inverse, cells)


def voronoi_diagram(points_2d, bounds=None) -> list[VoronoiCellInfo]:
    """Cell information for every input point (duplicates share one cell)."""
    diagram = build_voronoi(points_2d, bounds)
    out = []
    for i, g in enumerate(diagram.inverse):
        c = diagram.cells[g]
        out.append(VoronoiCellInfo(i, c.area, c.vertex_count, c.is_rectangular, c.is_bounded, c.vertices))
    return out


def area_percentile_threshold(areas) -> tuple[Optional[int], Optional[float]]:
    """Percentile at which the area-percentile curve turns sharply upward.

    Percentiles 1..100 of the (finite) areas are differenced; the cut is the
    smallest percentile whose incoming step exceeds the mean step and is never
    undercut by any later step, ignoring the flat saturated tail where the
    curve has already reached its maximum. Returns ``(percentile, area)``
    where ``area`` is the curve value just before that step, so cells larger
    than ``area`` are candidates. ``(None, None)`` when no cut exists.
    """
    a = np.asarray(areas, dtype=np.float64)
    a = a[np.isfinite(a)]
    if a.size < 10:
        return None, None
    p = np.percentile(a, np.arange(1, 101))
    g = np.diff(p)  # g[i] is the step into percentile i + 2
    gmax = float(np.abs(g).max())
    if gmax == 0:
        return None, None
    eps = 1e-9 * gmax
    top = p[-1]
    mean_g = float(g.mean())
    live = p[:-1] < top - eps  # False once the curve has saturated
    for i in range(g.size):
        if g[i] <= mean_g + eps:
            continue
        later = g[i:][live[i:]]
        if np.all(later >= g[i] - eps):
            return i + 2, float(p[i])
    return None, None
