"""Point-cloud containers shared by extraction, filtering and georeferencing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .datacube import ChirpParams, ScanGeometry

SINGLE_MAX = 0
MULTIPLE_ECHO = 1
KIND_NAMES = {SINGLE_MAX: "single_max", MULTIPLE_ECHO: "multiple_echo"}


class SphericalPoint(NamedTuple):
    point_id: int
    theta_index: int
    phi_index: int
    range_bin: int
    range_m: float
    theta_deg: float
    phi_deg: float
    snr_db: float
    kind: int


_SPH_FIELDS = ("point_id", "theta_index", "phi_index", "range_bin", "range_m", "theta_deg",
               "phi_deg", "snr_db", "kind")
_INT_FIELDS = {"point_id", "theta_index", "phi_index", "range_bin", "kind"}


@dataclass(eq=False)
class SphericalPointCloud:
    """Column-oriented cloud of extracted points in scan coordinates."""

    point_id: np.ndarray
    theta_index: np.ndarray
    phi_index: np.ndarray
    range_bin: np.ndarray
    range_m: np.ndarray
    theta_deg: np.ndarray
    phi_deg: np.ndarray
    snr_db: np.ndarray
    kind: np.ndarray
    geometry: ScanGeometry
    chirp: ChirpParams

    def __post_init__(self):
        n = None
        for name in _SPH_FIELDS:
            dtype = np.int64 if name in _INT_FIELDS else np.float64
            arr = np.asarray(getattr(self, name), dtype=dtype).reshape(-1)
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValueError(f"column {name} has length {arr.size}, expected {n}")
            setattr(self, name, arr)

    @classmethod
    def empty(cls, geometry: ScanGeometry, chirp: ChirpParams) -> "SphericalPointCloud":
        return cls(*([np.empty(0)] * len(_SPH_FIELDS)), geometry=geometry, chirp=chirp)

    @classmethod
    def from_columns(cls, geometry, chirp, **cols) -> "SphericalPointCloud":
        return cls(**{k: cols[k] for k in _SPH_FIELDS}, geometry=geometry, chirp=chirp)

    def __len__(self) -> int:
        return self.point_id.size

    def __getitem__(self, i: int) -> SphericalPoint:
        return SphericalPoint(*(getattr(self, k)[i].item() for k in _SPH_FIELDS))

    def __iter__(self) -> Iterator[SphericalPoint]:
        for i in range(len(self)):
            yield self[i]

    def columns(self) -> dict:
        return {k: getattr(self, k) for k in _SPH_FIELDS}

    def subset(self, selector) -> "SphericalPointCloud":
        """Rows picked by a boolean mask or an index array."""
        return SphericalPointCloud(**{k: v[selector] for k, v in self.columns().items()},
                                   geometry=self.geometry, chirp=self.chirp)

    def concat(self, other: "SphericalPointCloud") -> "SphericalPointCloud":
        cols = {k: np.concatenate([getattr(self, k), getattr(other, k)]) for k in _SPH_FIELDS}
        return SphericalPointCloud(**cols, geometry=self.geometry, chirp=self.chirp)

    def sorted(self) -> "SphericalPointCloud":
        order = np.lexsort((self.range_bin, self.theta_index, self.phi_index))
        return self.subset(order)

    def keys(self) -> np.ndarray:
        """(phi_index, theta_index, range_bin) rows, used to match points across clouds."""
        return np.stack([self.phi_index, self.theta_index, self.range_bin], axis=1)


@dataclass(eq=False)
class CartesianPointCloud:
    """Cartesian points with carried attributes; ``frame`` is radar_local or ecef."""

    xyz: np.ndarray
    snr_db: np.ndarray
    kind: np.ndarray
    source: np.ndarray  # (n, 3) theta_index, phi_index, range_bin; -1 when unknown
    frame: str = "radar_local"
    point_id: np.ndarray = field(default=None)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = self.xyz.shape[0]
        self.snr_db = np.asarray(self.snr_db, dtype=np.float64).reshape(n)
        self.kind = np.asarray(self.kind, dtype=np.int64).reshape(n)
        self.source = np.asarray(self.source, dtype=np.int64).reshape(n, 3)
        if self.point_id is None:
            self.point_id = np.arange(n, dtype=np.int64)
        self.point_id = np.asarray(self.point_id, dtype=np.int64).reshape(n)
        if self.frame not in ("radar_local", "ecef"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("non-finite coordinates")

    @classmethod
    def from_xyz(cls, xyz, frame: str = "radar_local") -> "CartesianPointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        n = xyz.shape[0]
        return cls(xyz, np.zeros(n), np.zeros(n, dtype=np.int64), -np.ones((n, 3), dtype=np.int64), frame)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def subset(self, selector) -> "CartesianPointCloud":
        return CartesianPointCloud(self.xyz[selector], self.snr_db[selector], self.kind[selector],
                                   self.source[selector], self.frame, self.point_id[selector])
