"""Point-cloud export: ASCII XYZ, binary PLY, spherical CSV and grid CSV."""

from __future__ import annotations

import csv
import json
import warnings

import numpy as np

from .clouds import CartesianPointCloud, SphericalPointCloud
from .datacube import ChirpParams, ScanGeometry

_SPH_COLUMNS = ("point_id", "theta_index", "phi_index", "range_bin", "range_m", "theta_deg",
                "phi_deg", "snr_db", "kind")
_PLY_DTYPE = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("snr", "<f4"), ("kind", "<i4")])


def write_xyz(cloud: CartesianPointCloud, path) -> None:
    """One ``x y z snr kind`` line per point after a commented frame header."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# frame={cloud.frame}\n# x y z snr kind\n")
        for (x, y, z), s, k in zip(cloud.xyz, cloud.snr_db, cloud.kind):
            fh.write(f"{x:.6f} {y:.6f} {z:.6f} {s:.4f} {int(k)}\n")


def read_xyz(path) -> CartesianPointCloud:
    frame = "radar_local"
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            if line.startswith("# frame="):
                frame = line.strip().split("=", 1)[1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty file
        data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size == 0:
        data = np.empty((0, 5))
    n = data.shape[0]
    return CartesianPointCloud(data[:, :3], data[:, 3], data[:, 4].astype(np.int64),
                               -np.ones((n, 3), dtype=np.int64), frame)


def write_ply(cloud: CartesianPointCloud, path) -> None:
    rec = np.empty(len(cloud), dtype=_PLY_DTYPE)
    rec["x"], rec["y"], rec["z"] = cloud.xyz.T
    rec["snr"] = cloud.snr_db
    rec["kind"] = cloud.kind
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"comment frame {cloud.frame}\n"
              f"element vertex {len(cloud)}\n"
              "property double x\nproperty double y\nproperty double z\n"
              "property float snr\nproperty int kind\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path) -> CartesianPointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.index(b"end_header\n") + len(b"end_header\n")
    frame, n = "radar_local", 0
    for line in blob[:end].decode("ascii").splitlines():
        if line.startswith("comment frame "):
            frame = line.split()[-1]
        elif line.startswith("element vertex "):
            n = int(line.split()[-1])
    rec = np.frombuffer(blob[end:], dtype=_PLY_DTYPE, count=n)
    xyz = np.column_stack([rec["x"], rec["y"], rec["z"]])
    return CartesianPointCloud(xyz, rec["snr"].astype(np.float64), rec["kind"].astype(np.int64),
                               -np.ones((n, 3), dtype=np.int64), frame)


def write_spherical_csv(cloud: SphericalPointCloud, path) -> None:
    """CSV with a leading ``#`` JSON line carrying geometry and chirp."""
    meta = {"geometry": cloud.geometry.to_dict(), "chirp": cloud.chirp.to_dict()}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_SPH_COLUMNS)
        cols = cloud.columns()
        for i in range(len(cloud)):
            w.writerow([repr(cols[c][i].item()) for c in _SPH_COLUMNS])


def read_spherical_csv(path) -> SphericalPointCloud:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing metadata line")
        meta = json.loads(first[2:])
        rows = list(csv.DictReader(fh))
    geometry = ScanGeometry.from_dict(meta["geometry"])
    chirp = ChirpParams.from_dict(meta["chirp"])
    cols = {c: np.array([float(r[c]) for r in rows]) for c in _SPH_COLUMNS}
    return SphericalPointCloud.from_columns(geometry, chirp, **cols)


def write_grid_csv(grid: np.ndarray, path) -> None:
    """(phi, theta) grid, one elevation row per line; NaN written as empty."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(grid, dtype=np.float64):
            w.writerow(["" if not np.isfinite(v) else f"{v:g}" for v in row])
