"""
Radar data cube container, FMCW range mathematics and the PCUBE/1 file format.

The cube holds one SNR range profile (waveform) per scan position, indexed
``(phi_index, theta_index, range_bin)`` with range innermost.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8  # m/s

PCUBE_MAGIC = b"PCUBE/1\n"
PCUBE_VERSION = 1


class CubeFormatError(ValueError):
    """Raised for malformed, truncated or corrupted cube files."""


class EmptySelectionError(ValueError):
    """Raised when a noise-floor estimate is requested over no waveforms."""


@dataclass(frozen=True)
class ChirpParams:
    """FMCW chirp description.

    ``range_offset_m`` is a constant range calibration applied to every bin;
    it stands in for instrument-specific range autofocus and defaults to 0.
    """

    bandwidth_hz: float
    sweep_duration_s: float
    center_frequency_hz: float
    n_range_bins: int
    range_offset_m: float = 0.0

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth must be positive")
        if not self.sweep_duration_s > 0:
            raise ValueError("sweep duration must be positive")
        if not self.center_frequency_hz > 0:
            raise ValueError("center frequency must be positive")
        if int(self.n_range_bins) != self.n_range_bins or self.n_range_bins < 2:
            raise ValueError("n_range_bins must be an integer >= 2")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.center_frequency_hz

    @property
    def range_resolution_m(self) -> float:
        return range_resolution(self.bandwidth_hz)

    @property
    def max_range_m(self) -> float:
        return max_range(self.bandwidth_hz, self.n_range_bins)

    def to_dict(self) -> dict:
        return {
            "bandwidth_hz": self.bandwidth_hz,
            "sweep_duration_s": self.sweep_duration_s,
            "center_frequency_hz": self.center_frequency_hz,
            "n_range_bins": int(self.n_range_bins),
            "range_offset_m": self.range_offset_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChirpParams":
        return cls(
            bandwidth_hz=float(d["bandwidth_hz"]),
            sweep_duration_s=float(d["sweep_duration_s"]),
            center_frequency_hz=float(d["center_frequency_hz"]),
            n_range_bins=int(d["n_range_bins"]),
            range_offset_m=float(d.get("range_offset_m", 0.0)),
        )


@dataclass(frozen=True)
class ScanGeometry:
    """Regular azimuth/elevation scan grid plus two-way beamwidths (degrees)."""

    theta_start: float
    theta_step: float
    theta_count: int
    phi_start: float
    phi_step: float
    phi_count: int
    beamwidth_theta: float
    beamwidth_phi: float

    def __post_init__(self):
        if not (self.theta_step > 0 and self.phi_step > 0):
            raise ValueError("angular steps must be positive")
        if not (self.beamwidth_theta > 0 and self.beamwidth_phi > 0):
            raise ValueError("beamwidths must be positive")
        if self.theta_count < 1 or self.phi_count < 1:
            raise ValueError("grid counts must be >= 1")
        ratios = (self.beamwidth_theta / self.theta_step, self.beamwidth_phi / self.phi_step)
        if not all(np.isfinite(ratios)):
            raise ValueError("beamwidth/step ratios must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.phi_count, self.theta_count)

    @property
    def thetas(self) -> np.ndarray:
        return self.theta_start + self.theta_step * np.arange(self.theta_count)

    @property
    def phis(self) -> np.ndarray:
        return self.phi_start + self.phi_step * np.arange(self.phi_count)

    def theta_of(self, index):
        return self.theta_start + self.theta_step * np.asarray(index)

    def phi_of(self, index):
        return self.phi_start + self.phi_step * np.asarray(index)

    def contains(self, theta_index: int, phi_index: int) -> bool:
        return 0 <= theta_index < self.theta_count and 0 <= phi_index < self.phi_count

    def to_dict(self) -> dict:
        return {
            "theta_start": self.theta_start,
            "theta_step": self.theta_step,
            "theta_count": int(self.theta_count),
            "phi_start": self.phi_start,
            "phi_step": self.phi_step,
            "phi_count": int(self.phi_count),
            "beamwidth_theta": self.beamwidth_theta,
            "beamwidth_phi": self.beamwidth_phi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanGeometry":
        return cls(
            theta_start=float(d["theta_start"]),
            theta_step=float(d["theta_step"]),
            theta_count=int(d["theta_count"]),
            phi_start=float(d["phi_start"]),
            phi_step=float(d["phi_step"]),
            phi_count=int(d["phi_count"]),
            beamwidth_theta=float(d["beamwidth_theta"]),
            beamwidth_phi=float(d["beamwidth_phi"]),
        )


@dataclass(frozen=True, eq=False)
class DataCube:
    """SNR (dB) on a regular (phi, theta, range) grid.

    Treat as immutable: the array is marked read-only on construction.
    """

    snr: np.ndarray
    geometry: ScanGeometry
    chirp: ChirpParams
    timestamps: Optional[np.ndarray] = None
    radar_origin_ecef: Optional[tuple[float, float, float]] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        snr = np.asarray(self.snr)
        if snr.dtype not in (np.float32, np.float64):
            snr = snr.astype(np.float64)
        expected = (self.geometry.phi_count, self.geometry.theta_count, self.chirp.n_range_bins)
        if snr.shape != expected:
            raise ValueError(f"cube shape {snr.shape} does not match geometry/chirp {expected}")
        if not np.all(np.isfinite(snr)):
            raise ValueError("cube contains non-finite SNR values")
        snr = snr.view()
        snr.flags.writeable = False
        object.__setattr__(self, "snr", snr)
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.float64)
            if ts.shape != self.geometry.shape:
                raise ValueError("timestamps must have shape (phi_count, theta_count)")
            object.__setattr__(self, "timestamps", ts)
        if self.radar_origin_ecef is not None:
            object.__setattr__(self, "radar_origin_ecef", tuple(float(v) for v in self.radar_origin_ecef))

    @property
    def n_range_bins(self) -> int:
        return self.snr.shape[-1]

    def waveform(self, theta_index: int, phi_index: int) -> np.ndarray:
        if not self.geometry.contains(theta_index, phi_index):
            raise IndexError(f"scan position ({theta_index}, {phi_index}) outside grid")
        return self.snr[phi_index, theta_index]

    def with_snr(self, snr: np.ndarray) -> "DataCube":
        return DataCube(snr, self.geometry, self.chirp, self.timestamps, self.radar_origin_ecef, dict(self.metadata))


@dataclass(frozen=True)
class NoiseFloorEstimate:
    per_bin_power_db: np.ndarray
    method: str  # "sky_average" | "elevation_row_average"

    def __post_init__(self):
        arr = np.asarray(self.per_bin_power_db, dtype=np.float64)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise ValueError("noise floor must be a finite 1D array")
        if self.method not in ("sky_average", "elevation_row_average"):
            raise ValueError(f"unknown noise-floor method {self.method!r}")
        object.__setattr__(self, "per_bin_power_db", arr)


# --- FMCW range maths ---------------------------------------------------------

def range_resolution(bandwidth_hz: float) -> float:
    return SPEED_OF_LIGHT / (2.0 * bandwidth_hz)


def max_range(bandwidth_hz: float, n_range_bins: int) -> float:
    return n_range_bins * SPEED_OF_LIGHT / (2.0 * bandwidth_hz)


def range_of_bin(bin_index, chirp: ChirpParams):
    """Range (m) of one or more range bins."""
    idx = np.asarray(bin_index)
    if np.any(idx < 0) or np.any(idx >= chirp.n_range_bins):
        raise IndexError(f"range bin outside [0, {chirp.n_range_bins})")
    r = idx * chirp.range_resolution_m + chirp.range_offset_m
    return float(r) if np.ndim(r) == 0 else r


def range_of_beat_frequency(f_if_hz, chirp: ChirpParams):
    """R = f_IF * c * T_s / (2 B), with T_s the chirp sweep duration."""
    return np.asarray(f_if_hz) * SPEED_OF_LIGHT * chirp.sweep_duration_s / (2.0 * chirp.bandwidth_hz)


def blackman(n: int) -> np.ndarray:
    """Periodic Blackman taper with coefficients 0.42 / 0.5 / 0.08."""
    k = np.arange(n)
    return 0.42 - 0.5 * np.cos(2 * np.pi * k / n) + 0.08 * np.cos(4 * np.pi * k / n)


def spectrum_from_timeseries(t_if, n_range_bins: int, window: str = "blackman") -> np.ndarray:
    """Single-sided magnitude spectrum of an IF time series.

    The series (last axis) must hold ``2 * n_range_bins`` samples; the result
    keeps bins ``0 .. n_range_bins - 1`` and is normalised by the window sum
    so a unit-amplitude tone centred on a bin peaks at 0.5.
    """
    x = np.asarray(t_if, dtype=np.float64)
    if x.shape[-1] != 2 * n_range_bins:
        raise ValueError(f"time series length {x.shape[-1]} != 2 * {n_range_bins}")
    if window == "blackman":
        w = blackman(x.shape[-1])
    elif window == "none":
        w = np.ones(x.shape[-1])
    else:
        raise ValueError(f"unknown window {window!r}")
    spec = np.fft.rfft(x * w, axis=-1)[..., :n_range_bins]
    return np.abs(spec) / w.sum()


# --- noise floor --------------------------------------------------------------

def db_to_power(db):
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 10.0)


def power_to_db(p):
    return 10.0 * np.log10(p)


def estimate_noise_floor(cube: DataCube, method: str, elevation_row: Optional[int] = None,
                         sky_mask: Optional[np.ndarray] = None,
                         exclude_bins: Optional[np.ndarray] = None) -> NoiseFloorEstimate:
    """Non-coherent (linear power) average of designated waveforms.

    ``sky_average`` uses ``sky_mask`` (bool, shape (phi_count, theta_count));
    ``elevation_row_average`` uses every waveform in ``elevation_row``.
    ``exclude_bins`` marks terrain bins to drop; they are filled by linear
    interpolation of the remaining floor.
    """
    if method == "sky_average":
        if sky_mask is None:
            raise EmptySelectionError("sky_average needs a sky mask")
        mask = np.asarray(sky_mask, dtype=bool)
        if mask.shape != cube.geometry.shape:
            raise ValueError("sky mask shape must be (phi_count, theta_count)")
        selected = cube.snr[mask]
    elif method == "elevation_row_average":
        if elevation_row is None or not 0 <= elevation_row < cube.geometry.phi_count:
            raise IndexError("elevation_row_average needs a valid elevation row")
        selected = cube.snr[elevation_row]
    else:
        raise ValueError(f"unknown noise-floor method {method!r}")
    if selected.shape[0] == 0:
        raise EmptySelectionError("no waveforms selected for noise-floor estimate")

    floor = power_to_db(db_to_power(selected).mean(axis=0))
    if exclude_bins is not None:
        keep = ~np.asarray(exclude_bins, dtype=bool)
        if not keep.any():
            raise EmptySelectionError("every range bin excluded")
        bins = np.arange(floor.size)
        floor = np.interp(bins, bins[keep], floor[keep])
    return NoiseFloorEstimate(floor, method)


def subtract_noise_floor(cube_power: DataCube, floor: NoiseFloorEstimate) -> DataCube:
    """Received power (dB) minus the per-bin noise floor gives SNR (dB)."""
    if floor.per_bin_power_db.shape[0] != cube_power.n_range_bins:
        raise ValueError("noise floor length does not match cube range dimension")
    snr = np.asarray(cube_power.snr, dtype=np.float64) - floor.per_bin_power_db
    return cube_power.with_snr(snr)


# --- PCUBE/1 ------------------------------------------------------------------

def _header(cube: DataCube) -> dict:
    return {
        "format": "PCUBE",
        "version": PCUBE_VERSION,
        "axis_order": ["phi", "theta", "range"],
        "units": {"snr": "dB", "angles": "deg", "range": "m"},
        "dtype": "<f4",
        "shape": list(cube.snr.shape),
        "geometry": cube.geometry.to_dict(),
        "chirp": cube.chirp.to_dict(),
        "timestamps": None if cube.timestamps is None else cube.timestamps.tolist(),
        "radar_origin_ecef": None if cube.radar_origin_ecef is None else list(cube.radar_origin_ecef),
        "metadata": cube.metadata,
    }


def write_cube(cube: DataCube, path) -> None:
    """Write ``cube`` as PCUBE/1: JSON header line, magic, float32 payload, CRC32."""
    header = json.dumps(_header(cube), sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(cube.snr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\n")
        fh.write(PCUBE_MAGIC)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_cube(path) -> DataCube:
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n" + PCUBE_MAGIC)
    if sep < 0:
        raise CubeFormatError("missing PCUBE/1 header separator")
    try:
        header = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CubeFormatError(f"malformed header: {exc}") from exc
    if header.get("format") != "PCUBE" or header.get("version") != PCUBE_VERSION:
        raise CubeFormatError("not a PCUBE/1 file")
    try:
        geometry = ScanGeometry.from_dict(header["geometry"])
        chirp = ChirpParams.from_dict(header["chirp"])
        shape = tuple(int(v) for v in header["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CubeFormatError(f"malformed header: {exc}") from exc

    start = sep + 1 + len(PCUBE_MAGIC)
    n_bytes = 4 * int(np.prod(shape))
    body = raw[start:]
    if len(body) != n_bytes + 4:
        raise CubeFormatError(f"truncated payload: expected {n_bytes + 4} bytes, found {len(body)}")
    payload = body[:n_bytes]
    (crc,) = struct.unpack("<I", body[n_bytes:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CubeFormatError("payload checksum mismatch")
    snr = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    ts = header.get("timestamps")
    origin = header.get("radar_origin_ecef")
    return DataCube(
        snr=snr,
        geometry=geometry,
        chirp=chirp,
        timestamps=None if ts is None else np.asarray(ts, dtype=np.float64),
        radar_origin_ecef=None if origin is None else tuple(origin),
        metadata=header.get("metadata") or {},
    )


def payload_bytes(cube: DataCube) -> bytes:
    return np.ascontiguousarray(cube.snr, dtype="<f4").tobytes()
