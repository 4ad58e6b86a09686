"""
Point extraction from a data cube.

Each waveform is optionally replaced by the non-coherent mean of the
waveforms whose footprints overlap it, smoothed by a zero-phase moving
average, and then reduced to one point (range to maximum SNR) or to one
point per above-threshold echo region.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage, signal

from .beam import (InsufficientSupportError, SurfaceStats, SurfaceStatsMap, decorrelation_lengths,
                   footprint_radius, neighbor_kernel, neighbor_set)
from .clouds import MULTIPLE_ECHO, SINGLE_MAX, SphericalPointCloud
from .datacube import DataCube, db_to_power, power_to_db, range_of_bin
from .georef import spherical_to_xyz

logger = logging.getLogger(__name__)

GATING_MODES = ("auto", "force_on", "force_off")
_TINY = 1e-30


@dataclass(frozen=True)
class Waveform:
    snr_db: np.ndarray
    origin: tuple[int, int]  # (theta_index, phi_index)
    averaged_count: int = 1

    def __post_init__(self):
        if self.averaged_count < 1:
            raise ValueError("averaged_count must be >= 1")
        if not np.all(np.isfinite(self.snr_db)):
            raise ValueError("waveform has non-finite values")


@dataclass
class ExtractionDetails:
    """Per-waveform bookkeeping from an extraction run, arrays shaped (phi, theta)."""

    averaged: np.ndarray
    averaged_count: np.ndarray
    correlation_length: np.ndarray
    decorrelation_length: np.ndarray
    smoothing_window: int


def average_waveform(cube: DataCube, center: tuple[int, int], stats: Optional[SurfaceStats],
                     decorrelation: float) -> Waveform:
    """Mean of the overlapping waveforms when L_c >= L_d, else the raw waveform.

    ``stats=None`` (insufficient support) counts as averaging enabled.
    """
    ti, pi = center
    raw = cube.waveform(ti, pi)
    lc = np.inf if stats is None else stats.correlation_length
    if lc < decorrelation:
        return Waveform(np.asarray(raw, dtype=np.float64), (ti, pi), 1)
    members = neighbor_set((ti, pi), cube.geometry).members
    lin = np.mean([db_to_power(cube.snr[p, t]) for t, p in members], axis=0)
    return Waveform(power_to_db(lin), (ti, pi), len(members))


def averaged_cube_power(cube: DataCube) -> tuple[np.ndarray, np.ndarray]:
    """Footprint-averaged linear power for every waveform, plus member counts."""
    kernel = neighbor_kernel(cube.geometry)
    lin = db_to_power(cube.snr)
    sums = ndimage.correlate(lin, kernel[:, :, None].astype(np.float64), mode="constant", cval=0.0)
    counts = ndimage.correlate(np.ones(cube.geometry.shape), kernel.astype(np.float64), mode="constant", cval=0.0)
    counts = np.rint(counts).astype(np.int64)
    return sums / counts[:, :, None], counts


def normalize_window(window_len: int) -> int:
    w = int(window_len)
    if w < 1:
        raise ValueError("window length must be >= 1")
    return w if w % 2 == 1 else w + 1


def lowpass_power(power: np.ndarray, window_len: int) -> np.ndarray:
    """Forward-backward moving average along the last axis with reflective padding."""
    w = normalize_window(window_len)
    power = np.asarray(power, dtype=np.float64)
    n = power.shape[-1]
    if w > n:
        raise ValueError(f"window {w} longer than waveform ({n} bins)")
    if w == 1:
        return power.copy()
    padlen = min(3 * w, n - 1)
    out = signal.filtfilt(np.ones(w) / w, [1.0], power, axis=-1, padtype="even", padlen=padlen)
    return np.maximum(out, _TINY)


def zero_phase_lowpass(w: Waveform, window_len: int) -> Waveform:
    """Zero-phase smoothing of a waveform, applied to linear power."""
    smoothed = lowpass_power(db_to_power(w.snr_db), window_len)
    return Waveform(power_to_db(smoothed), w.origin, w.averaged_count)


def echo_threshold(averaged_power: np.ndarray) -> np.ndarray:
    """mean + 2 std of the averaged waveform in linear power (per waveform)."""
    return averaged_power.mean(axis=-1) + 2.0 * averaged_power.std(axis=-1)


def echo_regions(smoothed_power: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Maximal runs [start, stop) where the smoothed waveform exceeds the threshold."""
    above = np.concatenate([[False], smoothed_power > threshold, [False]])
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def detect_echoes(averaged_power: np.ndarray, smoothed_power: np.ndarray) -> list[tuple[int, bool]]:
    """(peak bin, holds global maximum) for each above-threshold region, in range order."""
    thr = float(echo_threshold(averaged_power))
    gmax = int(np.argmax(smoothed_power))
    out = []
    for start, stop in echo_regions(smoothed_power, thr):
        peak = start + int(np.argmax(smoothed_power[start:stop]))
        out.append((peak, start <= gmax < stop))
    return out


def _grid_indices(cube: DataCube) -> tuple[np.ndarray, np.ndarray]:
    pi, ti = np.meshgrid(np.arange(cube.geometry.phi_count), np.arange(cube.geometry.theta_count), indexing="ij")
    return ti, pi


def default_window(cube: DataCube) -> int:
    return len(neighbor_kernel(cube.geometry).nonzero()[0])


def coarse_points(cube: DataCube, window_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Range-to-maximum on raw, smoothed waveforms: (bins, xyz) per scan position."""
    smoothed = lowpass_power(db_to_power(cube.snr), window_len)
    bins = np.argmax(smoothed, axis=-1)
    ti, pi = _grid_indices(cube)
    xyz = spherical_to_xyz(range_of_bin(bins, cube.chirp), cube.geometry.theta_of(ti), cube.geometry.phi_of(pi))
    return bins, xyz


def gating_mask(cube: DataCube, gating: str, window_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Which waveforms get averaged, with the L_c and L_d maps behind the decision."""
    shape = cube.geometry.shape
    if gating not in GATING_MODES:
        raise ValueError(f"unknown gating mode {gating!r}")
    lc = np.full(shape, np.nan)
    ld = np.full(shape, np.nan)
    if gating == "force_on":
        return np.ones(shape, dtype=bool), lc, ld
    if gating == "force_off":
        return np.zeros(shape, dtype=bool), lc, ld

    bins, xyz = coarse_points(cube, window_len)
    flat = xyz.reshape(-1, 3)
    try:
        stats_map = SurfaceStatsMap(flat)
    except InsufficientSupportError:
        return np.ones(shape, dtype=bool), lc, ld
    geom = cube.geometry
    lam = cube.chirp.wavelength_m
    mask = np.ones(shape, dtype=bool)
    for p in range(shape[0]):
        for t in range(shape[1]):
            r = float(np.linalg.norm(xyz[p, t]))
            if r <= 0:
                continue
            ld[p, t] = max(decorrelation_lengths(r, geom, lam))
            try:
                st = stats_map.query(xyz[p, t], float(footprint_radius(r, geom.beamwidth_theta)))
            except InsufficientSupportError:
                continue
            lc[p, t] = st.correlation_length
            mask[p, t] = st.correlation_length >= ld[p, t]
    return mask, lc, ld


def _prepare(cube: DataCube, gating: str, smoothing_window: Optional[int]):
    window = normalize_window(smoothing_window or default_window(cube))
    mask, lc, ld = gating_mask(cube, gating, window)
    raw = db_to_power(cube.snr)
    if mask.any():
        avg, counts = averaged_cube_power(cube)
        power = np.where(mask[:, :, None], avg, raw)
        counts = np.where(mask, counts, 1)
    else:
        power = raw
        counts = np.ones(cube.geometry.shape, dtype=np.int64)
    smoothed = lowpass_power(power, window)
    details = ExtractionDetails(mask, counts, lc, ld, window)
    return power, smoothed, details


def _cloud(cube, ti, pi, bins, snr, kind) -> SphericalPointCloud:
    geom = cube.geometry
    bins = np.asarray(bins, dtype=np.int64)
    cloud = SphericalPointCloud(
        point_id=np.arange(bins.size),
        theta_index=ti, phi_index=pi, range_bin=bins,
        range_m=range_of_bin(bins, cube.chirp) if bins.size else np.empty(0),
        theta_deg=geom.theta_of(ti), phi_deg=geom.phi_of(pi),
        snr_db=snr, kind=kind, geometry=geom, chirp=cube.chirp,
    )
    return cloud


def extract_single(cube: DataCube, gating: str = "auto", smoothing_window: Optional[int] = None,
                   return_details: bool = False):
    """One point per waveform at the maximum of the averaged, smoothed waveform.

    The reported SNR is the averaged (unsmoothed) waveform's value at that bin.
    """
    power, smoothed, details = _prepare(cube, gating, smoothing_window)
    bins = np.argmax(smoothed, axis=-1)
    snr = power_to_db(np.take_along_axis(power, bins[..., None], axis=-1)[..., 0])
    ti, pi = _grid_indices(cube)
    cloud = _cloud(cube, ti.ravel(), pi.ravel(), bins.ravel(), snr.ravel(),
                   np.full(bins.size, SINGLE_MAX))
    return (cloud, details) if return_details else cloud


def extract_multiple(cube: DataCube, gating: str = "auto", smoothing_window: Optional[int] = None,
                     return_details: bool = False):
    """One point per above-threshold echo region of each waveform."""
    power, smoothed, details = _prepare(cube, gating, smoothing_window)
    thr = echo_threshold(power)
    cols = {"t": [], "p": [], "b": [], "s": [], "k": []}
    n_phi, n_theta = cube.geometry.shape
    for p in range(n_phi):
        for t in range(n_theta):
            sm = smoothed[p, t]
            gmax = int(np.argmax(sm))
            for start, stop in echo_regions(sm, thr[p, t]):
                peak = start + int(np.argmax(sm[start:stop]))
                cols["t"].append(t)
                cols["p"].append(p)
                cols["b"].append(peak)
                cols["s"].append(power_to_db(power[p, t, peak]))
                cols["k"].append(SINGLE_MAX if start <= gmax < stop else MULTIPLE_ECHO)
    cloud = _cloud(cube, np.array(cols["t"], dtype=np.int64), np.array(cols["p"], dtype=np.int64),
                   np.array(cols["b"], dtype=np.int64), np.array(cols["s"]), np.array(cols["k"], dtype=np.int64))
    return (cloud, details) if return_details else cloud
