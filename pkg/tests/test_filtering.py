import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radcloud.clouds import MULTIPLE_ECHO, SphericalPointCloud
from radcloud.datacube import range_of_bin
from radcloud.extraction import extract_multiple, extract_single
from radcloud.filtering import (FilterReport, NoThresholdWarning, apply_snr_filter, first_trough, protected_ids,
                                snr_threshold, voronoi_filter, voronoi_filter_pass, voronoi_pass_details)
from radcloud.synth import inject_outliers

from conftest import grid_scene_cloud
from oracles import oracle_fixed_point


def snr_cloud(snr, template):
    n = len(snr)
    z = np.zeros(n, dtype=np.int64)
    return SphericalPointCloud(np.arange(n), z, z, z, np.zeros(n), np.zeros(n), np.zeros(n), snr, z,
                               template.geometry, template.chirp)


@pytest.fixture(scope="module")
def grid():
    return grid_scene_cloud()


def averaged_noise_db(rng, n, looks=37):
    return 10 * np.log10(rng.standard_exponential((n, looks)).mean(axis=1) * 1.26)


def test_bimodal_threshold_in_valley(grid):
    cloud, _ = grid
    for seed in range(5):
        rng = np.random.default_rng(seed)
        noise = averaged_noise_db(rng, 10_000)
        terrain = rng.normal(15, 3, 10_000)
        thr, hist = snr_threshold(snr_cloud(np.r_[noise, terrain], cloud))
        assert noise.mean() < thr < terrain.mean()
        assert hist.counts.sum() == 20_000
        assert hist.bin_edges.size == 1001 and hist.smoothed.size == 1000


def test_unimodal_no_threshold(grid):
    from scipy.stats import norm
    cloud, _ = grid
    # dense-support unimodal histogram: normal quantiles truncated at +-2 sigma
    u = norm.cdf(-2) + (np.arange(20_000) + 0.5) / 20_000 * (1 - 2 * norm.cdf(-2))
    s = snr_cloud(norm.ppf(u, 10, 2), cloud)
    with pytest.warns(NoThresholdWarning):
        thr, _ = snr_threshold(s)
    assert thr == -np.inf
    out, removed = apply_snr_filter(s, thr)
    assert removed == 0 and len(out) == len(s)


def test_sparse_tail_trough_removes_only_the_tail(grid):
    cloud, _ = grid
    snr = np.random.default_rng(1).normal(10, 2, 20_000)
    thr, _ = snr_threshold(snr_cloud(snr, cloud))
    assert (snr < thr).mean() < 1e-3


def test_delta_modes_threshold_in_gap(grid):
    cloud, _ = grid
    snr = np.r_[np.full(500, 2.0), np.full(500, 12.0)]
    thr, hist = snr_threshold(snr_cloud(snr, cloud))
    assert 2.0 < thr < 12.0


def test_too_few_points_and_degenerate(grid):
    cloud, _ = grid
    with pytest.warns(NoThresholdWarning):
        assert snr_threshold(snr_cloud(np.arange(50.0), cloud))[0] == -np.inf
    with pytest.warns(NoThresholdWarning):
        assert snr_threshold(snr_cloud(np.full(500, 3.0), cloud))[0] == -np.inf


def test_first_trough_plateau_takes_upper_end():
    y = np.array([5, 4, 3, 3, 3, 4, 5.0])
    assert first_trough(y) == 4
    assert first_trough(np.array([1, 2, 3.0])) is None


def test_labelled_snr_separation(grid):
    cloud, _ = grid
    rng = np.random.default_rng(3)
    noise = rng.normal(0, 1, 8000)
    terrain = rng.normal(20, 1, 8000)
    c = snr_cloud(np.r_[noise, terrain], cloud)
    thr, _ = snr_threshold(c)
    out, removed = apply_snr_filter(c, thr)
    assert removed == 8000
    assert set(out.point_id.tolist()) == set(range(8000, 16000))


def test_snr_filter_identity_and_empty(grid):
    cloud, _ = grid
    out, removed = apply_snr_filter(cloud, -np.inf)
    assert removed == 0 and len(out) == len(cloud)
    empty = cloud.subset(np.zeros(len(cloud), bool))
    assert len(apply_snr_filter(empty, 3.0)[0]) == 0


def test_snr_filter_refuses_multiple_echo(grid):
    cloud, truth = grid
    c, _ = inject_outliers(cloud, 3, truth, seed=0)
    with pytest.raises(ValueError):
        apply_snr_filter(c, 0.0)


def test_clean_grid_untouched(grid):
    cloud, _ = grid
    out, report = voronoi_filter(cloud)
    assert len(out) == len(cloud)
    assert report.voronoi_iterations == 1 and report.removed_per_iteration == [0]
    assert report.converged


def test_interior_cells_rectangular(grid):
    cloud, _ = grid
    d = voronoi_pass_details(cloud)
    assert not d.cond1.any()


def test_injected_outliers_removed(grid):
    cloud, truth = grid
    for seed in range(5):
        noisy, ids = inject_outliers(cloud, 20, truth, seed=seed)
        assert len(noisy) == len(cloud) + 20
        out, report = voronoi_filter(noisy)
        kept = set(out.point_id.tolist())
        assert len(set(ids) - kept) >= 19
        assert set(cloud.point_id.tolist()) <= kept
        assert report.voronoi_iterations <= 4  # <= 3 removing passes plus the zero pass
        assert report.removed_per_iteration[-1] == 0


def test_shared_bin_protects_pair(grid):
    cloud, truth = grid
    dr = cloud.chirp.range_resolution_m
    g = cloud.geometry
    far_bin = 3900
    ti = np.array([3, 9, 15])
    pi = np.array([10, 10, 4])
    extra = SphericalPointCloud(
        point_id=[1000, 1001, 1002], theta_index=ti, phi_index=pi, range_bin=[far_bin, far_bin, 400],
        range_m=range_of_bin(np.array([far_bin, far_bin, 400]), cloud.chirp), theta_deg=g.theta_of(ti),
        phi_deg=g.phi_of(pi), snr_db=[20.0] * 3, kind=[MULTIPLE_ECHO] * 3, geometry=g, chirp=cloud.chirp)
    out, removed, d = voronoi_filter_pass(cloud.concat(extra), return_details=True)
    kept = set(out.point_id.tolist())
    assert 1000 in kept and 1001 in kept  # share (phi_index, bin)
    assert 1002 not in kept
    assert not d.cond2b[-3] and d.cond2b[-1]
    assert dr > 0


def test_protected_points_survive(plane_scene):
    _, cube, _ = plane_scene
    single = extract_single(cube)
    single_f, _ = voronoi_filter(apply_snr_filter(single, snr_threshold(single)[0])[0]) \
        if len(single) >= 100 else voronoi_filter(single)
    multi = extract_multiple(cube, smoothing_window=5)
    keep = protected_ids(multi, single_f)
    out, report = voronoi_filter(multi, protected=keep)
    assert keep <= set(out.point_id.tolist())


def nested_cluster_cloud(cloud, truth, seed):
    """Grid terrain + isolated outliers + a compact block of outliers around a common bin."""
    noisy, ids = inject_outliers(cloud, 12, truth, seed=seed)
    g = cloud.geometry
    rng = np.random.default_rng(seed)
    t0, p0 = int(rng.integers(2, 14)), int(rng.integers(2, 14))
    b0 = int(rng.integers(500, 1500))
    rows = [(t0 + dt, p0 + dp, b0 + dt + 2 * dp) for dt in range(3) for dp in range(3)]
    ti = np.array([r[0] for r in rows])
    pi = np.array([r[1] for r in rows])
    bi = np.array([r[2] for r in rows])
    start = int(noisy.point_id.max()) + 1
    block = SphericalPointCloud(
        point_id=np.arange(start, start + len(rows)), theta_index=ti, phi_index=pi, range_bin=bi,
        range_m=range_of_bin(bi, cloud.chirp), theta_deg=g.theta_of(ti), phi_deg=g.phi_of(pi),
        snr_db=np.full(len(rows), 10.0), kind=np.full(len(rows), MULTIPLE_ECHO), geometry=g, chirp=cloud.chirp)
    return noisy.concat(block), ids + block.point_id.tolist()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fixed_point_matches_oracle(grid, seed):
    cloud, truth = grid
    noisy, _ = nested_cluster_cloud(cloud, truth, seed)
    assert len(noisy) <= 500
    out, report = voronoi_filter(noisy)
    oracle_ids, oracle_iters = oracle_fixed_point(noisy)
    assert report.converged and report.voronoi_iterations <= 10
    assert set(out.point_id.tolist()) == oracle_ids
    assert report.voronoi_iterations == oracle_iters


def test_filter_properties(grid):
    cloud, truth = grid
    noisy, _ = inject_outliers(cloud, 20, truth, seed=11)
    keep = set(noisy.point_id[::7].tolist())
    out, report = voronoi_filter(noisy, protected=keep)
    before = {int(i): (r, t, p) for i, r, t, p in zip(noisy.point_id, noisy.range_m, noisy.theta_deg, noisy.phi_deg)}
    for i, r, t, p in zip(out.point_id, out.range_m, out.theta_deg, out.phi_deg):
        assert before[int(i)] == (r, t, p)
    assert keep <= set(out.point_id.tolist())
    again, rep2 = voronoi_filter(out, protected=keep)
    assert len(again) == len(out) and rep2.removed_per_iteration == [0]
    assert report.voronoi_iterations == len(report.removed_per_iteration)


def test_tiny_cloud_passes_through(grid):
    cloud, _ = grid
    small = cloud.subset(np.arange(9))
    out, removed = voronoi_filter_pass(small)
    assert removed == 0 and len(out) == 9


def test_iteration_cap_warns(grid):
    cloud, truth = grid
    noisy, _ = nested_cluster_cloud(cloud, truth, 0)
    with pytest.warns(RuntimeWarning):
        _, report = voronoi_filter(noisy, max_iterations=1)
    assert not report.converged


def test_report_json_round_trip():
    r = FilterReport(removed_low_snr=3, threshold_snr_db=4.5, voronoi_iterations=2, removed_per_iteration=[5, 0],
                     area_percentile_threshold={"R_theta": 97, "R_phi": None, "theta_phi": None})
    d = json.loads(r.to_json())
    assert d["removed_per_iteration"] == [5, 0] and d["threshold_snr_db"] == 4.5
    assert json.loads(FilterReport().to_json())["threshold_snr_db"] is None


@given(st.lists(st.floats(-20, 60, allow_nan=False), min_size=0, max_size=200), st.floats(-30, 70, allow_nan=False))
def test_snr_filter_is_set_selection(snr, threshold):
    template, _ = grid_scene_cloud(5, 4)
    cloud = snr_cloud(np.array(snr, dtype=float), template)
    out, removed = apply_snr_filter(cloud, threshold)
    keep = np.array(snr, dtype=float) >= threshold
    assert removed == len(cloud) - int(keep.sum())
    assert np.array_equal(out.point_id, cloud.point_id[keep])
    assert np.array_equal(out.snr_db, cloud.snr_db[keep])
