import numpy as np
import pytest

from radcloud.datacube import ChirpParams, ScanGeometry
from radcloud.synth import SceneSpec, generate_scene

C = 2.99792458e8


def avtis_geometry(theta_count=24, phi_count=20):
    """0.33 x 0.35 deg two-way beam sampled every 0.045 / 0.05 deg."""
    return ScanGeometry(theta_start=-0.5, theta_step=0.045, theta_count=theta_count,
                        phi_start=-0.5, phi_step=0.05, phi_count=phi_count,
                        beamwidth_theta=0.33, beamwidth_phi=0.35)


def half_metre_chirp(n_bins=4096):
    return ChirpParams(bandwidth_hz=C / 2 / 0.5, sweep_duration_s=1e-3, center_frequency_hz=94e9,
                       n_range_bins=n_bins)


@pytest.fixture
def geometry():
    return avtis_geometry()


@pytest.fixture
def chirp():
    return half_metre_chirp()


@pytest.fixture
def plane_scene(geometry, chirp):
    spec = SceneSpec(geometry, chirp, "plane", {"distance_m": 1400.0}, seed=3)
    cube, truth = generate_scene(spec)
    return spec, cube, truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_scene_cloud(theta_count=20, phi_count=20, n_bins=4096, distance_m=1400.0):
    """Noise-free single-point cloud of a plane facing the radar, with its ground truth."""
    from radcloud.synth import GroundTruth, radar_transform, true_ranges, truth_cloud
    geom = avtis_geometry(theta_count, phi_count)
    chirp = half_metre_chirp(n_bins)
    spec = SceneSpec(geom, chirp, "plane", {"distance_m": distance_m})
    truth = GroundTruth(true_ranges(spec), radar_transform(spec))
    return truth_cloud(truth, geom, chirp), truth


GCP_DIRECTIONS = [(-35.0, -5.0), (0.0, 12.0), (35.0, -3.0), (-20.0, 8.0), (15.0, -10.0), (28.0, 6.0),
                  (-8.0, -12.0), (5.0, 3.0), (-30.0, 10.0), (22.0, 0.0), (-14.0, -2.0), (10.0, 14.0),
                  (-25.0, -9.0), (32.0, 9.0), (-3.0, 6.0), (18.0, -6.0), (-38.0, 2.0), (38.0, -12.0)]


def gcp_study_scene(n_gcps=7, theta_count=8, phi_count=8, distance_m=1400.0):
    """Noiseless GCP-study inputs: binned radar_local cloud, exact ECEF reference, GCPs, true transform."""
    from radcloud.clouds import CartesianPointCloud
    from radcloud.georef import Gcp, GcpSet, direction_vectors, spherical_to_cartesian
    cloud, truth = grid_scene_cloud(theta_count, phi_count, distance_m=distance_m)
    tf = truth.transform
    g = cloud.geometry
    tt, pp = np.meshgrid(g.thetas, g.phis)
    exact = truth.ranges[..., 0][..., None] * direction_vectors(tt, pp)
    ref = CartesianPointCloud.from_xyz(tf.apply(exact.reshape(-1, 3)), frame="ecef")
    gcps = []
    for i, (t, p) in enumerate(GCP_DIRECTIONS[:n_gcps]):
        r = 800.0 + 50.0 * i
        gcps.append(Gcp(f"G{i + 1}", t, p, r, tuple(float(v) for v in tf.apply(r * direction_vectors(t, p)))))
    return spherical_to_cartesian(cloud), ref, GcpSet(tuple(gcps), tuple(tf.translation)), tf


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    """Print and keep one PASS/FAIL line for an acceptance criterion."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
