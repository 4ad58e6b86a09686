"""Shared synthetic geometry for the experiment scripts."""

from radcloud.datacube import ChirpParams, ScanGeometry

C = 2.99792458e8


def avtis_geometry(theta_count=24, phi_count=20):
    return ScanGeometry(theta_start=-0.5, theta_step=0.045, theta_count=theta_count,
                        phi_start=-0.5, phi_step=0.05, phi_count=phi_count,
                        beamwidth_theta=0.33, beamwidth_phi=0.35)


def half_metre_chirp(n_bins=4096):
    return ChirpParams(bandwidth_hz=C / 2 / 0.5, sweep_duration_s=1e-3, center_frequency_hz=94e9,
                       n_range_bins=n_bins)
