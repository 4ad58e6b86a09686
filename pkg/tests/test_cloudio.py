import numpy as np

from radcloud.cloudio import (read_ply, read_spherical_csv, read_xyz, write_grid_csv, write_ply,
                              write_spherical_csv, write_xyz)
from radcloud.clouds import CartesianPointCloud
from radcloud.georef import spherical_to_cartesian

from conftest import grid_scene_cloud


def sample_cartesian():
    cloud, _ = grid_scene_cloud(6, 5)
    return spherical_to_cartesian(cloud)


def test_xyz_round_trip(tmp_path):
    cart = sample_cartesian()
    write_xyz(cart, tmp_path / "c.xyz")
    back = read_xyz(tmp_path / "c.xyz")
    assert back.frame == "radar_local"
    assert np.allclose(back.xyz, cart.xyz, atol=1e-6)
    assert np.array_equal(back.kind, cart.kind)
    first = (tmp_path / "c.xyz").read_text().splitlines()[2].split()
    assert len(first) == 5


def test_ply_round_trip_is_exact(tmp_path):
    cart = sample_cartesian()
    write_ply(cart, tmp_path / "c.ply")
    back = read_ply(tmp_path / "c.ply")
    assert np.array_equal(back.xyz, cart.xyz)
    assert np.allclose(back.snr_db, cart.snr_db, atol=1e-5)
    assert (tmp_path / "c.ply").read_bytes().startswith(b"ply\nformat binary_little_endian 1.0\n")


def test_empty_cloud_exports(tmp_path):
    empty = CartesianPointCloud.from_xyz(np.empty((0, 3)), frame="ecef")
    write_xyz(empty, tmp_path / "e.xyz")
    write_ply(empty, tmp_path / "e.ply")
    assert len(read_xyz(tmp_path / "e.xyz")) == 0 and read_xyz(tmp_path / "e.xyz").frame == "ecef"
    assert len(read_ply(tmp_path / "e.ply")) == 0


def test_spherical_csv_round_trip(tmp_path):
    cloud, _ = grid_scene_cloud(6, 5)
    write_spherical_csv(cloud, tmp_path / "s.csv")
    back = read_spherical_csv(tmp_path / "s.csv")
    assert back.geometry == cloud.geometry and back.chirp == cloud.chirp
    for name, col in cloud.columns().items():
        assert np.array_equal(back.columns()[name], col), name


def test_grid_csv(tmp_path):
    write_grid_csv(np.array([[0.0, np.nan], [-3.0, 2.0]]), tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text() == "0,\n-3,2\n"
