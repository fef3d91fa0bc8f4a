"""Point-cloud container and file IO."""
import struct

import numpy as np
import pytest

from sdfit.clouds import PointCloud, load_cloud, save_cloud_xyz


def test_cloud_basic_properties():
    pts = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    cloud = PointCloud(pts)
    assert cloud.n == 3 and cloud.dim == 2
    assert cloud.normals is None
    moved = cloud.with_points(pts + 1.0)
    assert np.allclose(moved.points, pts + 1.0)
    assert cloud.points[0, 0] == 0.0  # original untouched


def test_cloud_rejects_bad_shapes():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 4)))  # only 2D/3D points make sense here
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), normals=np.zeros((2, 3)))


def test_cloud_rejects_nonfinite():
    pts = np.zeros((2, 3))
    pts[1, 1] = np.nan
    with pytest.raises(ValueError):
        PointCloud(pts)


def test_xyz_round_trip(tmp_path):
    pts = np.array([[0.25, -1.5, 3.0], [1e-17, 2.0, -4.25]])
    path = tmp_path / "cloud.xyz"
    save_cloud_xyz(path, PointCloud(pts))
    loaded = load_cloud(path)
    assert loaded.dim == 3
    assert np.array_equal(loaded.points, pts)  # %.17g is lossless for doubles


def test_xyz_with_normals_round_trip(tmp_path):
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    normals = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    path = tmp_path / "cloud.xyz"
    save_cloud_xyz(path, PointCloud(pts, normals=normals))
    loaded = load_cloud(path)
    assert loaded.normals is not None
    assert np.array_equal(loaded.normals, normals)


def test_xyz_two_column_is_2d(tmp_path):
    path = tmp_path / "flat.txt"
    path.write_text("0.0 1.0\n2.0 3.0\n")
    loaded = load_cloud(path)
    assert loaded.dim == 2 and loaded.n == 2


def test_ply_ascii(tmp_path):
    path = tmp_path / "cloud.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "end_header\n"
        "0 0 0 0 0 1\n0.5 0.25 -1 1 0 0\n"
    )
    cloud = load_cloud(path)
    assert cloud.n == 2 and cloud.dim == 3
    assert np.allclose(cloud.points[1], [0.5, 0.25, -1.0])
    assert np.allclose(cloud.normals[0], [0, 0, 1])


def test_ply_binary_little_endian(tmp_path):
    path = tmp_path / "cloud.ply"
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
    ).encode("ascii")
    body = struct.pack("<6f", 0.0, 0.5, 1.0, -1.0, 0.25, 2.0)
    path.write_bytes(header + body)
    cloud = load_cloud(path)
    assert cloud.n == 2
    assert np.allclose(cloud.points, [[0.0, 0.5, 1.0], [-1.0, 0.25, 2.0]])


def test_load_missing_file():
    with pytest.raises(FileNotFoundError):
        load_cloud("/nonexistent/cloud.xyz")


def test_load_unknown_extension(tmp_path):
    path = tmp_path / "cloud.stl"
    path.write_text("whatever")
    with pytest.raises(ValueError):
        load_cloud(path)
