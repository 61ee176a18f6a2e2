"""Point cloud container, ASCII parsers/writers, normals, downsampling."""

import numpy as np
import pytest

from stein_icp import (
    CloudParseError,
    InputError,
    PointCloud,
    Pose6D,
    estimate_normals,
    load_cloud,
    rotation_from_euler,
    transform_cloud,
    transform_points,
    voxel_downsample,
    write_cloud,
)


class TestPointCloudValidation:
    def test_accepts_plain_lists(self):
        c = PointCloud([[0, 0, 0], [1, 2, 3]])
        assert len(c) == 2
        assert c.points.dtype == np.float64

    def test_rejects_bad_shape(self):
        with pytest.raises(InputError):
            PointCloud(np.zeros((4, 2)))
        with pytest.raises(InputError):
            PointCloud(np.zeros(3))

    def test_rejects_empty(self):
        with pytest.raises(InputError):
            PointCloud(np.zeros((0, 3)))

    def test_rejects_non_finite(self):
        pts = np.zeros((2, 3))
        pts[1, 2] = np.nan
        with pytest.raises(InputError):
            PointCloud(pts)

    def test_normals_must_match_and_be_unit(self):
        pts = np.zeros((2, 3))
        with pytest.raises(InputError):
            PointCloud(pts, normals=np.zeros((3, 3)))
        with pytest.raises(InputError):
            PointCloud(pts, normals=np.full((2, 3), 0.5))

    def test_zero_normal_marker_allowed(self):
        nrm = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
        c = PointCloud(np.zeros((2, 3)) + [1, 2, 3], normals=nrm)
        np.testing.assert_array_equal(c.normals, nrm)


class TestTransformCloud:
    def test_points_match_transform_points(self, rng):
        pts = rng.uniform(-1, 1, (30, 3))
        pose = Pose6D(0.2, -0.1, 0.4, 0.3, -0.2, 0.9)
        moved = transform_cloud(PointCloud(pts), pose)
        np.testing.assert_allclose(moved.points, transform_points(pts, pose), atol=1e-15)

    def test_normals_rotate_without_translation(self, rng):
        pts = rng.uniform(-1, 1, (10, 3))
        nrm = rng.normal(size=(10, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        pose = Pose6D(5.0, -3.0, 2.0, 0.4, 0.1, -0.7)
        moved = transform_cloud(PointCloud(pts, nrm), pose)
        R = rotation_from_euler(0.4, 0.1, -0.7)
        np.testing.assert_allclose(moved.normals, nrm @ R.T, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(moved.normals, axis=1), 1.0, atol=1e-12)


class TestFileRoundtrip:
    @pytest.mark.parametrize("suffix,fmt", [(".ply", "ply"), (".pcd", "pcd"), (".csv", "xyz-csv")])
    @pytest.mark.parametrize("with_normals", [False, True])
    def test_write_load_bitwise(self, tmp_path, rng, suffix, fmt, with_normals):
        """Round-trip float formatting makes write -> load reproduce arrays
        bit for bit."""
        pts = rng.uniform(-5, 5, (23, 3))
        nrm = None
        if with_normals:
            nrm = rng.normal(size=(23, 3))
            nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        cloud = PointCloud(pts, nrm)
        path = tmp_path / f"cloud{suffix}"
        write_cloud(cloud, path)
        back = load_cloud(path)
        np.testing.assert_array_equal(back.points, cloud.points)
        if with_normals:
            np.testing.assert_array_equal(back.normals, cloud.normals)
        else:
            assert back.normals is None

    def test_explicit_format_overrides_suffix(self, tmp_path, rng):
        pts = rng.uniform(-1, 1, (5, 3))
        path = tmp_path / "cloud.dat"
        write_cloud(PointCloud(pts), path, format="xyz-csv")
        back = load_cloud(path, format="xyz-csv")
        np.testing.assert_array_equal(back.points, pts)

    def test_unknown_suffix_needs_format(self, tmp_path):
        with pytest.raises(InputError):
            load_cloud(tmp_path / "cloud.bin")

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_cloud(tmp_path / "nope.ply")


class TestPlyParser:
    def test_extra_properties_and_faces_skipped(self, tmp_path):
        text = "\n".join([
            "ply", "format ascii 1.0",
            "comment made by hand",
            "element vertex 2",
            "property float x", "property float y", "property float z",
            "property uchar red",
            "element face 1",
            "property list uchar int vertex_indices",
            "end_header",
            "1.0 2.0 3.0 255",
            "4.0 5.0 6.0 0",
            "3 0 1 0",
        ])
        path = tmp_path / "a.ply"
        path.write_text(text)
        cloud = load_cloud(path)
        np.testing.assert_allclose(cloud.points, [[1, 2, 3], [4, 5, 6]], atol=0)

    def test_normals_picked_up(self, tmp_path):
        text = "\n".join([
            "ply", "format ascii 1.0", "element vertex 1",
            "property float x", "property float y", "property float z",
            "property float nx", "property float ny", "property float nz",
            "end_header",
            "0.0 0.0 0.0 0.0 0.0 1.0",
        ])
        path = tmp_path / "n.ply"
        path.write_text(text)
        cloud = load_cloud(path)
        np.testing.assert_allclose(cloud.normals, [[0, 0, 1]], atol=0)

    @pytest.mark.parametrize("text,fragment", [
        ("not ply\nend_header\n", "magic"),
        ("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\n"
         "property float y\nproperty float z\nend_header\n0 0 0\n", "ascii"),
        ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
         "property float z\nend_header\n0 0 0\n", "promises"),
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
         "end_header\n0 0\n", "lacks property"),
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
         "property float z\n0 0 0\n", "end_header"),
    ])
    def test_malformed_headers(self, tmp_path, text, fragment):
        path = tmp_path / "bad.ply"
        path.write_text(text)
        with pytest.raises(CloudParseError, match=fragment):
            load_cloud(path)

    def test_bad_number_reports_line(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"
                        "property float y\nproperty float z\nend_header\n0 zero 0\n")
        with pytest.raises(CloudParseError, match=r"bad\.ply:8"):
            load_cloud(path)


class TestPcdParser:
    def test_reordered_fields_with_normals(self, tmp_path):
        text = "\n".join([
            "VERSION 0.7",
            "FIELDS normal_x normal_y normal_z x y z",
            "SIZE 8 8 8 8 8 8", "TYPE F F F F F F", "COUNT 1 1 1 1 1 1",
            "WIDTH 1", "HEIGHT 1", "POINTS 1", "DATA ascii",
            "0.0 1.0 0.0 7.0 8.0 9.0",
        ])
        path = tmp_path / "a.pcd"
        path.write_text(text)
        cloud = load_cloud(path)
        np.testing.assert_allclose(cloud.points, [[7, 8, 9]], atol=0)
        np.testing.assert_allclose(cloud.normals, [[0, 1, 0]], atol=0)

    @pytest.mark.parametrize("text,fragment", [
        ("FIELDS x y z\nPOINTS 1\n0 0 0\n", "DATA"),
        ("FIELDS x y\nDATA ascii\n0 0\n", "lacks"),
        ("FIELDS x y z\nPOINTS 2\nDATA ascii\n0 0 0\n", "promises"),
        ("FIELDS x y z\nDATA binary\n", "ascii"),
    ])
    def test_malformed(self, tmp_path, text, fragment):
        path = tmp_path / "bad.pcd"
        path.write_text(text)
        with pytest.raises(CloudParseError, match=fragment):
            load_cloud(path)


class TestXyzParser:
    def test_commas_whitespace_comments(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("# header comment\n1,2,3\n\n4 5 6\n")
        cloud = load_cloud(path)
        np.testing.assert_allclose(cloud.points, [[1, 2, 3], [4, 5, 6]], atol=0)

    def test_six_columns_are_normals(self, tmp_path):
        path = tmp_path / "a.xyz"
        path.write_text("1 2 3 0 0 1\n")
        cloud = load_cloud(path)
        np.testing.assert_allclose(cloud.normals, [[0, 0, 1]], atol=0)

    def test_wrong_width(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_text("1 2 3 4\n")
        with pytest.raises(CloudParseError, match="3 or 6"):
            load_cloud(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("# only comments\n")
        with pytest.raises(CloudParseError, match="no data"):
            load_cloud(path)

    def test_error_carries_line_number(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("1 2 3\nx y z\n")
        with pytest.raises(CloudParseError, match=r"a\.csv:2"):
            load_cloud(path)


class TestEstimateNormals:
    def test_plane_normals(self, rng):
        """Grid on z = 1 with the viewpoint at the origin: every normal is
        (0, 0, -1), the unit plane normal oriented toward the viewpoint."""
        xs, ys = np.meshgrid(np.linspace(0, 1, 12), np.linspace(0, 1, 12))
        pts = np.column_stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
        cloud = estimate_normals(PointCloud(pts), k=8)
        np.testing.assert_allclose(cloud.normals, np.tile([0.0, 0.0, -1.0], (len(cloud), 1)),
                                   atol=1e-9)

    def test_sphere_normals_point_inward(self, rng):
        u = rng.normal(size=(600, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        cloud = estimate_normals(PointCloud(u), k=10)
        # Viewpoint at the center: normals should be -radial within PCA noise.
        dots = np.einsum("ij,ij->i", cloud.normals, -u)
        assert np.all(dots > 0.9)
        assert dots.mean() > 0.99

    def test_collinear_neighborhood_gets_zero_normal(self):
        pts = np.column_stack([np.linspace(0, 1, 12), np.zeros(12), np.zeros(12)])
        cloud = estimate_normals(PointCloud(pts), k=4)
        np.testing.assert_array_equal(cloud.normals, np.zeros((12, 3)))

    def test_validation(self):
        pts = np.zeros((5, 3)) + np.arange(5)[:, None]
        with pytest.raises(InputError):
            estimate_normals(PointCloud(pts), k=2)
        with pytest.raises(InputError):
            estimate_normals(PointCloud(pts), k=6)


class TestVoxelDownsample:
    def test_centroids_exact(self):
        pts = np.array([
            [0.1, 0.1, 0.1], [0.3, 0.3, 0.3],   # cell (0,0,0)
            [1.2, 0.0, 0.0],                     # cell (1,0,0)
        ])
        out = voxel_downsample(PointCloud(pts), voxel=1.0)
        np.testing.assert_allclose(out.points,
                                   [[0.2, 0.2, 0.2], [1.2, 0.0, 0.0]], atol=1e-15)

    def test_order_independent(self, rng):
        pts = rng.uniform(0, 3, (200, 3))
        perm = rng.permutation(200)
        a = voxel_downsample(PointCloud(pts), 0.5)
        b = voxel_downsample(PointCloud(pts[perm]), 0.5)
        np.testing.assert_allclose(a.points, b.points, atol=1e-12)

    def test_single_cell(self, rng):
        pts = rng.uniform(0, 0.1, (10, 3))
        out = voxel_downsample(PointCloud(pts), 1.0)
        assert len(out) == 1
        np.testing.assert_allclose(out.points[0], pts.mean(axis=0), atol=1e-15)

    def test_validation(self):
        with pytest.raises(InputError):
            voxel_downsample(PointCloud([[0, 0, 0]]), 0.0)

    def test_normals_dropped(self, rng):
        pts = rng.uniform(0, 1, (20, 3))
        nrm = np.tile([0.0, 0.0, 1.0], (20, 1))
        out = voxel_downsample(PointCloud(pts, nrm), 0.5)
        assert out.normals is None
