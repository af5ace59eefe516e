"""Tests for cloud file parsing, the synthetic benchmark, and augmentation."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tensorcloud.data import (
    DataError,
    augment,
    load_cloud,
    load_labeled_dir,
    rotation_z,
    synth_shapes,
)
from tensorcloud.oracles import lambda_cov


class TestLoadCloud:
    def test_csv_two_points(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("1,0,0\n-1,0,0\n")
        cloud = load_cloud(str(p))
        assert cloud.shape == (3, 2)
        assert_allclose(cloud[:, 0], [1.0, 0.0, 0.0])

    def test_csv_header_skipped(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("x,y,z\n1,2,3\n4,5,6\n")
        assert load_cloud(str(p)).shape == (3, 2)

    def test_csv_crlf(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_bytes(b"1,2,3\r\n4,5,6\r\n")
        assert load_cloud(str(p)).shape == (3, 2)

    def test_malformed_line_names_line_number(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,0\n")
        with pytest.raises(DataError, match="line 1"):
            load_cloud(str(p))

    def test_later_bad_line(self, tmp_path):
        p = tmp_path / "bad2.csv"
        p.write_text("1,2,3\nx,y,z\n")
        with pytest.raises(DataError, match="line 2"):
            load_cloud(str(p))

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(DataError, match="no points"):
            load_cloud(str(p))

    def test_xyz_with_comments(self, tmp_path):
        p = tmp_path / "d.xyz"
        p.write_text("# a comment\n1 2 3\n\n4 5 6\n")
        cloud = load_cloud(str(p))
        assert cloud.shape == (3, 2)
        assert_allclose(cloud[:, 1], [4.0, 5.0, 6.0])

    def test_xyz_wrong_field_count(self, tmp_path):
        p = tmp_path / "e.xyz"
        p.write_text("1 2\n")
        with pytest.raises(DataError, match="line 1"):
            load_cloud(str(p))

    def test_points_kept_in_file_order(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("3,0,0\n1,0,0\n2,0,0\n")
        assert_allclose(load_cloud(str(p))[0], [3.0, 1.0, 2.0])


class TestLabeledDir:
    def test_round_trip(self, tmp_path):
        (tmp_path / "a.csv").write_text("1,0,0\n0,1,0\n0,0,1\n")
        (tmp_path / "b.xyz").write_text("1 1 1\n2 2 2\n")
        (tmp_path / "labels.csv").write_text("path,label\na.csv,0\nb.xyz,1\n")
        ds = load_labeled_dir(str(tmp_path))
        assert len(ds) == 2
        assert ds.num_classes == 2
        assert list(ds.labels) == [0, 1]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="labels.csv"):
            load_labeled_dir(str(tmp_path))

    def test_bad_label(self, tmp_path):
        (tmp_path / "a.csv").write_text("1,0,0\n")
        (tmp_path / "labels.csv").write_text("a.csv,zero\n")
        with pytest.raises(DataError, match="line 1"):
            load_labeled_dir(str(tmp_path))


class TestSynthShapes:
    def test_deterministic(self):
        a = synth_shapes(7, 3, 16)
        b = synth_shapes(7, 3, 16)
        assert all(np.array_equal(x, y) for x, y in zip(a.clouds, b.clouds))
        assert np.array_equal(a.labels, b.labels)

    def test_seed_changes_data(self):
        a = synth_shapes(7, 3, 16)
        b = synth_shapes(8, 3, 16)
        assert not np.array_equal(a.clouds[0], b.clouds[0])

    def test_labels_balanced(self):
        ds = synth_shapes(0, 5, 16)
        counts = np.bincount(ds.labels, minlength=4)
        assert list(counts) == [5, 5, 5, 5]

    def test_prolate_eigenvalue_ratio(self):
        ds = synth_shapes(1, 8, 256)
        ratios = []
        for cloud, label in zip(ds.clouds, ds.labels):
            if label == 1:
                lam = lambda_cov(cloud)
                ratios.append(lam.lam1 / lam.lam2)
        # squared axis ratio 9, within +-30% at 256 points
        assert all(9.0 * 0.7 <= r <= 9.0 * 1.3 for r in ratios)

    def test_rejects_tiny_clouds(self):
        with pytest.raises(DataError):
            synth_shapes(0, 1, 4)


class TestAugment:
    def test_none_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 5))
        assert_allclose(augment(x, "none", rng), x)

    def test_z_preserves_vertical_coordinates(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 8))
        out = augment(x, "z", rng)
        assert np.array_equal(out[2], x[2])

    def test_so3_preserves_pairwise_distances(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 6))
        out = augment(x, "so3", rng)
        for i in range(6):
            for j in range(6):
                d0 = np.linalg.norm(x[:, i] - x[:, j])
                d1 = np.linalg.norm(out[:, i] - out[:, j])
                assert abs(d0 - d1) <= 1e-12

    def test_so3_is_proper_rotation(self):
        rng = np.random.default_rng(3)
        x = np.eye(3)
        out = augment(x, "so3", rng)
        r = out @ np.linalg.inv(x)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-10)

    def test_rotation_z_matrix(self):
        r = rotation_z(np.pi / 2)
        assert_allclose(r @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)

    def test_unknown_protocol(self):
        with pytest.raises(ValueError):
            augment(np.zeros((3, 2)), "flip", np.random.default_rng(0))
