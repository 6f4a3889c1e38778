"""
Tests for core.formats: PCF1 / FMF1 binary round trips and corruption
handling, text pose / contact / keypoint files and PGM images.
"""

import struct

import numpy as np
import pytest

from core.errors import FormatError
from core.formats import (
    read_contact,
    read_fmf,
    read_keypoints,
    read_pcf,
    read_pgm,
    read_pose,
    write_contact,
    write_fmf,
    write_keypoints,
    write_pcf,
    write_pgm,
    write_pose,
)
from core.geometry import CameraIntrinsics, PointCloud, look_at


@pytest.fixture
def cloud32(rng):
    pts = rng.uniform(-1, 1, size=(17, 3)).astype(np.float32).astype(np.float64)
    return PointCloud(pts, id="c")


class TestPcf:
    def test_round_trip_is_bit_exact(self, tmp_path, cloud32):
        path = tmp_path / "cloud.pcf"
        write_pcf(cloud32, path)
        again = read_pcf(path)
        np.testing.assert_array_equal(again.points, cloud32.points)
        assert again.id == "cloud"
        assert path.stat().st_size == 8 + 17 * 12

    def test_rewrite_is_byte_identical(self, tmp_path, cloud32):
        write_pcf(cloud32, tmp_path / "a.pcf")
        write_pcf(read_pcf(tmp_path / "a.pcf"), tmp_path / "b.pcf")
        assert (tmp_path / "a.pcf").read_bytes() == (tmp_path / "b.pcf").read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pcf"
        path.write_bytes(b"XXXX" + struct.pack("<I", 0))
        with pytest.raises(FormatError):
            read_pcf(path)

    def test_truncated(self, tmp_path, cloud32):
        path = tmp_path / "cut.pcf"
        write_pcf(cloud32, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            read_pcf(path)

    def test_trailing_bytes(self, tmp_path, cloud32):
        path = tmp_path / "long.pcf"
        write_pcf(cloud32, path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError):
            read_pcf(path)

    def test_non_finite_payload(self, tmp_path):
        path = tmp_path / "nan.pcf"
        path.write_bytes(b"PCF1" + struct.pack("<I", 1) + np.array([0, np.nan, 0], dtype="<f4").tobytes())
        with pytest.raises(FormatError):
            read_pcf(path)


class TestFmf:
    def make(self, rng):
        grid = rng.normal(size=(4, 4, 8)).astype(np.float32)
        return grid, look_at([0.0, -2.2, 1.0]), CameraIntrinsics.centered(32, 32.0)

    def test_round_trip(self, tmp_path, rng):
        grid, pose, intr = self.make(rng)
        write_fmf(tmp_path / "v.fmf", grid, pose, intr, 8)
        rec = read_fmf(tmp_path / "v.fmf")
        np.testing.assert_array_equal(rec.grid, grid)
        np.testing.assert_array_equal(rec.pose.matrix(), pose.matrix())
        assert rec.intr == intr
        assert rec.patch_size == 8

    def test_truncated_payload(self, tmp_path, rng):
        grid, pose, intr = self.make(rng)
        path = tmp_path / "v.fmf"
        write_fmf(path, grid, pose, intr, 8)
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(FormatError):
            read_fmf(path)

    def test_grid_larger_than_image(self, tmp_path, rng):
        grid, pose, intr = self.make(rng)
        path = tmp_path / "v.fmf"
        write_fmf(path, grid, pose, intr, 16)
        with pytest.raises(FormatError):
            read_fmf(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "v.fmf"
        path.write_bytes(b"PCF1" + bytes(200))
        with pytest.raises(FormatError):
            read_fmf(path)


class TestTextFiles:
    def test_pose_round_trip(self, tmp_path):
        pose = look_at([1.0, 2.0, 0.5])
        write_pose(pose, tmp_path / "p.txt")
        np.testing.assert_array_equal(read_pose(tmp_path / "p.txt").matrix(), pose.matrix())

    def test_pose_wrong_count(self, tmp_path):
        (tmp_path / "p.txt").write_text("1 0 0\n0 1 0\n")
        with pytest.raises(FormatError):
            read_pose(tmp_path / "p.txt")

    def test_pose_bad_bottom_row(self, tmp_path):
        mat = np.eye(4)
        mat[3, 0] = 1.0
        (tmp_path / "p.txt").write_text("\n".join(" ".join(map(str, r)) for r in mat))
        with pytest.raises(FormatError):
            read_pose(tmp_path / "p.txt")

    def test_contact_round_trip(self, tmp_path, rng):
        values = rng.uniform(0, 1, size=20)
        write_contact(values, tmp_path / "c.txt")
        np.testing.assert_array_equal(read_contact(tmp_path / "c.txt"), values)

    def test_contact_out_of_range(self, tmp_path):
        (tmp_path / "c.txt").write_text("0.5\n1.5\n")
        with pytest.raises(FormatError):
            read_contact(tmp_path / "c.txt")

    def test_keypoints_round_trip(self, tmp_path, rng):
        kp = rng.normal(size=(5, 3))
        write_keypoints(kp, tmp_path / "k.txt")
        np.testing.assert_array_equal(read_keypoints(tmp_path / "k.txt"), kp)

    def test_keypoints_malformed_line(self, tmp_path):
        (tmp_path / "k.txt").write_text("1 2 3\n4 5\n")
        with pytest.raises(FormatError):
            read_keypoints(tmp_path / "k.txt")


class TestPgm:
    def test_round_trip(self, tmp_path):
        img = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
        write_pgm(img, tmp_path / "i.pgm")
        np.testing.assert_array_equal(read_pgm(tmp_path / "i.pgm"), img)
        assert (tmp_path / "i.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")

    def test_float_image_is_scaled(self, tmp_path):
        write_pgm(np.array([[0.0, 0.5, 1.0]]), tmp_path / "f.pgm")
        assert read_pgm(tmp_path / "f.pgm").tolist() == [[0, 128, 255]]
