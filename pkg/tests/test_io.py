"""File formats: round trips are bit-exact, malformed files are rejected."""

import json

import numpy as np
import pytest

from inrtomo.io import (
    TiltSeries,
    manifest_path,
    read_tilt_series,
    read_volume,
    write_manifest,
    write_pgm,
    write_tilt_series,
    write_volume,
)


def make_series(m=4, n=8, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.random((m, n, n), dtype=np.float32)
    angles = np.linspace(-60, 60, m)
    return TiltSeries(images=images, angles_deg=angles, pixel_size_nm=2.5)


class TestTiltSeries:
    def test_round_trip_bit_exact(self, tmp_path):
        series = make_series()
        path = tmp_path / "stack.tilt"
        write_tilt_series(path, series)
        back = read_tilt_series(path)
        np.testing.assert_array_equal(back.images, series.images)
        np.testing.assert_array_equal(back.angles_deg, series.angles_deg)
        assert back.pixel_size_nm == series.pixel_size_nm

    def test_images_stored_float32(self, tmp_path):
        series = make_series()
        path = tmp_path / "stack.tilt"
        write_tilt_series(path, series)
        assert read_tilt_series(path).images.dtype == np.float32

    def test_angles_rad_property(self):
        series = make_series(m=3)
        np.testing.assert_allclose(series.angles_rad, np.deg2rad(series.angles_deg))

    def test_container_permits_rectangular_images(self, tmp_path):
        # The format stores height and width separately; squareness is an
        # algorithm requirement enforced at the reconstruction boundary.
        series = TiltSeries(
            images=np.arange(2 * 4 * 5, dtype=np.float32).reshape(2, 4, 5),
            angles_deg=np.array([0.0, 10.0]),
            pixel_size_nm=1.0,
        )
        path = tmp_path / "rect.tilt"
        write_tilt_series(path, series)
        np.testing.assert_array_equal(read_tilt_series(path).images, series.images)

    def test_rejects_angle_count_mismatch(self):
        with pytest.raises(ValueError):
            TiltSeries(
                images=np.zeros((2, 4, 4), dtype=np.float32),
                angles_deg=np.array([0.0]),
                pixel_size_nm=1.0,
            )

    def test_truncated_blob_reports_byte_counts(self, tmp_path):
        series = make_series(m=2, n=4)
        path = tmp_path / "stack.tilt"
        write_tilt_series(path, series)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        expected = 2 * 4 * 4 * 4
        with pytest.raises(ValueError, match=f"expected {expected} bytes, got {expected - 8}"):
            read_tilt_series(path)

    def test_wrong_format_tag_rejected(self, tmp_path):
        path = tmp_path / "stack.tilt"
        write_volume(path, np.zeros((4, 4, 4), dtype=np.float32))
        with pytest.raises(ValueError, match="format"):
            read_tilt_series(path)

    def test_garbage_header_rejected(self, tmp_path):
        path = tmp_path / "stack.tilt"
        path.write_bytes(b"\x00\x01\x02 not json\n1234")
        with pytest.raises(ValueError, match="header"):
            read_tilt_series(path)


class TestVolume:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        vol = rng.random((6, 6, 6), dtype=np.float32)
        path = tmp_path / "v.vol"
        write_volume(path, vol)
        np.testing.assert_array_equal(read_volume(path), vol)

    def test_z_major_layout_on_disk(self, tmp_path):
        vol = np.zeros((2, 2, 2), dtype=np.float32)
        vol[1, 0, 0] = 7.0  # second z-slice, first row/col
        path = tmp_path / "v.vol"
        write_volume(path, vol)
        raw = path.read_bytes()
        blob = raw.split(b"\n", 1)[1]
        flat = np.frombuffer(blob, dtype="<f4")
        assert flat[4] == 7.0

    def test_noncubic_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_volume(tmp_path / "v.vol", np.zeros((2, 3, 2), dtype=np.float32))


class TestManifest:
    def test_written_next_to_artifact(self, tmp_path):
        out = tmp_path / "result.vol"
        mpath = manifest_path(out)
        assert mpath == str(out) + ".manifest.json"
        write_manifest(mpath, "phantom", {"size": 64, "seed": 0})
        data = json.loads(open(mpath).read())
        assert data["command"] == "phantom"
        assert data["arguments"]["size"] == 64
        assert "versions" in data

    def test_deterministic_content(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_manifest(a, "noise", {"dose": 10.0})
        write_manifest(b, "noise", {"dose": 10.0})
        assert open(a).read() == open(b).read()


class TestPgm:
    def test_header_and_range(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 0.25]], dtype=np.float32)
        path = tmp_path / "slice.pgm"
        write_pgm(path, img)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 2\n255\n")
        pixels = np.frombuffer(raw[len(b"P5\n2 2\n255\n"):], dtype=np.uint8)
        assert pixels.min() == 0 and pixels.max() == 255

    def test_constant_image_does_not_divide_by_zero(self, tmp_path):
        path = tmp_path / "flat.pgm"
        write_pgm(path, np.full((3, 3), 0.7, dtype=np.float32))
        raw = path.read_bytes()
        pixels = np.frombuffer(raw.split(b"255\n", 1)[1], dtype=np.uint8)
        assert np.all(pixels == pixels[0])
