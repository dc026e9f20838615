"""File formats: tilt series, volumes, checkpoints, manifests.

Every binary format is one newline-terminated JSON header line followed by
a raw little-endian float32 blob, so files are self-describing and
round-trip bit-exactly.
"""

from __future__ import annotations

import json
import platform
from dataclasses import dataclass

import numpy as np

TILT_FORMAT = "tilt-series"
VOLUME_FORMAT = "volume"
FORMAT_VERSION = 1


@dataclass
class TiltSeries:
    """A stack of projection images with their nominal tilt angles.

    ``images`` is float32 of shape (num_images, height, width); angles are
    degrees. ``pixel_size_nm`` is optional acquisition metadata.
    """

    images: np.ndarray
    angles_deg: np.ndarray
    pixel_size_nm: float | None = None

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.angles_deg = np.asarray(self.angles_deg, dtype=np.float64)
        if self.images.ndim != 3:
            raise ValueError(f"images must be 3-D (M, H, W), got shape {self.images.shape}")
        if self.angles_deg.ndim != 1 or len(self.angles_deg) != len(self.images):
            raise ValueError(
                f"angles length {self.angles_deg.shape} does not match "
                f"{len(self.images)} images"
            )

    @property
    def angles_rad(self) -> np.ndarray:
        return np.deg2rad(self.angles_deg)

    def __len__(self) -> int:
        return len(self.images)


def write_blob_file(path, header: dict, arrays: list[np.ndarray]) -> None:
    """Write a JSON header line followed by the arrays as a <f4 blob."""
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_blob_file(path) -> tuple[dict, bytes]:
    """Read back (header, blob) from a file written by write_blob_file."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: malformed JSON header") from exc
        blob = fh.read()
    return header, blob


def write_tilt_series(path, series: TiltSeries) -> None:
    """Write a tilt series: header line + image-major row-major <f4 blob."""
    m, h, w = series.images.shape
    header = {
        "format": TILT_FORMAT,
        "version": FORMAT_VERSION,
        "width": w,
        "height": h,
        "num_images": m,
        "angles_deg": [float(a) for a in series.angles_deg],
        "pixel_size_nm": series.pixel_size_nm,
    }
    write_blob_file(path, header, [series.images])


def read_tilt_series(path) -> TiltSeries:
    """Read a tilt-series file, validating format, version and blob size."""
    header, blob = read_blob_file(path)
    if header.get("format") != TILT_FORMAT:
        raise ValueError(f"{path}: not a tilt series (format {header.get('format')!r})")
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')!r}")
    m, h, w = header["num_images"], header["height"], header["width"]
    angles = np.asarray(header["angles_deg"], dtype=np.float64)
    if len(angles) != m:
        raise ValueError(f"{path}: {len(angles)} angles for {m} images")
    expected = 4 * m * h * w
    if len(blob) != expected:
        raise ValueError(f"{path}: blob length mismatch, expected {expected} bytes, got {len(blob)}")
    images = np.frombuffer(blob, dtype="<f4").reshape(m, h, w).copy()
    return TiltSeries(images=images, angles_deg=angles, pixel_size_nm=header.get("pixel_size_nm"))


def write_volume(path, values: np.ndarray) -> None:
    """Write a cubic volume: header line + z-major (z, y, x) <f4 blob."""
    values = np.asarray(values)
    if values.ndim != 3 or len(set(values.shape)) != 1:
        raise ValueError(f"volume must be cubic 3-D, got shape {values.shape}")
    header = {"format": VOLUME_FORMAT, "version": FORMAT_VERSION, "dim": values.shape[0]}
    write_blob_file(path, header, [values])


def read_volume(path) -> np.ndarray:
    """Read a volume file; returns float32 array of shape (D, D, D)."""
    header, blob = read_blob_file(path)
    if header.get("format") != VOLUME_FORMAT:
        raise ValueError(f"{path}: not a volume (format {header.get('format')!r})")
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')!r}")
    d = header["dim"]
    expected = 4 * d * d * d
    if len(blob) != expected:
        raise ValueError(f"{path}: blob length mismatch, expected {expected} bytes, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f4").reshape(d, d, d).copy()


def write_manifest(path, command: str, arguments: dict) -> None:
    """Write a reproducibility manifest next to an output artifact.

    Records the subcommand, its fully-resolved arguments (seeds included)
    and library versions. Deliberately no timestamp, so reruns with equal
    inputs produce byte-identical manifests.
    """
    import scipy
    import torch

    from . import __version__

    manifest = {
        "command": command,
        "arguments": arguments,
        "versions": {
            "inrtomo": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "torch": torch.__version__,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def manifest_path(output_path) -> str:
    return f"{output_path}.manifest.json"


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D array as an 8-bit binary PGM, min-max normalized."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM output needs a 2-D image, got shape {image.shape}")
    lo, hi = float(image.min()), float(image.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    data = np.rint((image - lo) * scale).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
