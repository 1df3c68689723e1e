"""Dataset generation and ingestion for the desk-scale harness.

Synthetic tasks (Gaussian blobs, two interleaved moons) are generated from
the toolkit RNG so runs are reproducible from a seed alone; image data is
read from the standard IDX byte format. All datasets are split 80/20 into
train/test by a seeded shuffle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import Rng

KIND_BLOBS = "blobs"
KIND_MOONS = "two-moons"
KIND_IDX = "idx-images"

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    """Dataset input is malformed."""


@dataclass(frozen=True)
class Dataset:
    """Train/test split with samples as rows."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]

    def split_hash(self) -> int:
        """Order-sensitive digest of the split, for determinism checks."""
        import zlib

        h = zlib.crc32(self.train_x.astype("<f8").tobytes())
        h = zlib.crc32(self.train_y.astype("<i8").tobytes(), h)
        h = zlib.crc32(self.test_x.astype("<f8").tobytes(), h)
        return zlib.crc32(self.test_y.astype("<i8").tobytes(), h)


def _split(x: np.ndarray, y: np.ndarray, rng: Rng, num_classes: int) -> Dataset:
    perm = rng.shuffled(x.shape[0])
    x, y = x[perm], y[perm]
    cut = int(round(0.8 * x.shape[0]))
    return Dataset(
        train_x=x[:cut], train_y=y[:cut],
        test_x=x[cut:], test_y=y[cut:],
        num_classes=num_classes,
    )


def make_blobs(rng: Rng, classes: int = 10, per_class: int = 500, dim: int = 32,
               center_scale: float = 1.0, noise: float = 1.0) -> Dataset:
    """Isotropic Gaussian clusters, one per class, balanced."""
    if classes < 2 or per_class < 2 or dim < 1:
        raise DataError("blobs need classes >= 2, per_class >= 2, dim >= 1")
    centers = center_scale * rng.gaussian(classes * dim).reshape(classes, dim)
    y = np.repeat(np.arange(classes), per_class)
    x = centers[y] + noise * rng.gaussian(y.size * dim).reshape(y.size, dim)
    return _split(x, y, rng, classes)


def make_two_moons(rng: Rng, per_class: int = 500, noise: float = 0.1) -> Dataset:
    """Two interleaved half circles in the plane."""
    if per_class < 2:
        raise DataError("two-moons need per_class >= 2")
    t = rng.uniform(2 * per_class) * np.pi
    x = np.empty((2 * per_class, 2))
    x[:per_class, 0] = np.cos(t[:per_class])
    x[:per_class, 1] = np.sin(t[:per_class])
    x[per_class:, 0] = 1.0 - np.cos(t[per_class:])
    x[per_class:, 1] = 0.5 - np.sin(t[per_class:])
    x += noise * rng.gaussian(4 * per_class).reshape(-1, 2)
    y = np.repeat(np.array([0, 1]), per_class)
    return _split(x, y, rng, 2)


def _read_idx(blob: bytes, path: str):
    if len(blob) < 4:
        raise DataError(f"{path}: truncated IDX header at offset {len(blob)}")
    magic = struct.unpack_from(">I", blob)[0]
    ndims = magic & 0xFF
    if magic >> 8 != 0x08 or ndims < 1:
        raise DataError(f"{path}: bad IDX magic 0x{magic:08x} at offset 0")
    header_end = 4 + 4 * ndims
    if len(blob) < header_end:
        raise DataError(f"{path}: truncated IDX dims at offset {len(blob)}")
    dims = struct.unpack_from(f">{ndims}I", blob, 4)
    expected = header_end + int(np.prod(dims))
    if len(blob) < expected:
        raise DataError(
            f"{path}: truncated IDX payload at offset {len(blob)} "
            f"(expected {expected} bytes)"
        )
    data = np.frombuffer(blob, dtype=np.uint8, count=int(np.prod(dims)),
                         offset=header_end)
    return magic, dims, data.reshape(dims)


def load_idx_images(images_path, labels_path, rng: Rng) -> Dataset:
    """Read an IDX image/label pair and split it."""
    with open(images_path, "rb") as fh:
        magic, dims, images = _read_idx(fh.read(), str(images_path))
    if magic != _IDX_IMAGES_MAGIC:
        raise DataError(f"{images_path}: expected image magic 0x{_IDX_IMAGES_MAGIC:08x}")
    with open(labels_path, "rb") as fh:
        lmagic, ldims, labels = _read_idx(fh.read(), str(labels_path))
    if lmagic != _IDX_LABELS_MAGIC:
        raise DataError(f"{labels_path}: expected label magic 0x{_IDX_LABELS_MAGIC:08x}")
    if dims[0] != ldims[0]:
        raise DataError(f"image/label count mismatch: {dims[0]} vs {ldims[0]}")
    x = images.reshape(dims[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return _split(x, y, rng, int(y.max()) + 1)


def make_dataset(kind: str, rng: Rng, **params) -> Dataset:
    """Dispatch on dataset kind; see the individual constructors."""
    if kind == KIND_BLOBS:
        return make_blobs(rng, **params)
    if kind == KIND_MOONS:
        return make_two_moons(rng, **params)
    if kind == KIND_IDX:
        return load_idx_images(params["images"], params["labels"], rng)
    raise DataError(f"unknown dataset kind {kind!r}")
