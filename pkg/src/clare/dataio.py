"""Dataset loading: IDX files (MNIST's format), plus a synthetic toy set.

IDX is the classic big-endian binary layout: two zero bytes, a type code,
a rank byte, ``rank`` u32 dimensions, then the raw payload. Gzipped files
are handled transparently by sniffing the two-byte gzip magic. Pixels are
scaled to [0, 1] float64 on load; labels become int64.

The toy generator drops Gaussian blobs on corners of ``[0.2, 0.8]^dim`` so
miniature end-to-end runs have a dataset that trains in seconds.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

IDX_TYPE_UBYTE = 0x08

_IDX_TYPE_SIZES = {
    0x08: 1,  # unsigned byte; the only payload MNIST uses
}

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IdxFormatError(ValueError):
    """The bytes do not form a valid IDX file; the message says where."""


@dataclass(frozen=True)
class IdxHeader:
    type_code: int
    dims: tuple[int, ...]


@dataclass
class LabeledDataset:
    """Flattened float64 images in [0, 1] with aligned int64 labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 2:
            raise ValueError(f"images must be 2-d, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not align with "
                f"{self.images.shape[0]} images"
            )

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    @cached_property
    def class_index(self) -> dict[int, np.ndarray]:
        """Row indices per class, ascending class order."""
        return {
            int(cls): np.flatnonzero(self.labels == cls)
            for cls in np.unique(self.labels)
        }

    def classes(self) -> list[int]:
        return sorted(self.class_index)

    def per_class_counts(self) -> dict[int, int]:
        return {cls: int(rows.size) for cls, rows in self.class_index.items()}


def parse_idx(data: bytes) -> tuple[IdxHeader, np.ndarray]:
    """Decode one IDX payload (gzipped or raw) into header plus array."""
    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except OSError as exc:
            raise IdxFormatError(f"gzip stream is corrupt: {exc}") from exc
    if len(data) < 4:
        raise IdxFormatError(f"file is {len(data)} bytes, too short for a magic number")
    if data[0] != 0 or data[1] != 0:
        raise IdxFormatError(
            f"bad magic bytes {data[0]:#04x} {data[1]:#04x} at offset 0, expected 00 00"
        )
    type_code = data[2]
    if type_code not in _IDX_TYPE_SIZES:
        raise IdxFormatError(f"unsupported type code {type_code:#04x} at offset 2")
    rank = data[3]
    header_end = 4 + 4 * rank
    if len(data) < header_end:
        raise IdxFormatError(
            f"file is {len(data)} bytes, too short for {rank} dimensions "
            f"(need {header_end})"
        )
    dims = struct.unpack(f">{rank}I", data[4:header_end])
    count = 1
    for d in dims:
        count *= d
    expected = header_end + count * _IDX_TYPE_SIZES[type_code]
    if len(data) != expected:
        raise IdxFormatError(
            f"payload truncated at offset {len(data)}: dims {dims} require "
            f"{expected} bytes"
        )
    array = np.frombuffer(data, dtype=np.uint8, count=count, offset=header_end)
    return IdxHeader(type_code=type_code, dims=dims), array.reshape(dims).copy()


def write_idx(array: np.ndarray) -> bytes:
    """Encode a uint8 array as IDX bytes; inverse of ``parse_idx``."""
    array = np.ascontiguousarray(array)
    if array.dtype != np.uint8:
        raise ValueError(f"IDX ubyte payload requires uint8 data, got {array.dtype}")
    if array.ndim > 255:
        raise ValueError(f"rank {array.ndim} does not fit the IDX header")
    header = bytes([0, 0, IDX_TYPE_UBYTE, array.ndim])
    header += struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.tobytes()


def _read_idx_file(path: str) -> tuple[IdxHeader, np.ndarray]:
    for candidate in (path, path + ".gz"):
        if os.path.exists(candidate):
            with open(candidate, "rb") as fh:
                return parse_idx(fh.read())
    raise FileNotFoundError(f"no such file: {path} (also tried {path}.gz)")


def _to_dataset(images_raw: np.ndarray, labels_raw: np.ndarray, what: str) -> LabeledDataset:
    if images_raw.ndim < 2:
        raise IdxFormatError(f"{what} images must have rank >= 2, got {images_raw.ndim}")
    if labels_raw.ndim != 1:
        raise IdxFormatError(f"{what} labels must have rank 1, got {labels_raw.ndim}")
    if images_raw.shape[0] != labels_raw.shape[0]:
        raise ValueError(
            f"{what}: {images_raw.shape[0]} images but {labels_raw.shape[0]} labels"
        )
    images = images_raw.reshape(images_raw.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(images=images, labels=labels_raw.astype(np.int64))


def load_mnist(data_dir: str) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the four standard IDX files (plain or .gz) from ``data_dir``."""
    _, train_x = _read_idx_file(os.path.join(data_dir, MNIST_FILES["train_images"]))
    _, train_y = _read_idx_file(os.path.join(data_dir, MNIST_FILES["train_labels"]))
    _, test_x = _read_idx_file(os.path.join(data_dir, MNIST_FILES["test_images"]))
    _, test_y = _read_idx_file(os.path.join(data_dir, MNIST_FILES["test_labels"]))
    return _to_dataset(train_x, train_y, "train"), _to_dataset(test_x, test_y, "test")


def subset_by_classes(dataset: LabeledDataset, class_ids: list[int]) -> LabeledDataset:
    """Rows whose label is in ``class_ids``, original order preserved."""
    wanted = set(int(c) for c in class_ids)
    missing = wanted - set(dataset.class_index)
    if missing:
        raise ValueError(f"classes {sorted(missing)} not present in dataset")
    mask = np.isin(dataset.labels, sorted(wanted))
    return LabeledDataset(images=dataset.images[mask], labels=dataset.labels[mask])


def make_toy_dataset(
    n_classes: int,
    n_per_class: int,
    dim: int = 16,
    spread: float = 0.05,
    seed: int = 0,
) -> LabeledDataset:
    """Gaussian blobs centered on distinct corners of ``[0.2, 0.8]^dim``.

    Class ``k`` sits on the corner whose coordinates follow the bits of
    ``k``, so any two centers differ in at least one axis by 0.6. Samples
    are clipped to [0, 1]. With ``spread`` below a quarter of the minimum
    center distance the classes are linearly separable in practice.
    """
    if n_classes < 1:
        raise ValueError(f"n_classes must be >= 1, got {n_classes}")
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if (n_classes - 1).bit_length() > dim:
        raise ValueError(
            f"{n_classes} classes do not fit the corners of a {dim}-d grid"
        )
    if spread < 0.0:
        raise ValueError(f"spread must be non-negative, got {spread}")
    rng = np.random.default_rng(seed)
    images = np.empty((n_classes * n_per_class, dim))
    labels = np.empty(n_classes * n_per_class, dtype=np.int64)
    for cls in range(n_classes):
        center = np.full(dim, 0.2)
        for axis in range(dim):
            if (cls >> axis) & 1:
                center[axis] = 0.8
        rows = slice(cls * n_per_class, (cls + 1) * n_per_class)
        images[rows] = center + spread * rng.standard_normal((n_per_class, dim))
        labels[rows] = cls
    np.clip(images, 0.0, 1.0, out=images)
    return LabeledDataset(images=images, labels=labels)


def toy_centers(n_classes: int, dim: int) -> np.ndarray:
    """The corner centers ``make_toy_dataset`` uses, one row per class."""
    centers = np.full((n_classes, dim), 0.2)
    for cls in range(n_classes):
        for axis in range(dim):
            if (cls >> axis) & 1:
                centers[cls, axis] = 0.8
    return centers


def concat_datasets(a: LabeledDataset, b: LabeledDataset) -> LabeledDataset:
    if a.dim != b.dim:
        raise ValueError(f"feature widths differ: {a.dim} vs {b.dim}")
    return LabeledDataset(
        images=np.concatenate([a.images, b.images], axis=0),
        labels=np.concatenate([a.labels, b.labels], axis=0),
    )
