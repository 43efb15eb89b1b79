"""Labeled classification data: IDX digit files and a synthetic blob generator.

A :class:`LabeledDataset` stores features as one (n, dim) float array in [0, 1]
and labels as an (n,) int array, plus a per-class position index. Datasets are
immutable after construction (the arrays are write-locked), so they can be
shared freely between participants, mixtures and probes.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "Sample",
    "LabeledDataset",
    "IdxError",
    "IdxFormatError",
    "IdxLengthError",
    "IdxConsistencyError",
    "InsufficientDataError",
    "load_idx",
    "balanced_subset",
    "synthesize",
    "concat",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Base class for IDX parsing failures."""


class IdxFormatError(IdxError):
    """Wrong magic number: the file is not the expected IDX record type."""


class IdxLengthError(IdxError):
    """File ends before the records its header promises."""


class IdxConsistencyError(IdxError):
    """Image and label files disagree (record counts, label range)."""


class InsufficientDataError(ValueError):
    """A class has fewer samples than a draw requires."""


@dataclass(frozen=True)
class Sample:
    """One record: a feature vector in [0, 1]^dim and its class label."""

    features: np.ndarray
    label: int


class LabeledDataset:
    """Ordered collection of samples with a per-class position index."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, n_c: int):
        features = np.ascontiguousarray(features, dtype=np.float64)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must be one per feature row")
        if n_c < 1:
            raise ValueError("n_c must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= n_c):
            raise ValueError(f"labels must lie in [0, {n_c})")
        features.setflags(write=False)
        labels.setflags(write=False)
        self.features = features
        self.labels = labels
        self.n_c = int(n_c)
        self.dim = int(features.shape[1])
        self.class_index: tuple[np.ndarray, ...] = tuple(
            np.flatnonzero(labels == c) for c in range(n_c)
        )

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.features[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def class_counts(self) -> np.ndarray:
        """Number of samples per class, length n_c."""
        return np.array([idx.size for idx in self.class_index], dtype=np.int64)

    def subset(self, positions: Sequence[int] | np.ndarray) -> "LabeledDataset":
        """New dataset holding copies of the rows at `positions` (order kept)."""
        pos = np.asarray(positions, dtype=np.int64)
        return LabeledDataset(self.features[pos].copy(), self.labels[pos].copy(), self.n_c)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.n_c == other.n_c
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def concat(datasets: Sequence[LabeledDataset]) -> LabeledDataset:
    """Concatenate datasets that share n_c and dim."""
    if not datasets:
        raise ValueError("need at least one dataset")
    n_c = datasets[0].n_c
    dim = datasets[0].dim
    for d in datasets[1:]:
        if d.n_c != n_c or d.dim != dim:
            raise ValueError("datasets disagree on n_c or dim")
    return LabeledDataset(
        np.concatenate([d.features for d in datasets], axis=0),
        np.concatenate([d.labels for d in datasets]),
        n_c,
    )


def _read_all(path: str | Path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def load_idx(images_path: str | Path, labels_path: str | Path) -> LabeledDataset:
    """Parse a big-endian IDX image/label file pair into a dataset.

    Pixels are scaled by 1/255 into [0, 1]; the class count is fixed at 10.
    `.gz` paths are transparently decompressed.
    """
    label_bytes = _read_all(labels_path)
    if len(label_bytes) < 8:
        raise IdxLengthError(f"{labels_path}: truncated header")
    magic, n_labels = struct.unpack(">II", label_bytes[:8])
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")
    if len(label_bytes) < 8 + n_labels:
        raise IdxLengthError(f"{labels_path}: header promises {n_labels} labels, file is short")
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=n_labels, offset=8)

    image_bytes = _read_all(images_path)
    if len(image_bytes) < 16:
        raise IdxLengthError(f"{images_path}: truncated header")
    magic, n_images, rows, cols = struct.unpack(">IIII", image_bytes[:16])
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")
    stride = rows * cols
    if len(image_bytes) < 16 + n_images * stride:
        raise IdxLengthError(f"{images_path}: header promises {n_images} images, file is short")
    if n_images != n_labels:
        raise IdxConsistencyError(f"{n_images} images but {n_labels} labels")
    if labels.size and labels.max() >= 10:
        raise IdxConsistencyError(f"label {labels.max()} outside [0, 10)")

    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=n_images * stride, offset=16)
    features = pixels.reshape(n_images, stride).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64), n_c=10)


def balanced_subset(
    d: LabeledDataset, per_class: int, rng: np.random.Generator
) -> LabeledDataset:
    """Draw exactly `per_class` samples of every class, without replacement."""
    if per_class < 0:
        raise ValueError("per_class must be >= 0")
    chosen: list[np.ndarray] = []
    for c, positions in enumerate(d.class_index):
        if positions.size < per_class:
            raise InsufficientDataError(
                f"class {c} has {positions.size} samples, need {per_class}"
            )
        chosen.append(rng.choice(positions, size=per_class, replace=False))
    if not chosen:
        return d.subset(np.empty(0, dtype=np.int64))
    return d.subset(np.concatenate(chosen))


def _centroids(n_c: int, dim: int) -> np.ndarray:
    # Axis-aligned equidistant layout when the space allows it, so every class
    # is geometrically equivalent; otherwise spread along the cube diagonal.
    if dim >= n_c:
        centers = np.full((n_c, dim), 0.25)
        centers[np.arange(n_c), np.arange(n_c)] = 0.75
    else:
        centers = np.repeat(((np.arange(n_c) + 0.5) / n_c)[:, None], dim, axis=1)
    return centers


def synthesize(
    n_c: int, per_class: int, dim: int, spread: float, rng: np.random.Generator
) -> LabeledDataset:
    """Isotropic Gaussian blobs around n_c fixed, pairwise-distinct centroids.

    Samples are clipped to [0, 1] so synthetic data obeys the same feature
    range as loaded digit data. Identical seeds give identical datasets.
    """
    if n_c < 2:
        raise ValueError("n_c must be >= 2")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not spread > 0:
        raise ValueError("spread must be > 0")
    if per_class < 0:
        raise ValueError("per_class must be >= 0")
    centers = _centroids(n_c, dim)
    n = n_c * per_class
    labels = np.repeat(np.arange(n_c), per_class)
    noise = rng.normal(0.0, spread, size=(n, dim))
    features = np.clip(centers[labels] + noise, 0.0, 1.0)
    return LabeledDataset(features, labels, n_c)
