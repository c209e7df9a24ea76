"""Feature datasets and the PVTF on-disk format.

A feature file is (little-endian): magic "PVTF", version u16, flags u16
(reserved, zero), N u64, D u32, classes u32, then N*D float32 features
row-major, then N labels as u32. classes = 0 is the sentinel for an
unlabeled dataset (labels stored as zeros). Round-trips are bit-exact on
the float payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"PVTF"
VERSION = 1
_HEADER = struct.Struct("<4sHHQII")


class FeatureFileError(Exception):
    """Base class for PVTF format violations."""


class InvalidMagicError(FeatureFileError):
    pass


class UnsupportedVersionError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class LabelRangeError(FeatureFileError):
    pass


class EmptyDatasetError(FeatureFileError):
    pass


@dataclass
class FeatureDataset:
    """N feature vectors of dimension D with integer labels.

    ``classes == 0`` marks an unlabeled dataset (synthetic public data);
    labeled datasets require every label in [0, classes). ``provenance``
    is an in-memory tag only, not stored in the file.
    """

    features: np.ndarray
    labels: np.ndarray
    classes: int
    provenance: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D (N, D) array")
        if self.features.shape[0] < 1:
            raise EmptyDatasetError("dataset must contain at least one sample")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be 1-D with one entry per sample")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.classes < 0:
            raise ValueError("classes must be >= 0")
        if self.classes > 0:
            if np.any(self.labels < 0) or np.any(self.labels >= self.classes):
                raise LabelRangeError(
                    f"labels must lie in [0, {self.classes})"
                )
        elif np.any(self.labels != 0):
            raise LabelRangeError("unlabeled datasets must carry zero labels")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return self.classes > 0


def write_features(dataset: FeatureDataset, path) -> None:
    header = _HEADER.pack(
        MAGIC, VERSION, 0, dataset.n, dataset.dim, dataset.classes
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dataset.features.astype("<f4").tobytes())
        fh.write(dataset.labels.astype("<u4").tobytes())


def read_features(path) -> FeatureDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError("file shorter than the PVTF header")
    magic, version, _flags, n, dim, classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InvalidMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported PVTF version {version}")
    if n < 1:
        raise EmptyDatasetError("PVTF file declares an empty dataset")
    expected = _HEADER.size + 4 * n * dim + 4 * n
    if len(raw) != expected:
        raise TruncatedFileError(
            f"file length {len(raw)} does not match header (want {expected})"
        )
    features = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=_HEADER.size)
    labels = np.frombuffer(
        raw, dtype="<u4", count=n, offset=_HEADER.size + 4 * n * dim
    ).astype(np.int64)
    if classes > 0 and (labels.min() < 0 or labels.max() >= classes):
        raise LabelRangeError(f"labels must lie in [0, {classes})")
    return FeatureDataset(
        features.reshape(n, dim).copy(),
        labels,
        classes,
        provenance=str(path),
    )
