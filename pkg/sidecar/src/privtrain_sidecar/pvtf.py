"""PVTF feature-file writer.

The sidecar talks to the training core only through this wire format
(little-endian): magic "PVTF", version u16, flags u16 (zero), N u64,
D u32, classes u32, then N*D float32 features row-major, then N labels
as u32. classes = 0 marks an unlabeled file.

Writes are atomic: a temp file in the target directory is renamed into
place, so a crashed export never leaves a partial file behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"PVTF"
VERSION = 1
_HEADER = struct.Struct("<4sHHQII")


def write_pvtf(features: np.ndarray, labels: np.ndarray, classes: int, path) -> None:
    features = np.ascontiguousarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("features must be a non-empty (N, D) array")
    if labels.shape != (features.shape[0],):
        raise ValueError("labels must be 1-D with one entry per row")
    if not np.all(np.isfinite(features)):
        raise ValueError("features must be finite")
    if classes < 0:
        raise ValueError("classes must be >= 0")
    if classes > 0 and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    if classes == 0 and np.any(labels != 0):
        raise ValueError("unlabeled files carry zero labels")

    path = Path(path)
    header = _HEADER.pack(
        MAGIC, VERSION, 0, features.shape[0], features.shape[1], classes
    )
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", suffix=".pvtf.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(features.astype("<f4").tobytes())
            fh.write(labels.astype("<u4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
