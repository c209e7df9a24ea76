"""Image sources for feature export.

A dataset spec is "<kind>:<path>":

  cifar10:<root>      CIFAR-10 python batches on local disk (the directory
                      holding data_batch_1..5 / test_batch, or its parent);
                      splits: train, test. No downloading.
  imagefolder:<dir>   class-per-subdirectory image tree; flat = unlabeled.
  npz:<path>          archive with "images" (N,H,W,C uint8 or float [0,1])
                      and optional "labels".

Every loader returns (images, labels, classes) with float32 images in
[0, 1], channel-last, in the dataset's canonical order.
"""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np

CIFAR10_BATCH_DIR = "cifar-10-batches-py"
CIFAR10_TRAIN_BATCHES = [f"data_batch_{i}" for i in range(1, 6)]
CIFAR10_TEST_BATCH = "test_batch"


def load_dataset(spec: str, split: str = "test"):
    if ":" not in spec:
        raise ValueError(f"dataset spec must look like kind:path, got {spec!r}")
    kind, path = spec.split(":", 1)
    if kind == "cifar10":
        return load_cifar10(path, split)
    if kind == "imagefolder":
        return load_imagefolder(path)
    if kind == "npz":
        return load_npz(path)
    raise ValueError(f"unknown dataset kind {kind!r}")


def _cifar10_root(root: str) -> Path:
    base = Path(root)
    if (base / CIFAR10_BATCH_DIR).is_dir():
        return base / CIFAR10_BATCH_DIR
    if base.is_dir():
        return base
    raise FileNotFoundError(
        f"no CIFAR-10 batches under {root} (expected {CIFAR10_BATCH_DIR} "
        "or the batch files themselves); download is not attempted"
    )


def load_cifar10(root: str, split: str):
    base = _cifar10_root(root)
    names = CIFAR10_TRAIN_BATCHES if split == "train" else [CIFAR10_TEST_BATCH]
    if split not in ("train", "test"):
        raise ValueError(f"cifar10 split must be train or test, got {split!r}")
    images, labels = [], []
    for name in names:
        batch_path = base / name
        if not batch_path.exists():
            raise FileNotFoundError(f"missing CIFAR-10 batch {batch_path}")
        with open(batch_path, "rb") as fh:
            batch = pickle.load(fh, encoding="bytes")
        data = np.asarray(batch[b"data"], dtype=np.uint8)
        images.append(data.reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
        labels.append(np.asarray(batch[b"labels"], dtype=np.int64))
    images = np.concatenate(images).astype(np.float32) / 255.0
    return images, np.concatenate(labels), 10


def load_imagefolder(root: str):
    from PIL import Image

    base = Path(root)
    if not base.is_dir():
        raise FileNotFoundError(f"image folder {root} does not exist")

    def read(path):
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0

    subdirs = sorted(d for d in base.iterdir() if d.is_dir())
    if subdirs:
        images, labels = [], []
        for label, sub in enumerate(subdirs):
            for img in sorted(sub.iterdir()):
                images.append(read(img))
                labels.append(label)
        if not images:
            raise ValueError(f"no images under {root}")
        return np.stack(images), np.asarray(labels, dtype=np.int64), len(subdirs)
    files = sorted(p for p in base.iterdir() if p.is_file())
    if not files:
        raise ValueError(f"no images under {root}")
    images = np.stack([read(p) for p in files])
    return images, np.zeros(len(images), dtype=np.int64), 0


def load_npz(path: str):
    if not Path(path).exists():
        raise FileNotFoundError(f"npz archive {path} does not exist")
    with np.load(path) as arc:
        images = np.asarray(arc["images"])
        if images.dtype.kind in "ui" or images.max() > 1.5:
            images = images.astype(np.float32) / 255.0
        images = images.astype(np.float32)
        if "labels" in arc:
            labels = np.asarray(arc["labels"], dtype=np.int64)
            classes = int(labels.max()) + 1 if labels.size else 0
            return images, labels, classes
    return images, np.zeros(len(images), dtype=np.int64), 0
