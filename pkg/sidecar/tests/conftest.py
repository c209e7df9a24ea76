import pickle

import numpy as np
import pytest


def _class_image(rng: np.random.Generator, label: int) -> np.ndarray:
    """32x32x3 uint8 with a per-class color and stripe texture."""
    palette = np.array([
        [220, 40, 40], [40, 220, 40], [40, 40, 220], [220, 220, 40],
        [220, 40, 220], [40, 220, 220], [240, 140, 20], [140, 70, 20],
        [200, 200, 200], [30, 30, 30],
    ], dtype=float)
    base = np.tile(palette[label], (32, 32, 1))
    xx = np.arange(32)
    stripes = 40.0 * np.sin(2 * np.pi * (label + 1) * xx / 32.0)
    base += stripes[None, :, None]
    base += rng.normal(0, 12.0, base.shape)
    return np.clip(base, 0, 255).astype(np.uint8)


def _make_batch(rng: np.random.Generator, per_class: int) -> dict:
    images, labels = [], []
    for label in range(10):
        for _ in range(per_class):
            images.append(_class_image(rng, label))
            labels.append(label)
    order = rng.permutation(len(images))
    data = np.stack(images)[order]
    labels = np.asarray(labels)[order]
    return {
        b"data": data.transpose(0, 3, 1, 2).reshape(len(data), -1).copy(),
        b"labels": [int(v) for v in labels],
    }


@pytest.fixture(scope="session")
def cifar_root(tmp_path_factory):
    """A local on-disk dataset in the CIFAR-10 python batch format."""
    root = tmp_path_factory.mktemp("cifar") / "cifar-10-batches-py"
    root.mkdir(parents=True)
    rng = np.random.default_rng(1234)
    with open(root / "test_batch", "wb") as fh:
        pickle.dump(_make_batch(rng, per_class=12), fh)
    with open(root / "data_batch_1", "wb") as fh:
        pickle.dump(_make_batch(rng, per_class=4), fh)
    for i in range(2, 6):
        with open(root / f"data_batch_{i}", "wb") as fh:
            pickle.dump(_make_batch(rng, per_class=2), fh)
    return root.parent
