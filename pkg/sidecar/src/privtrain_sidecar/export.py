"""Feature export: dataset -> headless backbone -> PVTF file.

Inference is single-threaded and runs under torch.no_grad in eval mode,
so exporting the same subset twice yields bit-identical files. Labels
pass through in the dataset's canonical order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbones import build_backbone
from .datasets import load_dataset
from .pvtf import write_pvtf


@dataclass(frozen=True)
class ExportJob:
    dataset: str                 # kind:path spec
    split: str = "test"
    backbone: str = "resnet18"
    weights: str = "random:0"
    out: str = "features.pvtf"
    batch_size: int = 64
    device: str = "cpu"
    limit: int | None = None     # export only the first N images

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.limit is not None and self.limit < 1:
            raise ValueError("limit must be >= 1 when given")


def export_features(job: ExportJob) -> Path:
    """Run the job and return the written PVTF path."""
    images, labels, classes = load_dataset(job.dataset, job.split)
    if job.limit is not None:
        images = images[: job.limit]
        labels = labels[: job.limit]
    if images.ndim != 4 or images.shape[3] != 3:
        raise ValueError("expected (N, H, W, 3) images")

    model, width = build_backbone(job.backbone, job.weights)
    device = torch.device(job.device)
    model.to(device)
    torch.set_num_threads(1)  # fixed reduction order -> bit-stable output

    mean = np.asarray([0.485, 0.456, 0.406], dtype=np.float32)
    std = np.asarray([0.229, 0.224, 0.225], dtype=np.float32)
    rows = []
    with torch.no_grad():
        for start in range(0, len(images), job.batch_size):
            chunk = images[start : start + job.batch_size]
            chunk = (chunk - mean) / std
            batch = torch.from_numpy(np.ascontiguousarray(
                chunk.transpose(0, 3, 1, 2)
            )).to(device)
            rows.append(model(batch).cpu().numpy())
    features = np.concatenate(rows).astype(np.float32)
    if features.shape != (len(images), width):
        raise RuntimeError(
            f"backbone produced {features.shape}, expected ({len(images)}, {width})"
        )
    write_pvtf(features, labels, classes, job.out)
    return Path(job.out)
