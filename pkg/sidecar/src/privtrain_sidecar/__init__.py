"""Feature-export sidecar: pretrained backbones to PVTF feature files."""

__version__ = "0.1.0"

from .backbones import build_backbone
from .datasets import load_dataset
from .export import ExportJob, export_features
from .pvtf import write_pvtf

__all__ = [
    "ExportJob",
    "build_backbone",
    "export_features",
    "load_dataset",
    "write_pvtf",
]
