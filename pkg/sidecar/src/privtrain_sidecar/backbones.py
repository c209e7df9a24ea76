"""Encoder construction: torchvision ResNets as headless feature extractors.

A weights spec is one of:

  <path>.pt / .pth    a local state_dict (e.g. a SimCLR-pretrained encoder
                      exported with torch.save(model.state_dict(), ...));
  random:<seed>       deterministic random initialization -- the offline
                      fallback; random conv features still support a linear
                      probe on visually distinct classes;
  default             torchvision's published weights (requires network).

The returned module maps a (N, 3, H, W) float batch to (N, width)
embeddings (the global-average-pool output; the classification head is
removed).
"""

from __future__ import annotations

import torch
from torch import nn
from torchvision import models as tv_models

EMBED_WIDTHS = {"resnet18": 512, "resnet50": 2048}


def build_backbone(name: str, weights: str = "random:0") -> tuple[nn.Module, int]:
    if name not in EMBED_WIDTHS:
        raise ValueError(f"backbone must be one of {sorted(EMBED_WIDTHS)}, got {name!r}")
    ctor = getattr(tv_models, name)
    if weights == "default":
        model = ctor(weights="DEFAULT")
    elif weights.startswith("random:"):
        seed = int(weights.split(":", 1)[1])
        torch.manual_seed(seed)
        model = ctor(weights=None)
    else:
        model = ctor(weights=None)
        state = torch.load(weights, map_location="cpu", weights_only=True)
        missing, unexpected = model.load_state_dict(state, strict=False)
        # the classification head is dropped below, so a headless
        # state_dict is fine; anything else missing is an error
        real_missing = [k for k in missing if not k.startswith("fc.")]
        if real_missing or unexpected:
            raise ValueError(
                f"state dict mismatch: missing {real_missing}, "
                f"unexpected {list(unexpected)}"
            )
    model.fc = nn.Identity()
    model.eval()
    return model, EMBED_WIDTHS[name]
