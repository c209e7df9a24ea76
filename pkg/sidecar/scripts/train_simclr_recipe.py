"""Contrastive pretraining recipe for a local encoder (NOT run in CI).

Minimal SimCLR-style setup: two augmented views per image, a ResNet
backbone with a 2-layer projection head, NT-Xent loss. Intended for
GPU-scale runs that produce a state_dict consumable by the export CLI
(--weights path). Kept as a starting recipe; untested in CI and not part
of the package's verified surface.

Usage:
    python train_simclr_recipe.py --dataset cifar10:/data/cifar \
        --backbone resnet18 --epochs 200 --batch-size 128 \
        --out encoder.pt
"""

from __future__ import annotations

import argparse

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from privtrain_sidecar.backbones import EMBED_WIDTHS, build_backbone
from privtrain_sidecar.datasets import load_dataset


class ProjectionHead(nn.Module):
    def __init__(self, width: int, out_dim: int = 128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(width, width), nn.ReLU(inplace=True),
            nn.Linear(width, out_dim),
        )

    def forward(self, x):
        return self.net(x)


def nt_xent(z1, z2, temperature: float = 0.5):
    z = F.normalize(torch.cat([z1, z2]), dim=1)
    n = z1.shape[0]
    sim = z @ z.T / temperature
    sim.fill_diagonal_(float("-inf"))
    targets = torch.cat([torch.arange(n, 2 * n), torch.arange(0, n)]).to(z.device)
    return F.cross_entropy(sim, targets)


def two_views(batch: torch.Tensor, generator: torch.Generator) -> tuple:
    """Cheap augmentation pair: random flip, crop-resize, channel jitter."""
    views = []
    for _ in range(2):
        v = batch
        if torch.rand((), generator=generator) < 0.5:
            v = torch.flip(v, dims=[3])
        size = v.shape[2]
        crop = int(size * (0.6 + 0.4 * torch.rand((), generator=generator)))
        top = int(torch.randint(0, size - crop + 1, (), generator=generator))
        left = int(torch.randint(0, size - crop + 1, (), generator=generator))
        v = v[:, :, top : top + crop, left : left + crop]
        v = F.interpolate(v, size=(size, size), mode="bilinear",
                          align_corners=False)
        scale = 0.8 + 0.4 * torch.rand((1, 3, 1, 1), generator=generator)
        views.append((v * scale).clamp(0, 1))
    return views[0], views[1]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--split", default="train")
    parser.add_argument("--backbone", default="resnet18",
                        choices=sorted(EMBED_WIDTHS))
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--temperature", type=float, default=0.5)
    parser.add_argument("--device", default="cuda" if torch.cuda.is_available()
                        else "cpu")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    images, _, _ = load_dataset(args.dataset, args.split)
    data = torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))

    encoder, width = build_backbone(args.backbone, f"random:{args.seed}")
    encoder.train().to(args.device)
    head = ProjectionHead(width).to(args.device)
    opt = torch.optim.Adam(
        list(encoder.parameters()) + list(head.parameters()), lr=args.lr
    )
    gen = torch.Generator().manual_seed(args.seed)

    for epoch in range(1, args.epochs + 1):
        order = torch.randperm(len(data), generator=gen)
        total = 0.0
        batches = 0
        for start in range(0, len(data), args.batch_size):
            batch = data[order[start : start + args.batch_size]].to(args.device)
            if batch.shape[0] < 2:
                continue
            v1, v2 = two_views(batch, gen)
            loss = nt_xent(head(encoder(v1)), head(encoder(v2)),
                           args.temperature)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss)
            batches += 1
        print(f"epoch {epoch}: nt-xent {total / max(1, batches):.4f}")

    encoder.eval()
    torch.save(encoder.state_dict(), args.out)
    print(f"saved encoder state_dict to {args.out}")


if __name__ == "__main__":
    main()
