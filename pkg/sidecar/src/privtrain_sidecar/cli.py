"""Command line: privtrain-sidecar export --dataset ... --backbone ... --out ...

Exit codes: 0 success, 1 compute failure, 2 usage/validation error.
"""

from __future__ import annotations

import argparse
import sys

from .export import ExportJob, export_features


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="privtrain-sidecar",
        description="Export backbone feature vectors into PVTF files",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="run one export job")
    exp.add_argument("--dataset", required=True,
                     help="cifar10:<root> | imagefolder:<dir> | npz:<path>")
    exp.add_argument("--split", default="test", choices=["train", "test"])
    exp.add_argument("--backbone", default="resnet18",
                     choices=["resnet18", "resnet50"])
    exp.add_argument("--weights", default="random:0",
                     help="state-dict path, random:<seed>, or default")
    exp.add_argument("--out", required=True)
    exp.add_argument("--batch-size", type=int, default=64)
    exp.add_argument("--device", default="cpu")
    exp.add_argument("--limit", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        job = ExportJob(
            dataset=args.dataset, split=args.split, backbone=args.backbone,
            weights=args.weights, out=args.out, batch_size=args.batch_size,
            device=args.device, limit=args.limit,
        )
        path = export_features(job)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(2)
    except Exception as exc:  # noqa: BLE001 - surface compute failures as exit 1
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(1)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
