"""End-to-end demo: single-image public data, DP training, and a sweep.

Generates a textured 600x225 source image, synthesizes a public feature
set from it, trains DPSGD / DPSGLD / DPDFA on the committed desk-scale
fixtures, and emits a utility-vs-epsilon curve. Everything lands under
runs/demo/. Runs in about a minute on a laptop.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from privtrain.features import save_image
from privtrain.rng import substream

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "tests" / "fixtures"
OUT = ROOT / "runs" / "demo"


def textured_source(height: int = 225, width: int = 600) -> np.ndarray:
    """A synthetic stand-in for a rich natural image: oriented waves,
    blobs, and broadband noise in each channel."""
    rng = substream(2024, "demo-source")
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    img = np.zeros((height, width, 3))
    for c in range(3):
        acc = np.zeros((height, width))
        for _ in range(8):
            fx, fy = rng.uniform(0.01, 0.2, 2)
            phase = rng.uniform(0, 2 * np.pi)
            acc += rng.uniform(0.2, 1.0) * np.sin(fx * xx + fy * yy + phase)
        for _ in range(5):
            cy, cx = rng.uniform(0, height), rng.uniform(0, width)
            s = rng.uniform(8, 60)
            acc += rng.uniform(-1.5, 1.5) * np.exp(
                -((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s)
            )
        acc += 0.25 * rng.standard_normal((height, width))
        lo, hi = acc.min(), acc.max()
        img[..., c] = (acc - lo) / (hi - lo)
    return img


def cli(*args: str) -> None:
    cmd = [sys.executable, "-m", "privtrain.cli", *args]
    print("+", " ".join(args))
    subprocess.run(cmd, check=True, cwd=ROOT)


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    source = OUT / "source.png"
    save_image(textured_source(), source)

    cli(
        "synth", "--image", str(source), "--out", str(OUT / "public"),
        "--count", "2000", "--seed", "1",
    )

    margin_train = str(FIXTURES / "margin_train.pvtf")
    margin_test = str(FIXTURES / "margin_test.pvtf")
    xor_train = str(FIXTURES / "xor_train.pvtf")
    xor_test = str(FIXTURES / "xor_test.pvtf")

    cli(
        "train", "--train", margin_train, "--test", margin_test,
        "--framework", "dpsgd", "--sigma", "2.0", "--lr", "2.0",
        "--batch", "200", "--epochs", "8", "--seed", "3",
        "--out", str(OUT / "dpsgd"),
    )
    cli(
        "train", "--train", margin_train, "--test", margin_test,
        "--framework", "dpsgld", "--lr", "0.0025",
        "--batch", "200", "--epochs", "8", "--seed", "3",
        "--out", str(OUT / "dpsgld"),
    )
    cli(
        "train", "--train", xor_train, "--test", xor_test,
        "--framework", "dpdfa", "--sigma", "3.0", "--lr", "6.0",
        "--batch", "400", "--epochs", "20", "--seed", "9", "--hidden", "16",
        "--out", str(OUT / "dpdfa"),
    )

    sweep_cfg = OUT / "sweep.json"
    sweep_cfg.write_text(json.dumps({
        "train": {"framework": "dpsgd", "lr": 2.0, "batch": 200,
                  "epochs": 8, "seed": 5},
        "grid": (
            [{"sigma": s} for s in (2.0, 4.0, 8.0, 16.0)]
            + [{"framework": "dpsgld", "lr": lr}
               for lr in (0.001, 0.0025, 0.005, 0.01)]
        ),
    }, indent=2))
    cli(
        "sweep", "--config", str(sweep_cfg), "--train", margin_train,
        "--test", margin_test, "--out", str(OUT / "sweep"),
    )

    cli(
        "evaluate", "--checkpoint", str(OUT / "dpsgd" / "checkpoint.pvtm"),
        "--test", margin_test,
    )
    print(f"\nartifacts under {OUT}")
    print(f"utility-vs-epsilon curve: {OUT / 'sweep' / 'curve.csv'}")


if __name__ == "__main__":
    main()
