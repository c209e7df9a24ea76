"""Generate the frozen desk-scale experiment fixtures.

Produces the two synthetic datasets the experiment tests run on, executes
the preliminary calibration runs, and freezes the chosen hyper-parameters
plus observed metrics into tests/fixtures/desk_thresholds.json. The test
suite replays the same configurations and asserts the recorded thresholds,
so regenerate the fixtures whenever the datasets or trainer defaults
change.

Datasets (written as PVTF):
  margin_train/test.pvtf: 2000/500 samples, D=16, 2 classes, linearly
    separable with margin 0.5 along a random unit direction.
  xor_train/test.pvtf: 4000/1000 samples, D=8, 2 classes; dims 0-1 hold an
    XOR blob pattern no linear classifier can separate, dims 2-7 are noise.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from privtrain import models, train_dpdfa, train_dpsgd, train_dpsgld
from privtrain.dataio import FeatureDataset, write_features
from privtrain.mechanisms import ClipSpec, NoiseSpec
from privtrain.rng import substream
from privtrain.trainers import DfaConfig, TrainerConfig

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

MARGIN_SEED = 7
XOR_SEED = 21
MARGIN = 0.5


def margin_dataset(n: int, stream, w: np.ndarray) -> FeatureDataset:
    """Two Gaussian half-spaces, rejection-sampled to a hard margin."""
    dim = w.size
    xs, ys = [], []
    collected = 0
    while collected < n:
        block = 4 * n
        y = stream.integers(0, 2, block)
        z = 0.5 * stream.standard_normal((block, dim))
        x = z + (2 * y - 1)[:, None] * w
        signed = (2 * y - 1) * (x @ w)
        keep = signed >= MARGIN
        xs.append(x[keep])
        ys.append(y[keep])
        collected += int(keep.sum())
    X = np.concatenate(xs)[:n].astype(np.float32)
    Y = np.concatenate(ys)[:n].astype(np.int64)
    return FeatureDataset(X, Y, 2, provenance="desk:margin")


def xor_dataset(n: int, stream, dim: int = 8) -> FeatureDataset:
    sx = stream.integers(0, 2, n)
    sy = stream.integers(0, 2, n)
    y = (sx ^ sy).astype(np.int64)
    x = np.zeros((n, dim))
    x[:, 0] = (2 * sx - 1) + 0.25 * stream.standard_normal(n)
    x[:, 1] = (2 * sy - 1) + 0.25 * stream.standard_normal(n)
    x[:, 2:] = 0.25 * stream.standard_normal((n, dim - 2))
    return FeatureDataset(x.astype(np.float32), y, 2, provenance="desk:xor")


# Frozen run configurations (also replayed verbatim by the tests).
DPSGD_MARGIN = {
    "clip": 0.1, "sigma": 2.0, "lr": 2.0, "batch": 200, "epochs": 8,
    "delta": 1e-5, "seed": 3, "eps_budget": 3.0,
}
DPDFA_XOR = {
    "clip": 0.1, "sigma": 3.0, "lr": 6.0, "batch": 400, "epochs": 20,
    "delta": 1e-5, "seed": 9, "hidden": 16, "activation_clip": 1.0,
    "error_clip": 1.0, "feedback_scale": 1.0, "eps_budget": 2.5,
}
DPSGD_XOR = {
    "clip": 0.1, "sigma": 2.0, "lr": 2.0, "batch": 400, "epochs": 12,
    "delta": 1e-5, "seed": 9, "eps_budget": 2.5,
}
SWEEP_MARGIN = {
    "target_accuracy": 0.90,
    "dpsgld_lrs": [0.001, 0.0025, 0.005, 0.01],
    "dpsgd_sigmas": [2.0, 4.0, 8.0, 16.0],
    "clip": 0.1, "batch": 200, "epochs": 8, "delta": 1e-5, "seed": 5,
    "dpsgd_lr": 2.0,
}


def run_dpsgd_margin(train, test) -> dict:
    c = DPSGD_MARGIN
    cfg = TrainerConfig(
        "dpsgd", clip=ClipSpec(c["clip"]), noise=NoiseSpec(c["sigma"], seed=c["seed"]),
        lr=c["lr"], expected_batch=c["batch"], epochs=c["epochs"], delta=c["delta"],
    )
    model = models.init_linear(train.dim, train.classes, substream(c["seed"], "init"))
    start = time.time()
    _, trace = train_dpsgd(train, model, cfg, test)
    best = trace.best_accuracy(max_epsilon=c["eps_budget"])
    return {"best_acc_within_budget": best, "runtime_s": time.time() - start}


def run_dpdfa_xor(train, test) -> dict:
    c = DPDFA_XOR
    cfg = TrainerConfig(
        "dpdfa", clip=ClipSpec(c["clip"]), noise=NoiseSpec(c["sigma"], seed=c["seed"]),
        lr=c["lr"], expected_batch=c["batch"], epochs=c["epochs"], delta=c["delta"],
        dfa=DfaConfig(
            activation_clip=c["activation_clip"], error_clip=c["error_clip"],
            feedback_scale=c["feedback_scale"],
        ),
    )
    model = models.init_mlp(
        train.dim, c["hidden"], train.classes, substream(c["seed"], "mlp")
    )
    _, trace = train_dpdfa(train, model, cfg, test)
    return {"best_acc_within_budget": trace.best_accuracy(c["eps_budget"])}


def run_dpsgd_xor(train, test) -> dict:
    c = DPSGD_XOR
    cfg = TrainerConfig(
        "dpsgd", clip=ClipSpec(c["clip"]), noise=NoiseSpec(c["sigma"], seed=c["seed"]),
        lr=c["lr"], expected_batch=c["batch"], epochs=c["epochs"], delta=c["delta"],
    )
    model = models.init_linear(train.dim, train.classes, substream(c["seed"], "lin"))
    _, trace = train_dpsgd(train, model, cfg, test)
    return {"best_acc_within_budget": trace.best_accuracy(c["eps_budget"])}


def run_sweep_margin(train, test) -> dict:
    c = SWEEP_MARGIN
    target = c["target_accuracy"]

    def min_eps(trace) -> float | None:
        hits = [r.epsilon for r in trace.records if r.test_accuracy >= target]
        return min(hits) if hits else None

    sgld_eps = []
    for lr in c["dpsgld_lrs"]:
        cfg = TrainerConfig(
            "dpsgld", clip=ClipSpec(c["clip"]), noise=NoiseSpec(0.0, seed=c["seed"]),
            lr=lr, expected_batch=c["batch"], epochs=c["epochs"], delta=c["delta"],
        )
        m = models.init_linear(train.dim, train.classes, substream(c["seed"], "init"))
        _, trace = train_dpsgld(train, m, cfg, test)
        sgld_eps.append(min_eps(trace))
    sgd_eps = []
    for sigma in c["dpsgd_sigmas"]:
        cfg = TrainerConfig(
            "dpsgd", clip=ClipSpec(c["clip"]), noise=NoiseSpec(sigma, seed=c["seed"]),
            lr=c["dpsgd_lr"], expected_batch=c["batch"], epochs=c["epochs"],
            delta=c["delta"],
        )
        m = models.init_linear(train.dim, train.classes, substream(c["seed"], "init"))
        _, trace = train_dpsgd(train, m, cfg, test)
        sgd_eps.append(min_eps(trace))
    return {
        "dpsgld_min_eps_at_target": sgld_eps,
        "dpsgd_min_eps_at_target": sgd_eps,
    }


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    w = substream(MARGIN_SEED, "direction").standard_normal(16)
    w /= np.linalg.norm(w)
    margin_train = margin_dataset(2000, substream(MARGIN_SEED, "train"), w)
    margin_test = margin_dataset(500, substream(MARGIN_SEED, "test"), w)
    xor_train = xor_dataset(4000, substream(XOR_SEED, "train"))
    xor_test = xor_dataset(1000, substream(XOR_SEED, "test"))
    write_features(margin_train, FIXTURE_DIR / "margin_train.pvtf")
    write_features(margin_test, FIXTURE_DIR / "margin_test.pvtf")
    write_features(xor_train, FIXTURE_DIR / "xor_train.pvtf")
    write_features(xor_test, FIXTURE_DIR / "xor_test.pvtf")

    results = {
        "dpsgd_margin": {"config": DPSGD_MARGIN,
                         "observed": run_dpsgd_margin(margin_train, margin_test)},
        "dpdfa_xor": {"config": DPDFA_XOR,
                      "observed": run_dpdfa_xor(xor_train, xor_test)},
        "dpsgd_xor": {"config": DPSGD_XOR,
                      "observed": run_dpsgd_xor(xor_train, xor_test)},
        "sweep_margin": {"config": SWEEP_MARGIN,
                         "observed": run_sweep_margin(margin_train, margin_test)},
    }
    with open(FIXTURE_DIR / "desk_thresholds.json", "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2)
        fh.write("\n")
    print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
