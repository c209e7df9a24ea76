"""Command-line harness: synth, extract, train, account, sweep, evaluate.

Parameter precedence is config file < environment < flags; environment
overrides use ``PRIVTRAIN_<NAME>`` (e.g. ``PRIVTRAIN_SIGMA``). Every run
writes its resolved configuration next to its outputs, under a per-run
directory named by timestamp and config hash unless --out pins one.
``PRIVTRAIN_THREADS`` caps sweep parallelism.

Exit codes: 0 success, 1 compute failure, 2 usage or validation error.
"""

from __future__ import annotations

import concurrent.futures
import csv
import functools
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .accountant import account_training, sigma_for_epsilon
from .dataio import (
    FeatureDataset,
    FeatureFileError,
    read_features,
    write_features,
)
from .features import (
    AugmentSpec,
    augment_single_image,
    build_dct_bank,
    extract_batch,
    load_image,
)
from .mechanisms import ClipSpec, NoiseSpec
from .models import (
    ARCH_LINEAR,
    ARCH_MLP,
    CheckpointFormatError,
    batch_accuracy,
    init_linear,
    init_mlp,
    load_checkpoint,
    save_checkpoint,
)
from .rng import derive_seed, substream
from .trainers import (
    CLIP_PRESETS,
    FRAMEWORK_DPDFA,
    FRAMEWORK_DPSGD,
    FRAMEWORK_DPSGLD,
    FRAMEWORK_PATE,
    FRAMEWORKS,
    DfaConfig,
    PateConfig,
    TrainerConfig,
    train_dpdfa,
    train_dpsgd,
    train_dpsgld,
    train_pate,
)

EXIT_COMPUTE = 1
EXIT_USAGE = 2

_VALIDATION_ERRORS = (
    ValueError,
    FeatureFileError,
    CheckpointFormatError,
    FileNotFoundError,
    IsADirectoryError,
    KeyError,
)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(fn):
    """Map validation errors to exit 2 and compute failures to exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _VALIDATION_ERRORS as exc:
            _fail(EXIT_USAGE, str(exc))
        except (RuntimeError, OSError, ArithmeticError) as exc:
            _fail(EXIT_COMPUTE, str(exc))

    return wrapper


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} does not exist")
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    return tomllib.loads(text)


def _resolve(name: str, flag, file_cfg: dict, default, cast=None):
    """file < environment < flag precedence for one parameter."""
    if flag is not None:
        return flag
    env = os.environ.get(f"PRIVTRAIN_{name.upper()}")
    if env is not None:
        return cast(env) if cast is not None else env
    if name in file_cfg:
        value = file_cfg[name]
        return cast(value) if cast is not None else value
    return default


def _config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:8]


def _make_run_dir(out: str | None, resolved: dict, parent: str = "runs") -> Path:
    if out is not None:
        run_dir = Path(out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path(parent) / f"{stamp}-{_config_hash(resolved)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _archive_config(run_dir: Path, resolved: dict) -> None:
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Differentially private training of shallow classifiers on features."""


@main.command("synth")
@click.option("--image", "image_path", required=True, help="source PNG/PPM image")
@click.option("--out", default=None, help="output directory (default: runs/<stamp>)")
@click.option("--count", type=int, default=None, help="number of synthetic images")
@click.option("--size", type=int, default=None, help="output side length in pixels")
@click.option("--seed", type=int, default=None)
@click.option("--k", "kernel", type=int, default=None, help="DCT kernel size")
@click.option("--stages", type=int, default=None)
@click.option("--pool", type=int, default=None)
@click.option("--config", "config_path", default=None, help="TOML/JSON config file")
@guarded
def cmd_synth(image_path, out, count, size, seed, kernel, stages, pool, config_path):
    """Augment one image into a synthetic set and extract DCT features."""
    cfg = _load_config_file(config_path)
    if not Path(image_path).exists():
        raise FileNotFoundError(f"input image {image_path} does not exist")
    resolved = {
        "command": "synth",
        "image": str(image_path),
        "count": _resolve("count", count, cfg, 50000, int),
        "size": _resolve("size", size, cfg, 32, int),
        "seed": _resolve("seed", seed, cfg, 0, int),
        "k": _resolve("k", kernel, cfg, 3, int),
        "stages": _resolve("stages", stages, cfg, 2, int),
        "pool": _resolve("pool", pool, cfg, 2, int),
    }
    source = load_image(image_path)
    spec = AugmentSpec(
        output_count=resolved["count"],
        output_size=(resolved["size"], resolved["size"]),
        seed=resolved["seed"],
    )
    bank = build_dct_bank(resolved["k"])
    images = augment_single_image(source, spec)
    features = _extract_chunked(images, bank, resolved["stages"], resolved["pool"])
    dataset = FeatureDataset(
        features,
        np.zeros(len(features), dtype=np.int64),
        classes=0,
        provenance=f"synth:{Path(image_path).name}",
    )
    run_dir = _make_run_dir(out, resolved)
    _archive_config(run_dir, resolved)
    write_features(dataset, run_dir / "features.pvtf")
    click.echo(f"wrote {dataset.n} x {dataset.dim} features to {run_dir}")


def _extract_chunked(images, bank, stages, pool, chunk=512) -> np.ndarray:
    parts = [
        extract_batch(
            np.asarray(images[i : i + chunk], dtype=np.float32),
            bank, stages, pool,
        )
        for i in range(0, len(images), chunk)
    ]
    return np.concatenate(parts, axis=0).astype(np.float32)


def _load_images_input(path: Path) -> tuple[np.ndarray, np.ndarray, int]:
    """Images from an .npz archive or an (optionally class-sharded) directory."""
    if path.suffix == ".npz":
        with np.load(path) as arc:
            images = np.asarray(arc["images"], dtype=float)
            if images.dtype.kind in "ui" or images.max() > 1.5:
                images = images / 255.0
            if "labels" in arc:
                labels = np.asarray(arc["labels"], dtype=np.int64)
                classes = int(labels.max()) + 1 if labels.size else 0
                return images, labels, classes
            return images, np.zeros(len(images), dtype=np.int64), 0
    if not path.is_dir():
        raise FileNotFoundError(f"image input {path} does not exist")
    subdirs = sorted(d for d in path.iterdir() if d.is_dir())
    if subdirs:
        images, labels = [], []
        for label, sub in enumerate(subdirs):
            for img in sorted(sub.iterdir()):
                images.append(load_image(img))
                labels.append(label)
        if not images:
            raise ValueError(f"no images under {path}")
        return np.stack(images), np.asarray(labels, dtype=np.int64), len(subdirs)
    files = sorted(p for p in path.iterdir() if p.is_file())
    if not files:
        raise ValueError(f"no images under {path}")
    images = np.stack([load_image(p) for p in files])
    return images, np.zeros(len(images), dtype=np.int64), 0


@main.command("extract")
@click.option("--images", "images_path", required=True,
              help=".npz archive or directory (class subdirectories = labels)")
@click.option("--out", default=None)
@click.option("--k", "kernel", type=int, default=None)
@click.option("--stages", type=int, default=None)
@click.option("--pool", type=int, default=None)
@click.option("--config", "config_path", default=None)
@guarded
def cmd_extract(images_path, out, kernel, stages, pool, config_path):
    """Extract DCT harmonic features from stored images."""
    cfg = _load_config_file(config_path)
    resolved = {
        "command": "extract",
        "images": str(images_path),
        "k": _resolve("k", kernel, cfg, 3, int),
        "stages": _resolve("stages", stages, cfg, 2, int),
        "pool": _resolve("pool", pool, cfg, 2, int),
    }
    images, labels, classes = _load_images_input(Path(images_path))
    bank = build_dct_bank(resolved["k"])
    features = _extract_chunked(images, bank, resolved["stages"], resolved["pool"])
    dataset = FeatureDataset(features, labels, classes, provenance=str(images_path))
    run_dir = _make_run_dir(out, resolved)
    _archive_config(run_dir, resolved)
    write_features(dataset, run_dir / "features.pvtf")
    click.echo(f"wrote {dataset.n} x {dataset.dim} features to {run_dir}")


_ARCH_FOR_FRAMEWORK = {
    FRAMEWORK_DPSGD: ARCH_LINEAR,
    FRAMEWORK_DPSGLD: ARCH_LINEAR,
    FRAMEWORK_PATE: ARCH_LINEAR,
    FRAMEWORK_DPDFA: ARCH_MLP,
}


def _resolve_train_config(cfg: dict, flags: dict) -> dict:
    framework = _resolve("framework", flags.get("framework"), cfg, None)
    if framework not in FRAMEWORKS:
        raise ValueError(f"framework must be one of {FRAMEWORKS}, got {framework!r}")
    preset = _resolve("preset", flags.get("preset"), cfg, "default")
    if preset not in CLIP_PRESETS:
        raise ValueError(f"preset must be one of {sorted(CLIP_PRESETS)}")
    arch = _resolve("arch", flags.get("arch"), cfg, _ARCH_FOR_FRAMEWORK[framework])
    # 2-layer MLPs only pay off under DPDFA; every other framework pairs
    # with the single-layer classifier, and mixing is a config error.
    if _ARCH_FOR_FRAMEWORK[framework] != arch:
        raise ValueError(
            f"framework {framework} pairs with {_ARCH_FOR_FRAMEWORK[framework]}, "
            f"not {arch}"
        )
    resolved = {
        "command": "train",
        "framework": framework,
        "arch": arch,
        "preset": preset,
        "clip": _resolve("clip", flags.get("clip"), cfg, CLIP_PRESETS[preset], float),
        "sigma": _resolve("sigma", flags.get("sigma"), cfg, 1.0, float),
        "lr": _resolve("lr", flags.get("lr"), cfg, 1.0, float),
        "batch": _resolve("batch", flags.get("batch"), cfg, 256, int),
        "epochs": _resolve("epochs", flags.get("epochs"), cfg, 10, int),
        "delta": _resolve("delta", flags.get("delta"), cfg, 1e-5, float),
        "seed": _resolve("seed", flags.get("seed"), cfg, 0, int),
        "hidden": _resolve("hidden", flags.get("hidden"), cfg, 64, int),
    }
    if framework == FRAMEWORK_DPDFA:
        resolved["dfa"] = {
            "activation_clip": _resolve(
                "dfa_activation_clip", flags.get("dfa_activation_clip"),
                cfg.get("dfa", {}), 1.0, float),
            "error_clip": _resolve(
                "dfa_error_clip", flags.get("dfa_error_clip"),
                cfg.get("dfa", {}), 1.0, float),
            "feedback_scale": _resolve(
                "dfa_feedback_scale", flags.get("dfa_feedback_scale"),
                cfg.get("dfa", {}), 1.0, float),
        }
    if framework == FRAMEWORK_PATE:
        resolved["pate"] = {
            "teachers": _resolve(
                "pate_teachers", flags.get("pate_teachers"),
                cfg.get("pate", {}), 16, int),
            "queries": _resolve(
                "pate_queries", flags.get("pate_queries"),
                cfg.get("pate", {}), 256, int),
            "agg_noise": _resolve(
                "pate_agg_noise", flags.get("pate_agg_noise"),
                cfg.get("pate", {}), 10.0, float),
        }
        resolved["public"] = _resolve("public", flags.get("public"), cfg, None)
        if resolved["public"] is None:
            raise ValueError("framework pate requires --public features")
    return resolved


def _trainer_config_from_resolved(resolved: dict) -> TrainerConfig:
    dfa = None
    pate = None
    if "dfa" in resolved:
        d = resolved["dfa"]
        dfa = DfaConfig(
            activation_clip=d["activation_clip"],
            error_clip=d["error_clip"],
            feedback_scale=d["feedback_scale"],
        )
    if "pate" in resolved:
        p = resolved["pate"]
        pate = PateConfig(
            teachers=p["teachers"], queries=p["queries"], agg_noise=p["agg_noise"]
        )
    return TrainerConfig(
        framework=resolved["framework"],
        clip=ClipSpec(resolved["clip"]),
        noise=NoiseSpec(sigma=resolved["sigma"], seed=resolved["seed"]),
        lr=resolved["lr"],
        expected_batch=resolved["batch"],
        epochs=resolved["epochs"],
        delta=resolved["delta"],
        dfa=dfa,
        pate=pate,
    )


def _init_model(resolved: dict, dim: int, classes: int):
    rng = substream(resolved["seed"], "init")
    if resolved["arch"] == ARCH_MLP:
        return init_mlp(dim, resolved["hidden"], classes, rng)
    return init_linear(dim, classes, rng)


def _run_training(resolved: dict, train_path: str, test_path: str):
    train_set = read_features(train_path)
    test_set = read_features(test_path)
    config = _trainer_config_from_resolved(resolved)
    model = _init_model(resolved, train_set.dim, train_set.classes)
    framework = resolved["framework"]
    if framework == FRAMEWORK_DPSGD:
        return train_dpsgd(train_set, model, config, test_set)
    if framework == FRAMEWORK_DPSGLD:
        return train_dpsgld(train_set, model, config, test_set)
    if framework == FRAMEWORK_DPDFA:
        return train_dpdfa(train_set, model, config, test_set)
    public = read_features(resolved["public"])
    return train_pate(train_set, public, config, test_set)


@main.command("train")
@click.option("--train", "train_path", required=True, help="training PVTF file")
@click.option("--test", "test_path", required=True, help="test PVTF file")
@click.option("--framework", type=click.Choice(FRAMEWORKS), default=None)
@click.option("--arch", type=click.Choice([ARCH_LINEAR, ARCH_MLP]), default=None)
@click.option("--preset", type=click.Choice(sorted(CLIP_PRESETS)), default=None)
@click.option("--clip", type=float, default=None, help="clipping norm C")
@click.option("--sigma", type=float, default=None, help="noise multiplier")
@click.option("--lr", type=float, default=None)
@click.option("--batch", type=int, default=None, help="expected Poisson batch size")
@click.option("--epochs", type=int, default=None)
@click.option("--delta", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--hidden", type=int, default=None, help="MLP hidden width")
@click.option("--dfa-activation-clip", type=float, default=None)
@click.option("--dfa-error-clip", type=float, default=None)
@click.option("--dfa-feedback-scale", type=float, default=None)
@click.option("--pate-teachers", type=int, default=None)
@click.option("--pate-queries", type=int, default=None)
@click.option("--pate-agg-noise", type=float, default=None)
@click.option("--public", default=None, help="public unlabeled PVTF (PATE)")
@click.option("--config", "config_path", default=None)
@click.option("--out", default=None)
@guarded
def cmd_train(train_path, test_path, config_path, out, **flags):
    """Train a private classifier and emit checkpoint + trace files."""
    cfg = _load_config_file(config_path)
    resolved = _resolve_train_config(cfg, flags)
    resolved["train"] = str(train_path)
    resolved["test"] = str(test_path)
    final, trace = _run_training(resolved, train_path, test_path)
    run_dir = _make_run_dir(out, resolved)
    _archive_config(run_dir, resolved)
    save_checkpoint(final, run_dir / "checkpoint.pvtm")
    trace.to_csv(run_dir / "trace.csv")
    with open(run_dir / "trace.json", "w", encoding="utf-8") as fh:
        json.dump(trace.to_json(), fh, indent=2)
        fh.write("\n")
    last = trace.records[-1]
    click.echo(
        f"{resolved['framework']}: test_acc={last.test_accuracy:.4f} "
        f"epsilon={last.epsilon:.4f} (delta={resolved['delta']}) -> {run_dir}"
    )


@main.command("account")
@click.option("--q", type=float, required=True, help="Poisson sampling rate")
@click.option("--sigma", type=float, required=True, help="noise multiplier")
@click.option("--steps", type=int, required=True)
@click.option("--delta", type=float, default=1e-5)
@click.option("--out", default=None, help="optional JSON output path")
@guarded
def cmd_account(q, sigma, steps, delta, out):
    """Query the accountant: epsilon after `steps` subsampled steps."""
    budget = account_training(q, sigma, steps, delta)
    payload = budget.to_json()
    payload.update({"q": q, "sigma": sigma, "steps": steps})
    click.echo(json.dumps(payload, indent=2))
    if out is not None:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def _sweep_point_payload(base: dict, point: dict, index: int) -> dict:
    resolved = dict(base)
    resolved.update({k: v for k, v in point.items() if k != "target_epsilon"})
    resolved["command"] = "sweep-point"
    resolved["index"] = index
    resolved["target_epsilon"] = point.get("target_epsilon")
    return resolved


def _run_sweep_point(args: tuple) -> dict:
    payload, train_path, test_path, out_dir = args
    row = {
        "index": payload["index"],
        "framework": payload.get("framework"),
        "sigma": payload.get("sigma"),
        "lr": payload.get("lr"),
        "clip": payload.get("clip"),
        "target_epsilon": payload.get("target_epsilon"),
        "epsilon": "",
        "best_accuracy": "",
        "status": "ok",
        "error": "",
    }
    try:
        cfg = _resolve_train_config(payload, {})
        cfg["seed"] = derive_seed(payload.get("seed", 0), "sweep", payload["index"])
        target = payload.get("target_epsilon")
        if target is not None and cfg["framework"] == FRAMEWORK_DPSGLD:
            raise ValueError(
                "target_epsilon cannot calibrate dpsgld: its noise scale is "
                "derived from lr, batch and clip; sweep lr instead"
            )
        if target is not None:
            train_set = read_features(train_path)
            q = cfg["batch"] / train_set.n
            steps = cfg["epochs"] * max(1, math.ceil(train_set.n / cfg["batch"]))
            cfg["sigma"] = sigma_for_epsilon(q, steps, cfg["delta"], target)
        final, trace = _run_training(cfg, train_path, test_path)
        point_dir = Path(out_dir) / f"point_{payload['index']:03d}"
        point_dir.mkdir(parents=True, exist_ok=True)
        _archive_config(point_dir, cfg)
        save_checkpoint(final, point_dir / "checkpoint.pvtm")
        trace.to_csv(point_dir / "trace.csv")
        budget = target if target is not None else trace.final_epsilon
        row["sigma"] = cfg["sigma"]
        row["epsilon"] = min(trace.final_epsilon, budget)
        row["best_accuracy"] = trace.best_accuracy(max_epsilon=budget)
    except Exception as exc:  # partial failures are recorded, sweep continues
        row["status"] = "error"
        row["error"] = str(exc)
    return row


@main.command("sweep")
@click.option("--config", "config_path", required=True,
              help="TOML/JSON file with [train] base params and [[grid]] points")
@click.option("--train", "train_path", required=True)
@click.option("--test", "test_path", required=True)
@click.option("--out", default=None)
@guarded
def cmd_sweep(config_path, train_path, test_path, out):
    """Run one training per grid point and collate a utility-vs-epsilon CSV."""
    cfg = _load_config_file(config_path)
    base = cfg.get("train", {})
    grid = cfg.get("grid", [])
    if not grid:
        raise ValueError("sweep config must define at least one [[grid]] point")
    resolved = {"command": "sweep", "train": str(train_path), "test": str(test_path),
                "base": base, "grid": grid}
    run_dir = _make_run_dir(out, resolved)
    _archive_config(run_dir, resolved)
    payloads = [
        (_sweep_point_payload(base, point, i), train_path, test_path, str(run_dir))
        for i, point in enumerate(grid)
    ]
    workers = int(os.environ.get("PRIVTRAIN_THREADS", "1"))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_sweep_point, payloads))
    else:
        rows = [_run_sweep_point(p) for p in payloads]
    rows.sort(key=lambda r: r["index"])
    fields = ["index", "framework", "sigma", "lr", "clip", "target_epsilon",
              "epsilon", "best_accuracy", "status", "error"]
    with open(run_dir / "curve.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    failures = sum(1 for r in rows if r["status"] != "ok")
    click.echo(f"sweep: {len(rows)} points ({failures} failed) -> {run_dir}")
    if failures == len(rows):
        sys.exit(EXIT_COMPUTE)


@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_path", required=True)
@click.option("--test", "test_path", required=True)
@guarded
def cmd_evaluate(checkpoint_path, test_path):
    """Report test accuracy of a stored checkpoint."""
    params, _ = load_checkpoint(checkpoint_path)
    test_set = read_features(test_path)
    acc = batch_accuracy(params, test_set.features, test_set.labels)
    click.echo(json.dumps({
        "checkpoint": str(checkpoint_path),
        "test": str(test_path),
        "n": test_set.n,
        "accuracy": acc,
    }, indent=2))


if __name__ == "__main__":
    main()
