"""Primitive randomized operations shared by the DP trainers.

L2 clipping, Gaussian perturbation, Poisson batch sampling, and noisy
vote aggregation. Everything randomized takes an explicit generator (see
:mod:`privtrain.rng`) and is bit-reproducible given the stream state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClipSpec:
    """L2 clipping ball of radius ``threshold`` (the sensitivity C)."""

    threshold: float

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"clip threshold must be > 0, got {self.threshold}")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise multiplier sigma (std per unit L2 sensitivity) plus base seed.

    sigma = 0 is allowed only as an explicit test mode; the accountant then
    reports epsilon = +inf for any accounted release.
    """

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class VoteHistogram:
    """Per-class vote counts from an ensemble of teachers."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) == 0:
            raise ValueError("histogram needs at least one class")
        if any(c < 0 for c in self.counts):
            raise ValueError("vote counts must be non-negative")

    @property
    def num_teachers(self) -> int:
        return int(sum(self.counts))


def clip_l2(vector: np.ndarray, spec: ClipSpec) -> np.ndarray:
    """Scale ``vector`` onto the L2 ball of radius ``spec.threshold``.

    Returns vector * min(1, C / ||vector||); direction is preserved and the
    zero vector maps to itself.
    """
    v = np.asarray(vector, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("clip_l2 input must be finite")
    norm = float(np.linalg.norm(v))
    if norm <= spec.threshold:
        return v.copy()
    return v * (spec.threshold / norm)


def gaussian_perturb(
    vector: np.ndarray,
    spec: NoiseSpec,
    sensitivity: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Add i.i.d. Normal(0, (sigma * sensitivity)^2) noise to each entry."""
    if sensitivity < 0:
        raise ValueError(f"sensitivity must be >= 0, got {sensitivity}")
    v = np.asarray(vector, dtype=float)
    z = rng.standard_normal(v.shape)
    return v + (spec.sigma * sensitivity) * z


def poisson_sample(n: int, q: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of a Poisson-sampled batch: each of 0..n-1 kept with prob q.

    The result may be empty; callers treat that as a valid skipped step.
    """
    if n < 0:
        raise ValueError(f"dataset size must be >= 0, got {n}")
    if not 0 <= q <= 1:
        raise ValueError(f"sampling rate must lie in [0, 1], got {q}")
    mask = rng.random(n) < q
    return np.flatnonzero(mask)


def noisy_argmax(
    hist: VoteHistogram, noise_scale: float, rng: np.random.Generator
) -> int:
    """Argmax over counts[c] + Normal(0, noise_scale^2).

    Ties after noise break toward the lowest class index, so noise_scale = 0
    reduces to a plain plurality vote.
    """
    if noise_scale < 0:
        raise ValueError(f"noise scale must be >= 0, got {noise_scale}")
    counts = np.asarray(hist.counts, dtype=float)
    scores = counts + noise_scale * rng.standard_normal(counts.shape)
    return int(np.argmax(scores))
