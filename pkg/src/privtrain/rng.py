"""Named deterministic random streams.

Every random draw in the toolkit comes from a substream addressed by a base
seed plus a path of labels, e.g. ``substream(seed, "batch", epoch, step)``.
The generator family is part of the external reproducibility contract:
Philox (counter-based, numpy's ``np.random.Philox``) keyed through
``np.random.SeedSequence`` with the path hashed into the spawn key. String
labels are hashed with blake2b to a 32-bit word; integers are used as-is.
Identical (seed, path) pairs produce bit-identical draws on every platform;
distinct paths are statistically independent.

A stream handle is single-owner: callers must not share one generator
across threads. Parallel work derives one substream per unit of work.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _path_word(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream path integers must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=4).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream path parts must be str or int, got {type(part).__name__}")


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Return the Philox generator owned by ``(seed, *path)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = tuple(_path_word(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path: int | str) -> int:
    """Fold a path into a fresh 63-bit seed (for handing to subprocesses)."""
    key = tuple(_path_word(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
