"""Non-learned feature extraction and the single-image dataset generator.

The extractor convolves images with the orthonormal 2-D DCT-II filter
bank, takes magnitudes, and average-pools, repeating for a fixed number of
stages; a global average pool per response map yields the feature vector
(D = channels * (K^2)^stages). There is no randomness anywhere in the
extraction path.

The dataset generator applies aggressive augmentations (area-scaled crop,
resize, rotation, contrast jitter, additive Gaussian noise) to one source
image, one independent RNG substream per output index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .rng import substream

# Guard against accidental exponential blow-up of the response-map count.
DEFAULT_DIM_CAP = 65536


@dataclass(frozen=True)
class DctFilterBank:
    """K^2 orthonormal DCT-II basis filters of size K x K.

    filters[p * K + q] is the (p, q) frequency filter; (0, 0) is the
    constant 1/K matrix and the flattened filters are orthonormal.
    """

    kernel_size: int
    filters: np.ndarray

    def __post_init__(self):
        k = self.kernel_size
        if self.filters.shape != (k * k, k, k):
            raise ValueError("filter stack must have shape (K^2, K, K)")


def _dct_basis_1d(k: int) -> np.ndarray:
    m = np.arange(k)
    basis = np.zeros((k, k))
    for p in range(k):
        scale = math.sqrt(1.0 / k) if p == 0 else math.sqrt(2.0 / k)
        basis[p] = scale * np.cos(math.pi * (2 * m + 1) * p / (2 * k))
    return basis


def build_dct_bank(k: int) -> DctFilterBank:
    """Separable orthonormal 2-D DCT-II basis at kernel size k."""
    if k < 1:
        raise ValueError(f"kernel size must be >= 1, got {k}")
    basis = _dct_basis_1d(k)
    filters = np.einsum("pm,qn->pqmn", basis, basis).reshape(k * k, k, k)
    return DctFilterBank(k, filters)


def _correlate_bank(maps: np.ndarray, bank: DctFilterBank) -> np.ndarray:
    """Valid cross-correlation of (N, C, H, W) maps with every filter.

    Returns (N, C * K^2, H', W'). With magnitudes taken afterwards this
    equals true convolution: the DCT filters are (anti)symmetric under
    flipping, so the two differ only in sign. Canonical banks take a
    separable row/column path; a custom filter stack falls back to direct
    window contraction.
    """
    k = bank.kernel_size
    basis = _dct_basis_1d(k)
    canonical = np.einsum("pm,qn->pqmn", basis, basis).reshape(k * k, k, k)
    if np.array_equal(bank.filters, canonical):
        return _correlate_separable(maps, basis.astype(maps.dtype))
    windows = sliding_window_view(maps, (k, k), axis=(2, 3))
    resp = np.tensordot(windows, bank.filters, axes=([4, 5], [1, 2]))
    # (N, C, H', W', K^2) -> (N, C * K^2, H', W')
    resp = np.moveaxis(resp, -1, 2)
    n, c, f, h, w = resp.shape
    return resp.reshape(n, c * f, h, w)


def _correlate_separable(maps: np.ndarray, basis: np.ndarray) -> np.ndarray:
    k = basis.shape[0]
    n, c, h, w = maps.shape
    lo = k // 2
    hi = k - 1 - lo  # trailing trim for the valid region of correlate1d
    outs = []
    for p in range(k):
        rows = ndimage.correlate1d(maps, basis[p], axis=2, mode="constant")
        rows = rows[:, :, lo : h - hi, :]
        for q in range(k):
            full = ndimage.correlate1d(rows, basis[q], axis=3, mode="constant")
            outs.append(full[:, :, :, lo : w - hi])
    resp = np.stack(outs, axis=2)  # (N, C, K^2, H', W')
    return resp.reshape(n, c * k * k, h - k + 1, w - k + 1)


def _avg_pool(maps: np.ndarray, pool: int) -> np.ndarray:
    """Non-overlapping average pooling on (N, C, H, W); remainders dropped.

    A map smaller than the window is left unchanged (the trailing global
    average pool handles the final reduction).
    """
    if pool == 1:
        return maps
    n, c, h, w = maps.shape
    if h < pool or w < pool:
        return maps
    ph, pw = h // pool, w // pool
    trimmed = maps[:, :, : ph * pool, : pw * pool]
    return trimmed.reshape(n, c, ph, pool, pw, pool).mean(axis=(3, 5))


def extract_batch(
    images: np.ndarray,
    bank: DctFilterBank,
    stages: int = 2,
    pool: int = 2,
    dim_cap: int = DEFAULT_DIM_CAP,
) -> np.ndarray:
    """Feature vectors for a batch of images (N, H, W) or (N, H, W, C).

    Per stage: valid correlation of every map with every bank filter,
    magnitude, average-pool; after the last stage each response map is
    globally averaged. Deterministic, no RNG.
    """
    if stages < 1:
        raise ValueError(f"stages must be >= 1, got {stages}")
    if pool < 1:
        raise ValueError(f"pool must be >= 1, got {pool}")
    imgs = np.asarray(images)
    if imgs.dtype != np.float32:  # float32 in, float32 through; else float64
        imgs = imgs.astype(float)
    if imgs.ndim == 3:
        imgs = imgs[..., None]
    if imgs.ndim != 4:
        raise ValueError("expected (N, H, W) or (N, H, W, C) images")
    if imgs.min() < -1e-9 or imgs.max() > 1 + 1e-9:
        raise ValueError("pixel values must lie in [0, 1]")
    channels = imgs.shape[3]
    k = bank.kernel_size
    out_dim = channels * (k * k) ** stages
    if out_dim > dim_cap:
        raise ValueError(
            f"feature dimension {out_dim} exceeds the cap {dim_cap}"
        )
    maps = np.moveaxis(imgs, 3, 1)  # (N, C, H, W)
    for stage in range(stages):
        if maps.shape[2] < k or maps.shape[3] < k:
            raise ValueError(
                f"stage {stage}: map size {maps.shape[2]}x{maps.shape[3]} "
                f"is smaller than the {k}x{k} kernel"
            )
        maps = np.abs(_correlate_bank(maps, bank))
        maps = _avg_pool(maps, pool)
    return maps.mean(axis=(2, 3))


def harmonic_extract(
    image: np.ndarray,
    bank: DctFilterBank,
    stages: int = 2,
    pool: int = 2,
    dim_cap: int = DEFAULT_DIM_CAP,
) -> np.ndarray:
    """Feature vector of one image (H, W) or (H, W, C) with values in [0, 1]."""
    img = np.asarray(image, dtype=float)
    if img.ndim not in (2, 3):
        raise ValueError("expected a single (H, W) or (H, W, C) image")
    return extract_batch(img[None, ...], bank, stages, pool, dim_cap)[0]


@dataclass(frozen=True)
class AugmentSpec:
    """Parameters of the single-image synthetic dataset generator.

    crop_scale_range is an area fraction of the source (aspect preserved);
    rotation is uniform in +-rotation_range_degrees; contrast multiplies
    the deviation from the image mean; noise is additive Gaussian per
    pixel. Outputs are clamped to [0, 1].
    """

    output_count: int = 50000
    output_size: tuple[int, int] = (32, 32)
    crop_scale_range: tuple[float, float] = (0.08, 1.0)
    rotation_range_degrees: float = 30.0
    contrast_range: tuple[float, float] = (0.6, 1.4)
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.output_count < 1:
            raise ValueError("output_count must be >= 1")
        if len(self.output_size) != 2 or min(self.output_size) < 1:
            raise ValueError("output_size must be two positive integers")
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("crop_scale_range must satisfy 0 < lo <= hi <= 1")
        clo, chi = self.contrast_range
        if not 0 < clo <= chi:
            raise ValueError("contrast_range must be positive and ordered")
        if self.rotation_range_degrees < 0:
            raise ValueError("rotation range must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def _resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h, w = img.shape[:2]
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return img
    zoom = (oh / h, ow / w) + (1,) * (img.ndim - 2)
    out = ndimage.zoom(img, zoom, order=1, mode="nearest")
    if out.shape[:2] != (oh, ow):  # guard against rounding in zoom
        out = out[:oh, :ow]
    return out


def augment_single_image(image: np.ndarray, spec: AugmentSpec) -> np.ndarray:
    """Generate spec.output_count augmented views of one source image.

    Per output index: area-scaled random crop -> resize to output_size ->
    random rotation -> contrast jitter -> additive Gaussian noise -> clamp
    to [0, 1]. Output index i depends only on (spec.seed, i), so the set
    is reproducible and parallelizable per index.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise ValueError("expected an (H, W) or (H, W, C) source image")
    if img.min() < -1e-9 or img.max() > 1 + 1e-9:
        raise ValueError("source pixel values must lie in [0, 1]")
    h, w = img.shape[:2]
    oh, ow = spec.output_size
    lo = spec.crop_scale_range[0]
    min_side = math.sqrt(lo)
    if round(h * min_side) < oh or round(w * min_side) < ow:
        raise ValueError(
            "infeasible crop geometry: minimum crop "
            f"{round(h * min_side)}x{round(w * min_side)} is smaller than "
            f"the {oh}x{ow} output"
        )
    out = np.empty((spec.output_count, oh, ow, img.shape[2]))
    for i in range(spec.output_count):
        rng = substream(spec.seed, "augment", i)
        view = _augment_one(img, spec, rng)
        out[i] = view
    return out


def _augment_one(
    img: np.ndarray, spec: AugmentSpec, rng: np.random.Generator
) -> np.ndarray:
    h, w = img.shape[:2]
    lo, hi = spec.crop_scale_range
    side = math.sqrt(rng.uniform(lo, hi))
    ch = max(1, round(h * side))
    cw = max(1, round(w * side))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    view = img[top : top + ch, left : left + cw]
    view = _resize_bilinear(view, spec.output_size)
    if spec.rotation_range_degrees > 0:
        angle = rng.uniform(
            -spec.rotation_range_degrees, spec.rotation_range_degrees
        )
        if angle != 0.0:
            view = ndimage.rotate(
                view, angle, axes=(1, 0), reshape=False, order=1, mode="nearest"
            )
    clo, chi = spec.contrast_range
    if (clo, chi) != (1.0, 1.0):
        factor = rng.uniform(clo, chi)
        mean = view.mean()
        view = (view - mean) * factor + mean
    if spec.noise_std > 0:
        view = view + rng.normal(0.0, spec.noise_std, size=view.shape)
    return np.clip(view, 0.0, 1.0)


def load_image(path) -> np.ndarray:
    """Read a PNG/PPM image into float (H, W, C) in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    return arr


def save_image(image: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)
