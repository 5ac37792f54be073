"""3 x R x R patches from (I1, I2, DI), pseudo-labeled training sets, label noise."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .preclassify import CHANGED, UNCHANGED, PseudoLabelMap
from .raster_io import RasterImage

DEFAULT_MAX_PER_CLASS = 20000


@dataclass(frozen=True)
class PatchConfig:
    r: int = 7
    max_per_class: int = DEFAULT_MAX_PER_CLASS
    seed: int = 0

    def __post_init__(self):
        if not (isinstance(self.r, (int, np.integer)) and self.r % 2 == 1 and 3 <= self.r <= 31):
            raise ValueError(f"patch size r must be odd and in [3, 31], got {self.r}")
        if self.max_per_class < 1:
            raise ValueError(f"max_per_class must be >= 1, got {self.max_per_class}")


@dataclass(frozen=True)
class Sample:
    patch: np.ndarray  # (3, R, R), channels (I1, I2, DI), values in [0, 1]
    label: int
    pixel_index: tuple[int, int]


@dataclass
class SampleSet:
    """Columnar storage for a list of samples; indexing yields `Sample` objects."""

    patches: np.ndarray  # (n, 3, R, R)
    labels: np.ndarray  # (n,) int64
    pixel_index: np.ndarray  # (n, 2) row, col

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i) -> Sample:
        row, col = self.pixel_index[i]
        return Sample(self.patches[i], int(self.labels[i]), (int(row), int(col)))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def r(self) -> int:
        return self.patches.shape[-1]

    def class_counts(self) -> tuple[int, int]:
        ones = int(np.sum(self.labels == 1))
        return len(self) - ones, ones


def _check_same_shape(i1, i2, di):
    if not (i1.shape == i2.shape == di.shape):
        raise ValueError(f"image size mismatch: {i1.shape}, {i2.shape}, {di.shape}")


def channel_stack(i1: RasterImage, i2: RasterImage, di: RasterImage) -> np.ndarray:
    """(3, H, W) stack in channel order (I1, I2, DI), scaled to [0, 1]."""
    _check_same_shape(i1, i2, di)
    return np.stack([i1.pixels, i2.pixels, di.pixels]) / 255.0


def extract_patches(stack: np.ndarray, rows, cols, r: int) -> np.ndarray:
    return kernels.gather_patches(stack, np.asarray(rows), np.asarray(cols), r)


def extract_patch(i1, i2, di, center: tuple[int, int], r: int) -> np.ndarray:
    """3 x r x r window around `center` (row, col), borders replicated."""
    if r % 2 != 1 or r < 1:
        raise ValueError(f"patch size must be odd, got {r}")
    row, col = center
    h, w = i1.shape
    if not (0 <= row < h and 0 <= col < w):
        raise IndexError(f"center {center} outside {h}x{w} image")
    stack = channel_stack(i1, i2, di)
    return extract_patches(stack, [row], [col], r)[0]


def build_training_set(i1, i2, di, labels: PseudoLabelMap, cfg: PatchConfig) -> SampleSet:
    """Balanced pseudo-labeled set: each class shuffled with cfg.seed and capped at max_per_class."""
    _check_same_shape(i1, i2, di)
    if labels.shape != i1.shape:
        raise ValueError(f"label map {labels.shape} does not match images {i1.shape}")
    flat = labels.labels.ravel()
    rng = np.random.default_rng(cfg.seed)
    picked = []
    targets = []
    for cls, target in ((UNCHANGED, 0), (CHANGED, 1)):
        idx = np.flatnonzero(flat == cls)
        if idx.size == 0:
            raise ValueError(f"pseudo-label map has no {'changed' if target else 'unchanged'} pixels")
        idx = rng.permutation(idx)[: cfg.max_per_class]
        picked.append(idx)
        targets.append(np.full(idx.size, target, dtype=np.int64))
    idx = np.concatenate(picked)
    y = np.concatenate(targets)
    order = rng.permutation(idx.size)
    idx, y = idx[order], y[order]
    rows, cols = np.divmod(idx, i1.width)
    patches = extract_patches(channel_stack(i1, i2, di), rows, cols, cfg.r)
    return SampleSet(patches, y, np.stack([rows, cols], axis=1))


def flip_indices(n: int, flip_rate: float, seed: int) -> np.ndarray:
    if not 0.0 <= flip_rate < 1.0:
        raise ValueError(f"flip_rate must be in [0, 1), got {flip_rate}")
    k = int(np.floor(flip_rate * n + 0.5))
    return np.random.default_rng(seed).choice(n, size=k, replace=False)


def inject_label_noise(samples: SampleSet, flip_rate: float, seed: int) -> SampleSet:
    """Flip exactly round(flip_rate * n) labels chosen uniformly without replacement."""
    idx = flip_indices(len(samples), flip_rate, seed)
    y = samples.labels.copy()
    y[idx] = 1 - y[idx]
    return replace(samples, labels=y)
