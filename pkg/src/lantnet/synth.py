"""Synthetic SAR-like image pairs with known change regions and gamma speckle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster_io import ChangeMap, RasterImage


@dataclass(frozen=True)
class SceneSpec:
    width: int = 128
    height: int = 128
    n_shapes: int = 4
    background_level: float = 60.0
    change_level: float = 180.0
    speckle_looks: float = 4
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("scene must be at least 1x1")
        if self.n_shapes < 0:
            raise ValueError("n_shapes must be >= 0")
        if not 0 <= self.background_level < self.change_level <= 255:
            raise ValueError("need 0 <= background_level < change_level <= 255")
        if not self.speckle_looks >= 1:
            raise ValueError("speckle_looks must be >= 1")


@dataclass(frozen=True)
class Shape:
    kind: str  # "rect" or "ellipse"
    cy: float
    cx: float
    ry: float  # half extent (rect: rows top..top+2ry-1 are covered)
    rx: float

    def contains(self, row, col):
        if self.kind == "rect":
            return (
                (row >= self.cy - self.ry) & (row < self.cy + self.ry)
                & (col >= self.cx - self.rx) & (col < self.cx + self.rx)
            )
        return ((row - self.cy) / self.ry) ** 2 + ((col - self.cx) / self.rx) ** 2 <= 1.0


class SceneError(ValueError):
    pass


def speckle(rng: np.random.Generator, shape, looks: float) -> np.ndarray:
    """Unit-mean gamma multiplier with shape `looks` (L-look intensity speckle)."""
    return rng.gamma(looks, 1.0 / looks, size=shape)


def place_shapes(spec: SceneSpec, rng: np.random.Generator) -> list[Shape]:
    """Random axis-aligned rectangles (integer corners) and ellipses."""
    lo = max(1, min(spec.width, spec.height) // 20)
    hi = max(lo + 1, min(spec.width, spec.height) // 7)
    shapes = []
    for _ in range(spec.n_shapes):
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        ry = int(rng.integers(lo, hi + 1))
        rx = int(rng.integers(lo, hi + 1))
        cy = int(rng.integers(0, spec.height))
        cx = int(rng.integers(0, spec.width))
        shapes.append(Shape(kind, float(cy), float(cx), float(ry), float(rx)))
    return shapes


def rasterize(shapes, height: int, width: int) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width]
    mask = np.zeros((height, width), dtype=bool)
    for s in shapes:
        mask |= s.contains(rows, cols)
    return mask


def generate(spec: SceneSpec):
    """Returns (i1, i2, truth).  Pixel values are rounded to integers, as an 8-bit file would hold them."""
    rng = np.random.default_rng(spec.seed)
    shapes = place_shapes(spec, rng)
    changed = rasterize(shapes, spec.height, spec.width)
    if changed.all():
        raise SceneError("change regions cover the whole image")
    clean1 = np.full((spec.height, spec.width), float(spec.background_level))
    clean2 = np.where(changed, float(spec.change_level), float(spec.background_level))
    shape = clean1.shape
    i1 = np.clip(np.floor(clean1 * speckle(rng, shape, spec.speckle_looks) + 0.5), 0, 255)
    i2 = np.clip(np.floor(clean2 * speckle(rng, shape, spec.speckle_looks) + 0.5), 0, 255)
    return RasterImage(i1), RasterImage(i2), ChangeMap(changed.astype(np.uint8))


def generate_with_shapes(spec: SceneSpec):
    """Same as `generate` plus the list of placed shapes (same draws)."""
    shapes = place_shapes(spec, np.random.default_rng(spec.seed))
    return (*generate(spec), shapes)
