"""Log-ratio difference image."""

import numpy as np

from .raster_io import DifferenceImage, RasterImage


class ShapeError(ValueError):
    pass


def log_ratio(i1: RasterImage, i2: RasterImage) -> DifferenceImage:
    """|ln((i2 + 1) / (i1 + 1))| rescaled linearly so that [0, max] maps to [0, 255].

    Computed as |ln(i2 + 1) - ln(i1 + 1)| which is exactly symmetric in its arguments.
    A constant (zero) raw image is returned as all zeros.
    """
    if i1.shape != i2.shape:
        raise ShapeError(
            f"image size mismatch: {i1.width}x{i1.height} vs {i2.width}x{i2.height}"
        )
    raw = np.abs(np.log1p(i2.pixels) - np.log1p(i1.pixels))
    peak = raw.max()
    if peak == 0.0:
        return RasterImage(np.zeros_like(raw))
    out = raw * (255.0 / peak)
    # guarantee the exact endpoint despite rounding in the product
    out[raw == peak] = 255.0
    return RasterImage(np.minimum(out, 255.0))
