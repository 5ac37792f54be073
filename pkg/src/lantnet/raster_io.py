"""Grayscale rasters and binary change maps, stored as 8-bit binary PGM (P5)."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GT_THRESHOLD = 128


class PGMError(ValueError):
    """Raised when a PGM file cannot be parsed."""


class MagicError(PGMError):
    pass


class HeaderError(PGMError):
    pass


class MaxvalError(PGMError):
    pass


class TruncatedError(PGMError):
    pass


@dataclass(frozen=True)
class RasterImage:
    """2-D intensity grid, values in [0, 255] held as float64, row-major (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"raster must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 255.0:
            raise ValueError("raster values must lie in [0, 255]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view."""
        return self.pixels.ravel()

    @classmethod
    def from_flat(cls, width: int, height: int, data) -> "RasterImage":
        arr = np.asarray(data, dtype=np.float64)
        if arr.size != width * height:
            raise ValueError(f"data length {arr.size} != {width}x{height}")
        return cls(arr.reshape(height, width))


# the difference image obeys the same invariants as any raster
DifferenceImage = RasterImage


@dataclass(frozen=True)
class ChangeMap:
    """Binary map: 0 = unchanged, 1 = changed."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or lab.size == 0:
            raise ValueError(f"change map must be a non-empty 2-D array, got shape {lab.shape}")
        if not np.all((lab == 0) | (lab == 1)):
            raise ValueError("change map labels must be 0 or 1")
        lab = lab.astype(np.uint8)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def decode_pgm(buf: bytes) -> RasterImage:
    if buf[:2] != b"P5":
        raise MagicError(f"bad magic number {buf[:2]!r}, expected b'P5'")
    pos = 2
    fields = {}
    for name in ("width", "height", "maxval"):
        tok, pos = _next_token(buf, pos)
        if not tok:
            raise HeaderError(f"missing {name} in PGM header")
        try:
            value = int(tok)
        except ValueError:
            raise HeaderError(f"invalid {name} {tok!r} in PGM header") from None
        if value <= 0:
            raise HeaderError(f"invalid {name} {value} in PGM header")
        fields[name] = value
    if fields["maxval"] != 255:
        raise MaxvalError(f"unsupported maxval {fields['maxval']} (only 255)")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise HeaderError("missing whitespace after maxval")
    pos += 1
    w, h = fields["width"], fields["height"]
    payload = buf[pos : pos + w * h]
    if len(payload) < w * h:
        raise TruncatedError(f"truncated payload: expected {w * h} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return RasterImage(arr.astype(np.float64))


def read_pgm(path) -> RasterImage:
    return decode_pgm(Path(path).read_bytes())


def encode_pgm(image: RasterImage) -> bytes:
    # np.rint is half-to-even; intensities are non-negative so floor(x + 0.5) is half-up
    data = np.floor(image.pixels + 0.5).clip(0, 255).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + data.tobytes()


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_pgm(image: RasterImage, path) -> None:
    _atomic_write(path, encode_pgm(image))


def change_map_to_raster(cmap: ChangeMap) -> RasterImage:
    return RasterImage(cmap.labels.astype(np.float64) * 255.0)


def write_change_map(cmap: ChangeMap, path) -> None:
    write_pgm(change_map_to_raster(cmap), path)


def binarize(image: RasterImage, threshold: float = GT_THRESHOLD) -> ChangeMap:
    """Ground-truth decoding: intensity >= threshold marks a changed pixel."""
    return ChangeMap((image.pixels >= threshold).astype(np.uint8))


def read_change_map(path) -> ChangeMap:
    return binarize(read_pgm(path))
