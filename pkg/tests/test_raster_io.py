import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lantnet.raster_io import (
    ChangeMap,
    HeaderError,
    MagicError,
    MaxvalError,
    RasterImage,
    TruncatedError,
    binarize,
    change_map_to_raster,
    read_pgm,
    write_change_map,
    write_pgm,
)


def test_read_2x2(tmp_path):
    f = tmp_path / "a.pgm"
    f.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = read_pgm(f)
    assert (img.width, img.height) == (2, 2)
    assert img.data.tolist() == [0, 255, 128, 64]


def test_ottawa_header_dimensions(tmp_path):
    f = tmp_path / "ottawa.pgm"
    f.write_bytes(b"P5 350 290 255\n" + bytes(350 * 290))
    img = read_pgm(f)
    assert img.width == 350 and img.height == 290


def test_comments_tolerated(tmp_path):
    f = tmp_path / "c.pgm"
    f.write_bytes(b"P5\n# made by hand\n2 1\n# max\n255\n" + bytes([7, 9]))
    assert read_pgm(f).data.tolist() == [7, 9]


@pytest.mark.parametrize(
    "payload, exc, word",
    [
        (b"P2\n2 2\n255\n" + bytes(4), MagicError, "magic"),
        (b"P5\n2 2\n65535\n" + bytes(8), MaxvalError, "unsupported maxval"),
        (b"P5\n2 2\n255\n" + bytes(3), TruncatedError, "truncated"),
        (b"P5\n2 x\n255\n" + bytes(4), HeaderError, "height"),
        (b"P5\n2", HeaderError, "height"),
    ],
)
def test_parse_errors_name_the_field(tmp_path, payload, exc, word):
    f = tmp_path / "bad.pgm"
    f.write_bytes(payload)
    with pytest.raises(exc, match=word):
        read_pgm(f)


def test_round_trip_bytes(tmp_path):
    img = RasterImage.from_flat(2, 2, [0, 255, 128, 64])
    write_pgm(img, tmp_path / "x.pgm")
    raw = (tmp_path / "x.pgm").read_bytes()
    assert raw == b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64])
    assert np.array_equal(read_pgm(tmp_path / "x.pgm").pixels, img.pixels)


def test_chao_lake_sized_zero_image(tmp_path):
    write_pgm(RasterImage(np.zeros((384, 384))), tmp_path / "z.pgm")
    raw = (tmp_path / "z.pgm").read_bytes()
    header = b"P5\n384 384\n255\n"
    assert raw.startswith(header)
    assert len(raw) - len(header) == 147456


def test_rounds_to_nearest(tmp_path):
    write_pgm(RasterImage(np.array([[254.6, 0.5, 1.49]])), tmp_path / "r.pgm")
    assert read_pgm(tmp_path / "r.pgm").data.tolist() == [255, 1, 1]


def test_write_never_emits_comments(tmp_path):
    write_pgm(RasterImage(np.full((3, 3), 35.0)), tmp_path / "h.pgm")
    raw = (tmp_path / "h.pgm").read_bytes()
    assert raw[: len(b"P5\n3 3\n255\n")] == b"P5\n3 3\n255\n"


@pytest.mark.parametrize(
    "labels, expected",
    [
        (np.ones((3, 3)), [255] * 9),
        (np.zeros((3, 3)), [0] * 9),
        (np.array([[1, 0], [0, 1]]), [255, 0, 0, 255]),
    ],
)
def test_write_change_map(tmp_path, labels, expected):
    write_change_map(ChangeMap(labels), tmp_path / "m.pgm")
    img = read_pgm(tmp_path / "m.pgm")
    assert img.data.tolist() == expected


def test_invariants_enforced():
    with pytest.raises(ValueError):
        RasterImage(np.array([[256.0]]))
    with pytest.raises(ValueError):
        RasterImage(np.array([[-1.0]]))
    with pytest.raises(ValueError):
        ChangeMap(np.array([[2]]))
    with pytest.raises(ValueError):
        RasterImage.from_flat(2, 2, [1, 2, 3])


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        write_pgm(RasterImage(np.zeros((2, 2))), tmp_path / "missing" / "x.pgm")


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_round_trip_identity(tmp_path_factory, pixels):
    path = tmp_path_factory.mktemp("rt") / "p.pgm"
    img = RasterImage(pixels.astype(np.float64))
    write_pgm(img, path)
    assert np.array_equal(read_pgm(path).pixels, img.pixels)


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8))))
def test_binarize_idempotent(pixels):
    once = binarize(RasterImage(pixels.astype(np.float64)))
    twice = binarize(change_map_to_raster(once))
    assert np.array_equal(once.labels, twice.labels)
    assert np.array_equal(once.labels, (pixels >= 128).astype(np.uint8))
