import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import DATA
from dzcodec.errors import FormatError
from dzcodec.imageio import Image, dumps_ppm, load_ppm, loads_ppm, save_ppm


def test_fixture_save_load_byte_identical(tmp_path):
    raw = (DATA / "fixture_gray.pgm").read_bytes()
    img = load_ppm(DATA / "fixture_gray.pgm")
    save_ppm(tmp_path / "copy.pgm", img)
    assert (tmp_path / "copy.pgm").read_bytes() == raw
    assert (img.width, img.height, img.channels) == (256, 256, 1)


def test_p6_two_pixels():
    img = loads_ppm(b"P6\n2 1\n255\n" + bytes([0, 0, 0, 255, 255, 255]))
    assert img.pixels.shape == (1, 2, 3)
    assert img.pixels[0, 0].tolist() == [0, 0, 0] and img.pixels[0, 1].tolist() == [255, 255, 255]


def test_header_comments_and_whitespace():
    img = loads_ppm(b"P5 # gray\n# another\n 2\t2 255\n" + bytes([1, 2, 3, 4]))
    assert img.pixels[:, :, 0].tolist() == [[1, 2], [3, 4]]


@pytest.mark.parametrize(
    "data",
    [
        b"P5\n2 2\n65535\n" + bytes(8),
        b"P3\n1 1\n255\n0 0 0\n",
        b"P5\n2 2\n255\n" + bytes(3),
        b"P5\n2\n",
        b"P5\nx 2\n255\n" + bytes(4),
        b"P5\n0 2\n255\n",
    ],
)
def test_malformed(data):
    with pytest.raises(FormatError):
        loads_ppm(data)


@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]))))
def test_round_trip(px):
    img = Image(px)
    assert loads_ppm(dumps_ppm(img)) == img


@given(arrays(np.uint8, (4, 5, 1)))
def test_normalized_inverse(px):
    img = Image(px)
    assert Image.from_normalized(img.normalized()) == img


def test_from_normalized_rounds_half_up_and_clips():
    img = Image.from_normalized(np.array([[[0.5 / 255], [1.5 / 255], [-0.2], [1.3]]]))
    assert img.pixels[0, :, 0].tolist() == [1, 2, 0, 255]


def test_bad_channel_count():
    with pytest.raises(FormatError):
        Image(np.zeros((2, 2, 2), dtype=np.uint8))
