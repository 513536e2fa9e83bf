import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dzcodec.coder import (
    BITSTREAM_MAGIC,
    BitstreamHeader,
    CompressedImage,
    ideal_bits,
    range_decode,
    range_encode,
    read_bitstream,
    write_bitstream,
)
from dzcodec.errors import DecodeError, EncodingError, FormatError
from dzcodec.quant import FrequencyTable, frequencies_from_probabilities


def random_table(rng, n=None, s_min=None):
    n = int(rng.integers(1, 60)) if n is None else n
    s_min = int(rng.integers(-30, 5)) if s_min is None else s_min
    return FrequencyTable.from_freqs(s_min, frequencies_from_probabilities(rng.dirichlet(np.full(n, 0.3))))


def draw(rng, table, count):
    p = np.asarray(table.freqs) / table.total
    return rng.choice(len(p), size=count, p=p) + table.s_min


def entropy_bits(symbols, table):
    """Ideal code length, computed directly from the table (oracle)."""
    return sum(-np.log2(table.freqs[s - table.s_min] / table.total) for s in symbols)


def test_empty_stream():
    t = FrequencyTable.from_freqs(0, [1, 65535])
    payload = range_encode(np.zeros((0, 1), dtype=np.int64), [t])
    assert len(payload) <= 8
    assert range_decode(payload, [t], 0).shape == (0, 1)


def test_single_symbol_alphabet():
    t = FrequencyTable.from_freqs(3, [65536])
    sym = np.full((5000, 1), 3)
    payload = range_encode(sym, [t])
    assert len(payload) <= 8
    np.testing.assert_array_equal(range_decode(payload, [t], 5000), sym)


def test_efficiency_on_own_distribution():
    rng = np.random.default_rng(0)
    t = random_table(rng, 40)
    sym = draw(rng, t, 10_000)
    payload = range_encode(sym[:, None], [t])
    ideal = entropy_bits(sym, t)
    assert ideal == pytest.approx(ideal_bits(sym[:, None], [t]), rel=1e-9)
    assert 8 * len(payload) <= 1.01 * ideal + 16 * 8


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 400))
def test_round_trip_property(seed, channels, count):
    rng = np.random.default_rng(seed)
    tables = [random_table(rng) for _ in range(channels)]
    sym = np.stack([draw(rng, t, count) for t in tables], axis=1) if count else np.zeros((0, channels), int)
    np.testing.assert_array_equal(range_decode(range_encode(sym, tables), tables, count), sym)


def test_round_trip_many_tables():
    rng = np.random.default_rng(1)
    for _ in range(100):
        t = random_table(rng)
        sym = draw(rng, t, 1000)
        np.testing.assert_array_equal(range_decode(range_encode(sym[:, None], [t]), [t], 1000)[:, 0], sym)


def test_extreme_skew_round_trip():
    t = FrequencyTable.from_freqs(-1, [1, 65534, 1])
    rng = np.random.default_rng(2)
    sym = rng.choice([-1, 0, 1], size=(20000, 1), p=[0.05, 0.9, 0.05])
    np.testing.assert_array_equal(range_decode(range_encode(sym, [t]), [t], 20000), sym)


def test_out_of_range_symbol_names_position():
    t = FrequencyTable.from_freqs(0, [30000, 35536])
    sym = np.array([[0, 1], [1, 5]])
    with pytest.raises(EncodingError, match="patch 1, channel 1"):
        range_encode(sym, [t, t])


def test_truncated_payload():
    rng = np.random.default_rng(3)
    t = random_table(rng, 30)
    sym = draw(rng, t, 2000)[:, None]
    payload = range_encode(sym, [t])
    with pytest.raises(DecodeError):
        range_decode(payload[: len(payload) // 2], [t], 2000)


def test_bit_flips_are_detected_or_change_symbols():
    rng = np.random.default_rng(4)
    t = random_table(rng, 20)
    sym = draw(rng, t, 500)[:, None]
    payload = bytearray(range_encode(sym, [t]))
    for _ in range(50):
        corrupt = bytearray(payload)
        pos = int(rng.integers(0, len(corrupt) - 4))
        corrupt[pos] ^= 1 << int(rng.integers(0, 8))
        try:
            out = range_decode(bytes(corrupt), [t], 500)
        except DecodeError:
            continue
        assert not np.array_equal(out, sym)


def test_mismatched_table_totals():
    with pytest.raises(EncodingError):
        range_encode(np.zeros((1, 2), int), [FrequencyTable.from_freqs(0, [4]), FrequencyTable.from_freqs(0, [8])])


# -- container -------------------------------------------------------------------

headers = st.builds(
    lambda w, h, c, p, n, q, off, mh, flags, seed: BitstreamHeader(
        w, h, c, p, n, float(np.float32(q)), float(np.float32(off)), mh,
        np.random.default_rng(seed).integers(-300, 0, n), np.random.default_rng(seed + 1).integers(0, 300, n), flags,
    ),
    st.integers(1, 65535), st.integers(1, 65535), st.sampled_from([1, 3]), st.integers(1, 64),
    st.integers(1, 32), st.floats(0.01, 10), st.floats(0.01, 0.5), st.integers(0, 2**64 - 1),
    st.integers(0, 1), st.integers(0, 1000),
)


@given(headers, st.binary(max_size=200))
def test_container_round_trip(header, payload):
    h2, p2 = read_bitstream(write_bitstream(header, payload))
    assert h2 == header and p2 == payload


def _sample():
    header = BitstreamHeader(10, 12, 1, 8, 2, 1.0, 0.45, 0xDEADBEEF, [-3, -4], [3, 4])
    return header, write_bitstream(header, b"\x01\x02\x03\x04\x05")


def test_wrong_magic():
    _, data = _sample()
    with pytest.raises(FormatError):
        read_bitstream(b"XXXX" + data[4:])


def test_wrong_version():
    _, data = _sample()
    with pytest.raises(FormatError):
        read_bitstream(data[:4] + b"\x09" + data[5:])


def test_header_crc_flip():
    _, data = _sample()
    corrupt = bytearray(data)
    corrupt[10] ^= 0x10
    with pytest.raises(FormatError, match="CRC"):
        read_bitstream(bytes(corrupt))


def test_truncated_payload_in_container():
    _, data = _sample()
    with pytest.raises(DecodeError):
        read_bitstream(data[:-2])


def test_trailing_garbage():
    _, data = _sample()
    with pytest.raises(FormatError):
        read_bitstream(data + b"\x00")


def test_layout_is_little_endian_with_crc():
    header, data = _sample()
    assert data[:4] == BITSTREAM_MAGIC
    assert struct.unpack_from("<HH", data, 6) == (10, 12)
    end = len(data) - 5 - 4
    assert struct.unpack_from("<I", data, end)[0] == zlib.crc32(data[:end])
    assert CompressedImage.from_bytes(data).header == header
