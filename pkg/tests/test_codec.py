from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from probebake.codec import (MAX_MULTIPLIER, MULTIPLIERS, PROBE_BYTES, EncodedProbe, decode, decode_counter,
                             decode_many, dequantize, encode, encode_many, encode_probemap, load_pmap,
                             multiplier_code, pack_probemap, pmap_bytes, pmap_from_bytes, probemap_size,
                             quantize, reset_decode_counter, save_pmap, tod_interpolate, unpack_probemap)

from golden_codec import GOLDEN_CODES, golden_file_bytes, probe_bytes, probe_values

GOLDEN = Path(__file__).with_name("data") / "golden.pmap"

probes = arrays(np.float64, (9, 3), elements=st.floats(-200, 200, allow_nan=False, width=64))


def test_multiplier_codes():
    assert multiplier_code(0.0) == 0
    assert multiplier_code(1.0) == 128
    assert multiplier_code(1.0 + 1e-12) == 129
    assert MULTIPLIERS[multiplier_code(3.7)] >= 3.7 > MULTIPLIERS[multiplier_code(3.7) - 1]
    with pytest.raises(ValueError):
        multiplier_code(MAX_MULTIPLIER * 1.01)


def test_quantize_examples():
    np.testing.assert_array_equal(quantize([-1.0, 0.0, 1.0], 10), [0, 512, 1023])
    np.testing.assert_array_equal(quantize([-1.0, 0.0, 1.0], 8), [0, 128, 255])
    np.testing.assert_allclose(dequantize([0, 1023], 10), [-1.0, 1.0])


def test_golden_file_is_current():
    assert GOLDEN.read_bytes() == golden_file_bytes()


def test_golden_decode():
    pmap = load_pmap(GOLDEN)
    assert (pmap.width, pmap.height, pmap.probe_count) == (8, 1, 4)
    for i, codes in enumerate(GOLDEN_CODES):
        assert pmap.probe(i).to_bytes() == probe_bytes(*codes)
        np.testing.assert_allclose(decode(pmap.probe(i)), probe_values(*codes), rtol=1e-15, atol=0)


def test_golden_reencodes_byte_identical():
    pmap = load_pmap(GOLDEN)
    values = pmap.decode()
    # Probe 0 is all zero; zero re-encodes to midpoint codes, not the golden 511s.
    np.testing.assert_array_equal(encode_many(values[1:]), pmap.probe_bytes()[1:])
    assert not values[0].any()


def test_golden_lod1_reads_first_texel_only():
    pmap = load_pmap(GOLDEN)
    lod0, lod1 = pmap.decode(0), pmap.decode(1)
    np.testing.assert_array_equal(lod1[:, :4], lod0[:, :4])
    assert not lod1[:, 4:].any()


@settings(max_examples=200, deadline=None)
@given(probes)
def test_encode_is_idempotent(x):
    once = encode_many(x[None])
    assert np.array_equal(encode_many(decode_many(once)), once)


@settings(max_examples=200, deadline=None)
@given(probes)
def test_quantization_error_bounds(x):
    dec = decode(encode(x))
    m = MULTIPLIERS[multiplier_code(np.abs(x).max())]
    err = np.abs(dec - x).ravel()
    assert np.all(err[:12] <= 2.0 * m / 1023 + 1e-12)
    assert np.all(err[12:] <= 2.0 * m / 255 + 1e-12)


def test_zero_probe_and_range_checks():
    assert not decode(encode(np.zeros((9, 3)))).any()
    with pytest.raises(ValueError):
        encode(np.full((9, 3), 1e6))
    with pytest.raises(ValueError):
        encode(np.full((9, 3), np.nan))
    with pytest.raises(ValueError):
        encode_many(np.zeros((2, 4, 3)))
    with pytest.raises(ValueError):
        decode_many(np.zeros((1, PROBE_BYTES), np.uint8), lod=2)
    with pytest.raises(ValueError):
        EncodedProbe(b"\0" * 15, b"\0" * 16)


def test_probemap_sizes():
    assert probemap_size(1) == (2, 1)
    assert probemap_size(3) == (8, 1)
    assert probemap_size(2048) == (4096, 1)
    assert probemap_size(2049) == (4096, 2)
    assert probemap_size(32768) == (4096, 16)
    for bad in (0, 32769):
        with pytest.raises(ValueError):
            probemap_size(bad)
    with pytest.raises(ValueError):
        pack_probemap([])


def test_probemap_roundtrip(tmp_path):
    coeffs = np.random.default_rng(0).normal(size=(5, 9, 3))
    pmap = encode_probemap(coeffs)
    assert [p.to_bytes() for p in unpack_probemap(pmap)] == [p.to_bytes() for p in pack_probemap(pmap.probes()).probes()]
    save_pmap(pmap, tmp_path / "a.pmap", {"seed": 3})
    back = load_pmap(tmp_path / "a.pmap")
    assert back.texels == pmap.texels and back.same_shape(pmap)
    assert pmap_from_bytes(pmap_bytes(pmap)).texels == pmap.texels
    assert pmap.payload_bytes() == 5 * PROBE_BYTES
    with pytest.raises(ValueError):
        pmap_from_bytes(b"NOPE" + pmap_bytes(pmap)[4:])
    with pytest.raises(ValueError):
        pmap_from_bytes(b"WG")


def test_decode_counter():
    pmap = encode_probemap(np.ones((6, 9, 3)))
    reset_decode_counter()
    pmap.decode(1)
    assert decode_counter == {"probes": 6, "texels": 6}
    pmap.decode(0)
    assert decode_counter == {"probes": 12, "texels": 18}


def test_time_of_day_blend():
    rng = np.random.default_rng(1)
    a, b = (encode_probemap(rng.normal(size=(3, 9, 3))) for _ in range(2))
    assert tod_interpolate(a, b, 0.0).texels == a.texels
    assert tod_interpolate(a, b, 1.0).texels == b.texels
    mid = tod_interpolate(a, b, 0.5).decode()
    np.testing.assert_allclose(mid, 0.5 * (a.decode() + b.decode()), atol=0.05)
    with pytest.raises(ValueError):
        tod_interpolate(a, encode_probemap(np.ones((4, 9, 3))), 0.5)
    with pytest.raises(ValueError):
        tod_interpolate(a, b, 1.5)
