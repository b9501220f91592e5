"""Two-texel probe encoding and the probemap container.

Each probe takes two 128-bit texels. Bits are packed LSB-first within a
texel and texels are stored little-endian:

* texel 0: bits 0-7 multiplier code, then twelve 10-bit signed codes for
  SH indices 0-3 (RGB interleaved per index);
* texel 1: fifteen 8-bit signed codes for SH indices 4-8, then a zero
  reserved byte.

The multiplier code ``q`` stands for ``2 ** (q / 16 - 8)`` (``q = 0`` is
zero). A normalized value ``v`` in [-1, 1] is stored as
``round((v + 1) / 2 * (2**b - 1))`` and read back as
``2 * code / (2**b - 1) - 1``.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import append_meta, split_meta
from .sh import N_COEFFS

TEXEL_BYTES = 16
PROBE_BYTES = 2 * TEXEL_BYTES
MAX_WIDTH = 4096
MAX_PROBES_PER_MAP = 32768
PMAP_MAGIC = b"WGIP"
PMAP_VERSION = 1
_PMAP_HEADER = struct.Struct("<4sHHHI")

LOW_BITS = 10
HIGH_BITS = 8
N_LOW = 4 * 3
N_HIGH = 5 * 3

MULTIPLIERS = np.concatenate([[0.0], 2.0 ** (np.arange(1, 256) / 16.0 - 8.0)])
MAX_MULTIPLIER = MULTIPLIERS[-1]

# Probes decoded since the last reset, and texels read doing so.
decode_counter = {"probes": 0, "texels": 0}


def reset_decode_counter():
    decode_counter["probes"] = 0
    decode_counter["texels"] = 0


def multiplier_code(m):
    """Smallest code whose multiplier is >= ``m`` (0 for ``m == 0``)."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m > MAX_MULTIPLIER) or np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ValueError(f"coefficient magnitude outside the encodable range (max {MAX_MULTIPLIER:.4g})")
    q = np.searchsorted(MULTIPLIERS[1:], m, side="left") + 1
    return np.where(m == 0, 0, q).astype(np.int64)


def quantize(v, bits):
    levels = (1 << bits) - 1
    return np.clip(np.floor((np.asarray(v) + 1.0) / 2.0 * levels + 0.5), 0, levels).astype(np.int64)


def dequantize(code, bits):
    return 2.0 * np.asarray(code, dtype=np.float64) / ((1 << bits) - 1) - 1.0


def _split(coeffs):
    c = coeffs.reshape(len(coeffs), N_COEFFS * 3)
    return c[:, :N_LOW], c[:, N_LOW:]


def _codes(coeffs):
    """Multiplier and coefficient codes for ``(N, 9, 3)`` probes."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 3 or coeffs.shape[1:] != (N_COEFFS, 3):
        raise ValueError(f"probes must be (N, 9, 3), got {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("cannot encode non-finite coefficients")
    flat = coeffs.reshape(len(coeffs), -1)
    peak = np.abs(flat).max(axis=1)
    q = multiplier_code(peak)
    mult = MULTIPLIERS[q]
    scale = np.where(mult > 0, mult, 1.0)[:, None]
    norm = flat / scale
    low = quantize(norm[:, :N_LOW], LOW_BITS)
    high = quantize(norm[:, N_LOW:], HIGH_BITS)

    # If rounding pulled the peak below the previous multiplier, the
    # decoded probe would re-encode with a smaller code. Push the peak's
    # code one step outward so encode(decode(x)) reproduces x's bytes.
    arg = np.abs(flat).argmax(axis=1)
    rows = np.flatnonzero(q > 1)
    for r in rows:
        j = arg[r]
        bits, codes, col = (LOW_BITS, low, j) if j < N_LOW else (HIGH_BITS, high, j - N_LOW)
        for _ in range(2):
            dec = np.concatenate([dequantize(low[r], LOW_BITS), dequantize(high[r], HIGH_BITS)])
            if multiplier_code(np.abs(dec * mult[r]).max()) == q[r]:
                break
            step = 1 if flat[r, j] > 0 else -1
            codes[r, col] = np.clip(codes[r, col] + step, 0, (1 << bits) - 1)
    return q, low, high


def _pack_fields(fields, total_bits=128):
    """Pack ``[(codes (N, k), width), ...]`` LSB-first into ``(N, 16)`` bytes."""
    n = fields[0][0].shape[0]
    bits = []
    used = 0
    for codes, width in fields:
        codes = np.asarray(codes, dtype=np.int64).reshape(n, -1)
        b = (codes[:, :, None] >> np.arange(width)) & 1
        bits.append(b.reshape(n, -1))
        used += codes.shape[1] * width
    bits.append(np.zeros((n, total_bits - used), dtype=np.int64))
    return np.packbits(np.concatenate(bits, axis=1).astype(np.uint8), axis=1, bitorder="little")


def _unpack_fields(texels, layout):
    bits = np.unpackbits(np.asarray(texels, dtype=np.uint8), axis=1, bitorder="little").astype(np.int64)
    out, pos = [], 0
    for count, width in layout:
        chunk = bits[:, pos:pos + count * width].reshape(len(bits), count, width)
        out.append((chunk << np.arange(width)).sum(axis=2))
        pos += count * width
    return out


def encode_many(coeffs):
    """Encode ``(N, 9, 3)`` probes to ``(N, 32)`` bytes."""
    q, low, high = _codes(coeffs)
    t0 = _pack_fields([(q[:, None], 8), (low, LOW_BITS)])
    t1 = _pack_fields([(high, HIGH_BITS)])
    return np.concatenate([t0, t1], axis=1)


def decode_many(data, lod=0):
    """Decode ``(N, 32)`` probe bytes; ``lod=1`` reads only the first texel."""
    if lod not in (0, 1):
        raise ValueError("lod must be 0 or 1")
    data = np.asarray(data, dtype=np.uint8).reshape(-1, PROBE_BYTES)
    n = len(data)
    q, low = _unpack_fields(data[:, :TEXEL_BYTES], [(1, 8), (N_LOW, LOW_BITS)])
    mult = MULTIPLIERS[q[:, 0]][:, None]
    out = np.zeros((n, N_COEFFS * 3))
    out[:, :N_LOW] = dequantize(low, LOW_BITS) * mult
    if lod == 0:
        (high,) = _unpack_fields(data[:, TEXEL_BYTES:], [(N_HIGH, HIGH_BITS)])
        out[:, N_LOW:] = dequantize(high, HIGH_BITS) * mult
    decode_counter["probes"] += n
    decode_counter["texels"] += n * (2 if lod == 0 else 1)
    return out.reshape(n, N_COEFFS, 3)


@dataclass(frozen=True)
class EncodedProbe:
    pixel0: bytes
    pixel1: bytes

    def __post_init__(self):
        if len(self.pixel0) != TEXEL_BYTES or len(self.pixel1) != TEXEL_BYTES:
            raise ValueError("each probe texel is 16 bytes")

    def to_bytes(self):
        return self.pixel0 + self.pixel1


def encode(probe):
    """Encode one ``(9, 3)`` RGB probe."""
    raw = encode_many(np.asarray(probe, dtype=np.float64)[None])[0].tobytes()
    return EncodedProbe(raw[:TEXEL_BYTES], raw[TEXEL_BYTES:])


def decode(ep, lod=0):
    """Decode one probe to ``(9, 3)``; ``lod=1`` leaves band 2 at zero."""
    return decode_many(np.frombuffer(ep.to_bytes(), dtype=np.uint8)[None], lod)[0]


def probemap_size(probe_count):
    if probe_count < 1:
        raise ValueError("a probemap needs at least one probe")
    if probe_count > MAX_PROBES_PER_MAP:
        raise ValueError(f"at most {MAX_PROBES_PER_MAP} probes fit in one probemap")
    texels = 2 * probe_count
    width = min(MAX_WIDTH, 1 << (texels - 1).bit_length())
    return width, -(-texels // width)


@dataclass(frozen=True, eq=False)
class Probemap:
    """Texture of encoded probes; probe ``i`` occupies texels ``2i, 2i + 1``."""

    width: int
    height: int
    probe_count: int
    texels: bytes

    def __post_init__(self):
        if len(self.texels) != self.width * self.height * TEXEL_BYTES:
            raise ValueError("texel data does not match probemap dimensions")
        if self.width * self.height < 2 * self.probe_count:
            raise ValueError("probemap too small for its probe count")

    def probe_bytes(self):
        """``(probe_count, 32)`` view of the used texels."""
        buf = np.frombuffer(self.texels, dtype=np.uint8)
        return buf[:self.probe_count * PROBE_BYTES].reshape(self.probe_count, PROBE_BYTES)

    def probe(self, i):
        raw = self.probe_bytes()[i].tobytes()
        return EncodedProbe(raw[:TEXEL_BYTES], raw[TEXEL_BYTES:])

    def probes(self):
        return [self.probe(i) for i in range(self.probe_count)]

    def decode(self, lod=0):
        return decode_many(self.probe_bytes(), lod)

    def payload_bytes(self):
        return PROBE_BYTES * self.probe_count

    def same_shape(self, other):
        return (self.width, self.height, self.probe_count) == (other.width, other.height, other.probe_count)


def pack_raw(data):
    """Probemap from ``(N, 32)`` encoded probe bytes."""
    data = np.asarray(data, dtype=np.uint8).reshape(-1, PROBE_BYTES)
    width, height = probemap_size(len(data))
    buf = np.zeros(width * height * TEXEL_BYTES, dtype=np.uint8)
    buf[:data.size] = data.ravel()
    return Probemap(width, height, len(data), buf.tobytes())


def pack_probemap(probes):
    """Pack a list of :class:`EncodedProbe` contiguously, row-major."""
    probes = list(probes)
    if not probes:
        raise ValueError("cannot pack an empty probemap")
    return pack_raw(np.frombuffer(b"".join(p.to_bytes() for p in probes), dtype=np.uint8))


def unpack_probemap(pmap):
    return pmap.probes()


def encode_probemap(coeffs):
    """Encode ``(N, 9, 3)`` probes straight into a probemap."""
    return pack_raw(encode_many(coeffs))


def tod_interpolate(a, b, t):
    """Blend two probemaps in coefficient space and re-encode."""
    if not a.same_shape(b):
        raise ValueError("probemaps differ in size or probe count")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    blend = (1.0 - t) * a.decode(0) + t * b.decode(0)
    return pack_raw(encode_many(blend))


def pmap_bytes(pmap, meta=None):
    header = _PMAP_HEADER.pack(PMAP_MAGIC, PMAP_VERSION, pmap.width, pmap.height, pmap.probe_count)
    return append_meta(header + pmap.texels, meta)


def pmap_from_bytes(data):
    payload, _ = split_meta(data)
    if len(payload) < _PMAP_HEADER.size:
        raise ValueError("truncated probemap file")
    magic, version, width, height, count = _PMAP_HEADER.unpack_from(payload, 0)
    if magic != PMAP_MAGIC:
        raise ValueError("not a probemap file")
    if version != PMAP_VERSION:
        raise ValueError(f"unsupported probemap version {version}")
    texels = payload[_PMAP_HEADER.size:]
    return Probemap(width, height, count, bytes(texels))


def save_pmap(pmap, path, meta=None):
    Path(path).write_bytes(pmap_bytes(pmap, meta))


def load_pmap(path):
    return pmap_from_bytes(Path(path).read_bytes())
