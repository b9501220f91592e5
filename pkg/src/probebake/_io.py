"""Metadata trailer shared by the binary formats.

Payload is followed by ``json bytes | u32 json length | b"META"``. Readers
locate the trailer from the end of the file, so fixed-layout payloads keep
their documented offsets.
"""

import json
import struct

META_TAG = b"META"


def append_meta(payload, meta):
    if meta is None:
        return bytes(payload)
    js = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return bytes(payload) + js + struct.pack("<I", len(js)) + META_TAG


def split_meta(data):
    """Return ``(payload, meta dict or None)``."""
    if len(data) >= 8 and data[-4:] == META_TAG:
        (n,) = struct.unpack_from("<I", data, len(data) - 8)
        start = len(data) - 8 - n
        if start >= 0:
            try:
                return data[:start], json.loads(data[start:len(data) - 8].decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                pass
    return data, None
