"""Vertex-to-probe association and its ``.assoc`` sidecar format."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from ._io import append_meta, split_meta

MAX_PROBES = 256
ASSOC_MAGIC = b"WGIA"
_HEADER = struct.Struct("<4sHI")


@dataclass(frozen=True, eq=False)
class Association:
    """Per-vertex probe indices and convex weights.

    ``indices`` and ``weights`` are ``(n_vertices, n_assoc)``. Entries may
    repeat a probe index (padding) with zero weight.
    """

    indices: np.ndarray
    weights: np.ndarray
    probe_count: int

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if idx.ndim != 2 or idx.shape != w.shape:
            raise ValueError("indices and weights must share a (n_vertices, n_assoc) shape")
        if not 1 <= self.probe_count <= MAX_PROBES:
            raise ValueError(f"probe_count must lie in [1, {MAX_PROBES}]")
        if idx.size and (idx.min() < 0 or idx.max() >= self.probe_count):
            raise ValueError("probe index out of range")
        if np.any(w < -1e-12) or np.any(np.abs(w.sum(1) - 1.0) > 1e-4):
            raise ValueError("vertex weights must be nonnegative and sum to 1")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "probe_count", int(self.probe_count))

    @property
    def n_vertices(self):
        return self.indices.shape[0]

    @property
    def n_assoc(self):
        return self.indices.shape[1]

    def matrix(self):
        """Sparse ``(n_vertices, probe_count)`` weight matrix W."""
        v = np.repeat(np.arange(self.n_vertices), self.n_assoc)
        return sparse.csr_matrix((self.weights.ravel(), (v, self.indices.ravel())),
                                 shape=(self.n_vertices, self.probe_count))

    def quantized(self):
        """Weights as stored on disk: ``round(w * 255)`` then renormalized."""
        q = np.floor(self.weights * 255.0 + 0.5)
        return Association(self.indices, q / q.sum(axis=1, keepdims=True), self.probe_count)

    def nbytes(self):
        return 2 * self.n_assoc * self.n_vertices

    def to_bytes(self, meta=None):
        q = np.floor(self.weights * 255.0 + 0.5).astype(np.uint8)
        body = np.empty((self.n_vertices, self.n_assoc, 2), dtype=np.uint8)
        body[:, :, 0] = self.indices.astype(np.uint8)
        body[:, :, 1] = q
        header = _HEADER.pack(ASSOC_MAGIC, self.probe_count, self.n_vertices)
        return append_meta(header + body.tobytes(), meta)

    @classmethod
    def from_bytes(cls, data):
        payload, _ = split_meta(data)
        if len(payload) < _HEADER.size:
            raise ValueError("truncated association file")
        magic, probe_count, n_vertices = _HEADER.unpack_from(payload, 0)
        if magic != ASSOC_MAGIC:
            raise ValueError("not an association file")
        body = np.frombuffer(payload, dtype=np.uint8, offset=_HEADER.size)
        if n_vertices == 0 or len(body) % (2 * n_vertices):
            raise ValueError("association payload does not match vertex count")
        body = body.reshape(n_vertices, -1, 2)
        q = body[:, :, 1].astype(np.float64)
        total = q.sum(axis=1, keepdims=True)
        if np.any(total == 0):
            raise ValueError("vertex with all-zero weights")
        return cls(body[:, :, 0].astype(np.int64), q / total, probe_count)


def save_association(assoc, path, meta=None):
    Path(path).write_bytes(assoc.to_bytes(meta))


def load_association(path):
    return Association.from_bytes(Path(path).read_bytes())


def read_meta(path):
    return split_meta(Path(path).read_bytes())[1]
