"""Triangle meshes, edge adjacency and blue-noise surface sampling."""

import json
import math
import struct
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

DEGENERATE_AREA = 1e-10
NORMAL_TOL = 1e-5


class MeshError(ValueError):
    pass


def _triangle_cross(vertices, triangles):
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return np.cross(b - a, c - a)


def area_weighted_normals(vertices, triangles):
    """Per-vertex normals from summed (area-scaled) face cross products."""
    vertices = np.asarray(vertices, dtype=np.float64)
    cross = _triangle_cross(vertices, triangles)
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, triangles[:, k], cross)
    norms = np.linalg.norm(acc, axis=1)
    out = np.tile([0.0, 0.0, 1.0], (len(vertices), 1))
    ok = norms > 0
    out[ok] = acc[ok] / norms[ok, None]
    return out


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle mesh in local space (meters)."""

    vertices: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        n = np.ascontiguousarray(self.normals, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if n.shape != v.shape:
            raise MeshError("need exactly one normal per vertex")
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise MeshError("triangles must be a non-empty (m, 3) index array")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        if np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > NORMAL_TOL):
            raise MeshError("vertex normals must be unit length")
        areas = 0.5 * np.linalg.norm(_triangle_cross(v, t), axis=1)
        if np.any(areas < DEGENERATE_AREA):
            raise MeshError("mesh contains degenerate triangles")
        for arr in (v, n, t):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "triangles", t)

    @classmethod
    def from_arrays(cls, vertices, triangles, normals=None, name="mesh"):
        """Build a mesh, dropping degenerate triangles with a warning."""
        vertices = np.asarray(vertices, dtype=np.float64)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle index out of range")
        areas = 0.5 * np.linalg.norm(_triangle_cross(vertices, triangles), axis=1)
        bad = areas < DEGENERATE_AREA
        if bad.all():
            raise MeshError(f"{name}: every triangle is degenerate")
        if bad.any():
            warnings.warn(f"{name}: dropped {int(bad.sum())} degenerate triangle(s)")
            triangles = triangles[~bad]
        if normals is None:
            normals = area_weighted_normals(vertices, triangles)
        else:
            normals = np.asarray(normals, dtype=np.float64)
            lens = np.linalg.norm(normals, axis=1)
            fallback = area_weighted_normals(vertices, triangles)
            normals = np.where(lens[:, None] > 0, normals / np.maximum(lens, 1e-300)[:, None], fallback)
        return cls(vertices, normals, triangles, name)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def face_cross(self):
        return _triangle_cross(self.vertices, self.triangles)

    @cached_property
    def areas(self):
        return 0.5 * np.linalg.norm(self.face_cross, axis=1)

    @cached_property
    def face_normals(self):
        return self.face_cross / (2.0 * self.areas[:, None])

    @property
    def total_area(self):
        return float(self.areas.sum())

    @cached_property
    def vertex_neighbors(self):
        """Sorted 1-ring vertex indices per vertex."""
        nbrs = [set() for _ in range(self.n_vertices)]
        for a, b, c in self.triangles.tolist():
            nbrs[a].update((b, c))
            nbrs[b].update((a, c))
            nbrs[c].update((a, b))
        return [sorted(s) for s in nbrs]

    def transformed(self, transform):
        """Copy with a rigid 4x4 transform applied to positions and normals."""
        transform = np.asarray(transform, dtype=np.float64)
        rot, trans = transform[:3, :3], transform[:3, 3]
        normals = self.normals @ rot.T
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return Mesh(self.vertices @ rot.T + trans, normals, self.triangles, self.name)


def triangle_area(mesh, triangle):
    """Area of one triangle in m^2."""
    a, b, c = mesh.vertices[mesh.triangles[triangle]]
    return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a)))


def merge_meshes(meshes, name="merged"):
    verts, norms, tris = [], [], []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        norms.append(m.normals)
        tris.append(m.triangles + offset)
        offset += m.n_vertices
    return Mesh(np.concatenate(verts), np.concatenate(norms), np.concatenate(tris), name)


# ---------------------------------------------------------------------------
# I/O

def _parse_obj(path):
    positions, normals = [], []
    faces = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            positions.append([float(x) for x in parts[1:4]])
        elif tag == "vn":
            normals.append([float(x) for x in parts[1:4]])
        elif tag == "f":
            corners = []
            for tok in parts[1:]:
                fields = tok.split("/")
                vi = int(fields[0])
                vi = vi - 1 if vi > 0 else len(positions) + vi
                ni = None
                if len(fields) >= 3 and fields[2]:
                    ni = int(fields[2])
                    ni = ni - 1 if ni > 0 else len(normals) + ni
                corners.append((vi, ni))
            if len(corners) < 3:
                raise MeshError(f"{path}:{lineno}: face with fewer than 3 vertices")
            faces.append(corners)
    return positions, normals, faces


def _load_obj(path):
    positions, normals, faces = _parse_obj(path)
    if not faces:
        raise MeshError(f"{path}: no faces")
    has_normals = all(ni is not None for face in faces for _, ni in face)
    if not has_normals:
        tris = []
        for face in faces:
            for k in range(1, len(face) - 1):
                tris.append((face[0][0], face[k][0], face[k + 1][0]))
        return Mesh.from_arrays(positions, tris, name=Path(path).stem)
    # Split vertices on distinct (position, normal) corners.
    remap = {}
    verts, norms, tris = [], [], []
    for face in faces:
        ids = []
        for key in face:
            if key not in remap:
                remap[key] = len(verts)
                verts.append(positions[key[0]])
                norms.append(normals[key[1]])
            ids.append(remap[key])
        for k in range(1, len(ids) - 1):
            tris.append((ids[0], ids[k], ids[k + 1]))
    return Mesh.from_arrays(verts, tris, normals=norms, name=Path(path).stem)


_GLTF_COMPONENTS = {5121: np.uint8, 5123: np.uint16, 5125: np.uint32, 5126: np.float32}
_GLTF_WIDTH = {"SCALAR": 1, "VEC3": 3}


def _gltf_accessor(doc, binary, index):
    acc = doc["accessors"][index]
    view = doc["bufferViews"][acc["bufferView"]]
    dtype = np.dtype(_GLTF_COMPONENTS[acc["componentType"]]).newbyteorder("<")
    width = _GLTF_WIDTH[acc["type"]]
    start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
    stride = view.get("byteStride", dtype.itemsize * width)
    count = acc["count"]
    rows = [
        np.frombuffer(binary, dtype=dtype, count=width, offset=start + i * stride)
        for i in range(count)
    ] if stride != dtype.itemsize * width else [
        np.frombuffer(binary, dtype=dtype, count=width * count, offset=start)
    ]
    return np.concatenate(rows).reshape(count, width)


def _load_glb(path):
    data = Path(path).read_bytes()
    magic, version, length = struct.unpack_from("<4sII", data, 0)
    if magic != b"glTF" or version != 2:
        raise MeshError(f"{path}: not a binary glTF 2.0 file")
    offset, doc, binary = 12, None, b""
    while offset < min(length, len(data)):
        chunk_len, chunk_type = struct.unpack_from("<II", data, offset)
        chunk = data[offset + 8: offset + 8 + chunk_len]
        if chunk_type == 0x4E4F534A:
            doc = json.loads(chunk.decode("utf-8"))
        elif chunk_type == 0x004E4942:
            binary = chunk
        offset += 8 + chunk_len
    if doc is None or not doc.get("meshes"):
        raise MeshError(f"{path}: no mesh in glTF document")
    prim = doc["meshes"][0]["primitives"][0]
    if prim.get("mode", 4) != 4:
        raise MeshError(f"{path}: only triangle primitives are supported")
    attrs = prim["attributes"]
    positions = _gltf_accessor(doc, binary, attrs["POSITION"]).astype(np.float64)
    normals = None
    if "NORMAL" in attrs:
        normals = _gltf_accessor(doc, binary, attrs["NORMAL"]).astype(np.float64)
    if "indices" in prim:
        tris = _gltf_accessor(doc, binary, prim["indices"]).astype(np.int64).reshape(-1, 3)
    else:
        tris = np.arange(len(positions)).reshape(-1, 3)
    return Mesh.from_arrays(positions, tris, normals=normals, name=Path(path).stem)


def load_mesh(path):
    """Load a Wavefront ``.obj`` or binary glTF ``.glb`` mesh."""
    path = Path(path)
    if not path.is_file():
        raise MeshError(f"cannot read mesh file {path}")
    suffix = path.suffix.lower()
    try:
        if suffix == ".obj":
            return _load_obj(path)
        if suffix == ".glb":
            return _load_glb(path)
    except (ValueError, KeyError, IndexError, struct.error) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"{path}: malformed mesh file ({exc})") from exc
    raise MeshError(f"unsupported mesh format {suffix!r}")


def save_obj(mesh, path):
    lines = [f"# {mesh.name}"]
    lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"vn {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.normals]
    lines += [f"f {a + 1}//{a + 1} {b + 1}//{b + 1} {c + 1}//{c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def save_glb(mesh, path):
    pos = mesh.vertices.astype("<f4").tobytes()
    nrm = mesh.normals.astype("<f4").tobytes()
    idx = mesh.triangles.astype("<u4").tobytes()
    binary = pos + nrm + idx
    binary += b"\0" * (-len(binary) % 4)
    nv = mesh.n_vertices
    doc = {
        "asset": {"version": "2.0"},
        "buffers": [{"byteLength": len(binary)}],
        "bufferViews": [
            {"buffer": 0, "byteOffset": 0, "byteLength": len(pos)},
            {"buffer": 0, "byteOffset": len(pos), "byteLength": len(nrm)},
            {"buffer": 0, "byteOffset": len(pos) + len(nrm), "byteLength": len(idx)},
        ],
        "accessors": [
            {"bufferView": 0, "componentType": 5126, "count": nv, "type": "VEC3",
             "min": mesh.vertices.min(0).tolist(), "max": mesh.vertices.max(0).tolist()},
            {"bufferView": 1, "componentType": 5126, "count": nv, "type": "VEC3"},
            {"bufferView": 2, "componentType": 5125, "count": mesh.n_triangles * 3, "type": "SCALAR"},
        ],
        "meshes": [{"primitives": [{"attributes": {"POSITION": 0, "NORMAL": 1}, "indices": 2, "mode": 4}]}],
    }
    js = json.dumps(doc).encode("utf-8")
    js += b" " * (-len(js) % 4)
    out = struct.pack("<4sII", b"glTF", 2, 12 + 8 + len(js) + 8 + len(binary))
    out += struct.pack("<II", len(js), 0x4E4F534A) + js
    out += struct.pack("<II", len(binary), 0x004E4942) + binary
    Path(path).write_bytes(out)


# ---------------------------------------------------------------------------
# Adjacency

class ButterflyPair(NamedTuple):
    tri_t: int
    tri_u: int
    shared_edge: tuple
    area_t: float
    area_u: float


def build_butterfly_pairs(mesh):
    """One pair of adjacent triangles per interior edge, sorted by edge key."""
    incident = {}
    for t, tri in enumerate(mesh.triangles.tolist()):
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            key = (a, b) if a < b else (b, a)
            incident.setdefault(key, []).append(t)
    pairs = []
    nonmanifold = 0
    areas = mesh.areas
    for key in sorted(incident):
        tris = incident[key]
        if len(tris) < 2:
            continue
        if len(tris) > 2:
            nonmanifold += 1
        t, u = tris[0], tris[1]
        pairs.append(ButterflyPair(t, u, key, float(areas[t]), float(areas[u])))
    if nonmanifold:
        warnings.warn(f"{mesh.name}: {nonmanifold} non-manifold edge(s); using first two triangles")
    return pairs


# ---------------------------------------------------------------------------
# Surface samples

class SurfaceSample(NamedTuple):
    position: np.ndarray
    normal: np.ndarray
    face_normal: np.ndarray
    triangle: int
    bary: np.ndarray


@dataclass(frozen=True, eq=False)
class SurfaceSamples:
    """Batch of surface samples stored column-wise.

    ``normal`` is the interpolated vertex normal used for fitting;
    ``face_normal`` is the geometric normal used for ray offsets.
    """

    positions: np.ndarray
    normals: np.ndarray
    face_normals: np.ndarray
    triangles: np.ndarray
    bary: np.ndarray

    def __len__(self):
        return len(self.triangles)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return SurfaceSample(self.positions[i], self.normals[i], self.face_normals[i],
                                 int(self.triangles[i]), self.bary[i])
        return SurfaceSamples(self.positions[i], self.normals[i], self.face_normals[i],
                              self.triangles[i], self.bary[i])

    @classmethod
    def from_bary(cls, mesh, triangles, bary):
        triangles = np.asarray(triangles, dtype=np.int64)
        bary = np.asarray(bary, dtype=np.float64).reshape(-1, 3)
        corners = mesh.triangles[triangles]
        positions = np.einsum("sk,skj->sj", bary, mesh.vertices[corners])
        normals = np.einsum("sk,skj->sj", bary, mesh.normals[corners])
        lens = np.linalg.norm(normals, axis=1, keepdims=True)
        face = mesh.face_normals[triangles]
        normals = np.where(lens > 1e-12, normals / np.maximum(lens, 1e-300), face)
        return cls(positions, normals, face.copy(), triangles, bary)

    def transformed(self, transform):
        transform = np.asarray(transform, dtype=np.float64)
        rot, trans = transform[:3, :3], transform[:3, 3]
        return SurfaceSamples(self.positions @ rot.T + trans, self.normals @ rot.T,
                              self.face_normals @ rot.T, self.triangles.copy(), self.bary.copy())

    def to_csv(self, path):
        header = "x,y,z,nx,ny,nz,tri,b0,b1,b2"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for p, n, t, b in zip(self.positions, self.normals, self.triangles, self.bary):
                fh.write(",".join([*(f"{v:.9g}" for v in p), *(f"{v:.9g}" for v in n),
                                   str(int(t)), *(f"{v:.9g}" for v in b)]) + "\n")


def _uniform_bary(u):
    s = np.sqrt(u[..., 0])
    b0 = 1.0 - s
    b1 = s * (1.0 - u[..., 1])
    b2 = s * u[..., 1]
    return np.stack([b0, b1, b2], axis=-1)


def blue_noise_sample(mesh, density, seed, spacing=0.6, max_attempts=40):
    """Dart-throwing blue-noise samples over the whole surface.

    Targets ``round(density * area)`` samples with a minimum Euclidean
    spacing of ``spacing / sqrt(density)``. Triangles are picked in
    proportion to area and points are uniform in the triangle.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    area = mesh.total_area
    if area <= 0:
        raise MeshError("mesh has zero surface area")
    target = max(1, int(round(density * area)))
    radius = spacing / math.sqrt(density)
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(mesh.areas)
    cdf /= cdf[-1]
    verts = mesh.vertices[mesh.triangles]

    cell = radius
    grid = {}
    kept_tri, kept_bary, kept_pos = [], [], []
    r2 = radius * radius
    attempts = 0
    batch = 1024
    while len(kept_tri) < target and attempts < max_attempts * target:
        tris = np.searchsorted(cdf, rng.random(batch), side="right")
        tris = np.minimum(tris, len(cdf) - 1)
        bary = _uniform_bary(rng.random((batch, 2)))
        pos = np.einsum("sk,skj->sj", bary, verts[tris])
        keys = np.floor(pos / cell).astype(np.int64)
        for j in range(batch):
            attempts += 1
            p = pos[j]
            kx, ky, kz = keys[j]
            ok = True
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        for q in grid.get((kx + dx, ky + dy, kz + dz), ()):
                            d = p - q
                            if d @ d < r2:
                                ok = False
                                break
                        if not ok:
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if ok:
                grid.setdefault((kx, ky, kz), []).append(p)
                kept_tri.append(tris[j])
                kept_bary.append(bary[j])
                kept_pos.append(p)
                if len(kept_tri) >= target:
                    break
            if attempts >= max_attempts * target:
                break
    if len(kept_tri) < 0.85 * target:
        warnings.warn(f"{mesh.name}: blue-noise sampling saturated at {len(kept_tri)}/{target} samples")
    return SurfaceSamples.from_bary(mesh, np.array(kept_tri, dtype=np.int64), np.array(kept_bary))


# ---------------------------------------------------------------------------
# Canonical local frame

_SNAP_POSITION = 1e-6
_SNAP_NORMAL = 1e-9


def canonical_transform(mesh):
    """Rigid 4x4 transform taking the mesh into its principal-axis frame.

    Origin at the area-weighted centroid, axes along the principal second
    moments (largest first), signs fixed by the third moments. The result
    is independent of any rigid transform already applied to the mesh as
    long as the principal moments are distinct.
    """
    tri = mesh.vertices[mesh.triangles]
    areas = mesh.areas
    total = areas.sum()
    centroid = (areas[:, None] * tri.mean(axis=1)).sum(0) / total
    rel = tri - centroid
    s = rel.sum(axis=1)
    second = (np.einsum("tki,tkj->tij", rel, rel) + np.einsum("ti,tj->tij", s, s)) / 12.0
    cov = (areas[:, None, None] * second).sum(0) / total
    evals, evecs = np.linalg.eigh(cov)
    axes = evecs[:, ::-1].T.copy()
    for k in range(2):
        z = rel @ axes[k]
        third = (z ** 3).sum(1) + (z[:, [0, 0, 1, 1, 2, 2]] ** 2 * z[:, [1, 2, 0, 2, 0, 1]]).sum(1) + z.prod(1)
        m3 = float((areas * third).sum() / 10.0 / total)
        if m3 < 0:
            axes[k] = -axes[k]
    axes[2] = np.cross(axes[0], axes[1])
    out = np.eye(4)
    out[:3, :3] = axes
    out[:3, 3] = -axes @ centroid
    return out


def canonicalize(mesh):
    """Mesh in its canonical frame with coordinates snapped to a 1 um grid."""
    local = mesh.transformed(canonical_transform(mesh))
    verts = np.round(local.vertices / _SNAP_POSITION) * _SNAP_POSITION
    normals = np.round(local.normals / _SNAP_NORMAL) * _SNAP_NORMAL
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return Mesh(verts, normals, mesh.triangles, mesh.name)


def surface_samples(mesh, density, seed):
    """Blue-noise samples decided in the canonical frame, expressed on ``mesh``.

    Sampling decisions depend only on intrinsic geometry, so any rigid
    copy of the mesh yields the same (triangle, barycentric) list.
    """
    canon = blue_noise_sample(canonicalize(mesh), density, seed)
    return SurfaceSamples.from_bary(mesh, canon.triangles, canon.bary)
