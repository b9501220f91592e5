"""Ray-traced ground truth for hemispherical illumination.

``f(p, d)`` is the cosine-weighted incident radiance at ``p`` divided by
pi, i.e. the diffuse response the point would show if its shading normal
were ``d``. Surfaces are single-sided Lambertian; back faces are black.
"""

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .mesh import load_mesh
from .raytrace import Tracer
from .sh import DirectionSet

RAY_EPS = 1e-4
INVALID_BACKFACE_FRACTION = 0.95
MAX_BOUNCES = 8


@dataclass(frozen=True)
class Light:
    """Directional, point or one-sided emissive quad light.

    ``radiance`` holds RGB irradiance (directional, W/m^2 on a surface
    facing the light), intensity (point, W/sr) or emitted radiance (quad).
    ``direction`` points from the surface towards a directional light.
    """

    kind: str
    radiance: tuple
    direction: tuple = (0.0, 0.0, 1.0)
    position: tuple = (0.0, 0.0, 0.0)
    edge_u: tuple = (1.0, 0.0, 0.0)
    edge_v: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("directional", "point", "quad"):
            raise ValueError(f"unknown light kind {self.kind!r}")
        if np.any(np.asarray(self.radiance) < 0):
            raise ValueError("light radiance must be nonnegative")
        if self.kind == "directional":
            d = np.asarray(self.direction, dtype=np.float64)
            object.__setattr__(self, "direction", tuple((d / np.linalg.norm(d)).tolist()))

    def quad_triangles(self):
        o = np.asarray(self.position, dtype=np.float64)
        u = np.asarray(self.edge_u, dtype=np.float64)
        v = np.asarray(self.edge_v, dtype=np.float64)
        return np.array([[o, o + u, o + u + v], [o, o + u + v, o + v]])


@dataclass(frozen=True, eq=False)
class MeshInstance:
    mesh: object
    transform: np.ndarray = field(default_factory=lambda: np.eye(4))
    albedo: tuple = (0.8, 0.8, 0.8)
    source: str = ""

    def __post_init__(self):
        t = np.asarray(self.transform, dtype=np.float64)
        if t.shape != (4, 4):
            raise ValueError("instance transform must be 4x4")
        rot = t[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or np.linalg.det(rot) < 0:
            raise ValueError("instance transform must be rigid")
        a = np.asarray(self.albedo, dtype=np.float64)
        if a.shape != (3,) or np.any(a < 0) or np.any(a > 1):
            raise ValueError("albedo components must lie in [0, 1]")
        object.__setattr__(self, "transform", t)

    @cached_property
    def world_mesh(self):
        return self.mesh.transformed(self.transform)


@dataclass(eq=False)
class Scene:
    """Declarative scene; treat as immutable once built."""

    instances: list
    lights: list = field(default_factory=list)
    sky: tuple = (0.0, 0.0, 0.0)
    bounces: int = 2

    def __post_init__(self):
        if not 0 <= int(self.bounces) <= MAX_BOUNCES:
            raise ValueError(f"bounce_count must be within [0, {MAX_BOUNCES}]")
        self.bounces = int(self.bounces)
        self.sky = tuple(float(x) for x in self.sky)

    @cached_property
    def _geometry(self):
        tris, albedo, emission, owner, local = [], [], [], [], []
        for k, inst in enumerate(self.instances):
            wm = inst.world_mesh
            tris.append(wm.vertices[wm.triangles])
            albedo.append(np.tile(inst.albedo, (wm.n_triangles, 1)))
            emission.append(np.zeros((wm.n_triangles, 3)))
            owner.append(np.full(wm.n_triangles, k))
            local.append(np.arange(wm.n_triangles))
        for light in self.lights:
            if light.kind == "quad":
                tris.append(light.quad_triangles())
                albedo.append(np.zeros((2, 3)))
                emission.append(np.tile(light.radiance, (2, 1)))
                owner.append(np.full(2, -1))
                local.append(np.arange(2))
        if not tris:
            return dict(tris=np.zeros((0, 3, 3)), normals=np.zeros((0, 3)), albedo=np.zeros((0, 3)),
                        emission=np.zeros((0, 3)), owner=np.zeros(0, dtype=np.int64),
                        local=np.zeros(0, dtype=np.int64))
        tris = np.concatenate(tris)
        cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
        normals = cross / np.linalg.norm(cross, axis=1, keepdims=True)
        return dict(tris=tris, normals=normals, albedo=np.concatenate(albedo),
                    emission=np.concatenate(emission), owner=np.concatenate(owner),
                    local=np.concatenate(local))

    @cached_property
    def tracer(self):
        g = self._geometry
        return Tracer(g["tris"], occluder=g["owner"] >= 0)

    @property
    def delta_lights(self):
        return [l for l in self.lights if l.kind in ("directional", "point")]


# ---------------------------------------------------------------------------
# Path tracing

def _onb(n):
    # Branchless orthonormal basis (Duff et al.).
    sign = np.where(n[:, 2] >= 0, 1.0, -1.0)
    a = -1.0 / (sign + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t = np.stack([1.0 + sign * n[:, 0] ** 2 * a, sign * b, -sign * n[:, 0]], axis=1)
    s = np.stack([b, sign + n[:, 1] ** 2 * a, -n[:, 1]], axis=1)
    return t, s


def _cosine_sample(n, u):
    r = np.sqrt(u[:, 0])
    phi = 2.0 * np.pi * u[:, 1]
    t, s = _onb(n)
    z = np.sqrt(np.clip(1.0 - u[:, 0], 0.0, None))
    d = t * (r * np.cos(phi))[:, None] + s * (r * np.sin(phi))[:, None] + n * z[:, None]
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def delta_irradiance(scene, points, normals, offset_normals=None):
    """Summed RGB irradiance from delta lights, shadowed and cosine-weighted."""
    if offset_normals is None:
        offset_normals = normals
    origin = points + RAY_EPS * offset_normals
    total = np.zeros((len(points), 3))
    for light in scene.delta_lights:
        if light.kind == "directional":
            ldir = np.broadcast_to(np.asarray(light.direction), points.shape)
            tmax = None
            scale = np.ones(len(points))
        else:
            to_light = np.asarray(light.position) - origin
            dist = np.linalg.norm(to_light, axis=1)
            ldir = to_light / dist[:, None]
            tmax = dist
            scale = 1.0 / dist ** 2
        cos = np.einsum("ij,ij->i", normals, ldir)
        lit = cos > 0
        if not lit.any():
            continue
        vis = np.zeros(len(points), dtype=bool)
        vis[lit] = ~scene.tracer.occluded(origin[lit], ldir[lit], None if tmax is None else tmax[lit])
        total += (np.where(vis, cos * scale, 0.0))[:, None] * np.asarray(light.radiance)
    return total


def trace_radiance(scene, origins, dirs, rand):
    """Radiance arriving at ``origins`` from directions ``dirs``.

    ``rand`` is ``(n, bounces, 2)`` uniform numbers driving the diffuse
    continuation. Returns ``(radiance (n, 3), primary_backface (n,))``.
    """
    n = len(origins)
    out = np.zeros((n, 3))
    backface = np.zeros(n, dtype=bool)
    if n == 0:
        return out, backface
    g = scene._geometry
    sky = np.asarray(scene.sky)
    throughput = np.ones((n, 3))
    active = np.arange(n)
    o = np.array(origins, dtype=np.float64)
    d = np.array(dirs, dtype=np.float64)
    for depth in range(scene.bounces + 1):
        if len(active) == 0:
            break
        t, tid, _, _ = scene.tracer.intersect(o, d)
        miss = tid < 0
        out[active[miss]] += throughput[miss] * sky
        hit = ~miss
        ids = tid[hit]
        ng = g["normals"][ids]
        front = np.einsum("ij,ij->i", ng, d[hit]) < 0
        if depth == 0:
            bf = np.zeros(len(active), dtype=bool)
            bf[np.flatnonzero(hit)[~front]] = True
            backface[active] = bf
        emit = g["emission"][ids]
        sel = np.flatnonzero(hit)[front]
        ids_f = ids[front]
        out[active[sel]] += throughput[sel] * emit[front]
        if depth == scene.bounces:
            break
        surface = g["owner"][ids_f] >= 0
        sel = sel[surface]
        ids_s = ids_f[surface]
        if len(sel) == 0:
            break
        x = o[sel] + t[sel, None] * d[sel]
        nrm = g["normals"][ids_s]
        thr = throughput[sel] * g["albedo"][ids_s]
        if scene.delta_lights:
            out[active[sel]] += thr * delta_irradiance(scene, x, nrm) / np.pi
        active = active[sel]
        throughput = thr
        d = _cosine_sample(nrm, rand[active, depth])
        o = x + RAY_EPS * nrm
    return out, backface


def _sample_rand(seed, index, n_rays, bounces):
    rng = np.random.default_rng([int(seed), int(index)])
    return rng.random((n_rays, max(bounces, 1), 2))


def incident_radiance(scene, p, n, rays, seed, self_occlude=True, sample_index=0):
    """Per-direction incident RGB radiance at one point.

    Rays leave from ``p + eps * n``. With ``self_occlude`` the lower
    hemisphere of ``n`` is blocked by the surface the point lies on; pass
    ``False`` for a free-floating probe point (then downward rays leave
    from ``p - eps * n``).
    """
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    dirs = rays.directions
    cos = dirs @ n
    up = cos > 0 if self_occlude else np.ones(len(dirs), dtype=bool)
    origin = np.where((cos >= 0)[:, None], p + RAY_EPS * n, p - RAY_EPS * n)
    rand = _sample_rand(seed, sample_index, len(dirs), scene.bounces)
    out = np.zeros((len(dirs), 3))
    rad, _ = trace_radiance(scene, origin[up], dirs[up], rand[up])
    out[up] = rad
    return out


def cosine_matrix(rays, query):
    """``(n_rays, n_query)`` matrix of ``max(0, w.d) * dw / pi``."""
    return np.clip(rays.directions @ query.directions.T, 0.0, None) * rays.solid_weights[:, None] / np.pi


@dataclass(frozen=True, eq=False)
class RadianceTable:
    """``values[s, q]`` = RGB ``f(p_s, d_q)``; invalid rows are excluded from fits."""

    values: np.ndarray
    valid: np.ndarray
    directions: DirectionSet = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError("radiance table must be (samples, directions, 3)")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", np.asarray(self.valid, dtype=bool))

    @property
    def shape(self):
        return self.values.shape[:2]


def _illumination_batch(scene, samples, idx, query, rays, seed, cmat):
    n_rays = len(rays)
    dirs = rays.directions
    bounces = scene.bounces
    fn = samples.face_normals[idx]
    pos = samples.positions[idx]
    cos = fn @ dirs.T
    up = cos > 0
    origins = (pos + RAY_EPS * fn)[:, None, :] + np.zeros((1, n_rays, 1))
    ray_dirs = np.broadcast_to(dirs, (len(idx), n_rays, 3))
    rand = np.stack([_sample_rand(seed, i, n_rays, bounces) for i in idx])
    rad = np.zeros((len(idx), n_rays, 3))
    r, bf = trace_radiance(scene, origins[up], ray_dirs[up], rand[up])
    rad[up] = r
    back = np.zeros((len(idx), n_rays), dtype=bool)
    back[up] = bf
    n_up = up.sum(1)
    invalid = back.sum(1) >= INVALID_BACKFACE_FRACTION * np.maximum(n_up, 1)
    f = np.einsum("srk,rq->sqk", rad, cmat)
    if scene.delta_lights:
        qd = query.directions
        for light in scene.delta_lights:
            origin = pos + RAY_EPS * fn
            if light.kind == "directional":
                ldir = np.broadcast_to(np.asarray(light.direction), pos.shape)
                tmax = None
                e = np.ones(len(idx))
            else:
                to_light = np.asarray(light.position) - origin
                dist = np.linalg.norm(to_light, axis=1)
                ldir = to_light / dist[:, None]
                tmax = dist
                e = 1.0 / dist ** 2
            lit = np.einsum("ij,ij->i", fn, ldir) > 0
            vis = np.zeros(len(idx), dtype=bool)
            if lit.any():
                vis[lit] = ~scene.tracer.occluded(origin[lit], ldir[lit], None if tmax is None else tmax[lit])
            lobe = np.clip(np.einsum("sj,qj->sq", ldir, qd), 0.0, None)
            f += ((vis * e)[:, None] * lobe / np.pi)[:, :, None] * np.asarray(light.radiance)
    return f, invalid


def hemisphere_illumination(scene, samples, query, rays, seed, batch=48):
    """``f(p, d)`` for every sample and query direction, shape ``(S, Q, 3)``.

    Area emitters, sky and indirect light are integrated over ``rays``;
    delta lights are added in closed form with a shadow ray.
    """
    return build_radiance_table(scene, samples, query, rays, seed, batch).values


def build_radiance_table(scene, samples, query, rays, seed, batch=48):
    """Radiance table over all samples with validity flags."""
    n = len(samples)
    if n == 0:
        raise ValueError("need at least one sample")
    cmat = cosine_matrix(rays, query)
    values = np.zeros((n, len(query), 3))
    valid = np.ones(n, dtype=bool)
    for s in range(0, n, batch):
        idx = np.arange(s, min(n, s + batch))
        f, invalid = _illumination_batch(scene, samples, idx, query, rays, seed, cmat)
        values[idx] = f
        valid[idx] = ~invalid
    return RadianceTable(values, valid, query)


# ---------------------------------------------------------------------------
# Training scenarios

_AXIS_ROTATIONS = [
    np.eye(3),
    np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0]], dtype=float),   # +z -> +x
    np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float),   # +z -> -y
    np.array([[0, 0, -1], [0, 1, 0], [1, 0, 0]], dtype=float),   # +z -> -x
    np.array([[1, 0, 0], [0, 0, 1], [0, -1, 0]], dtype=float),   # +z -> +y
    np.array([[1, 0, 0], [0, -1, 0], [0, 0, -1]], dtype=float),  # +z -> -z
]

_ENCLOSURE_COLORS = [
    (1.0, 0.25, 0.2), (0.2, 1.0, 0.3), (0.25, 0.35, 1.0),
    (1.0, 0.9, 0.3), (0.9, 0.3, 1.0), (0.3, 0.95, 1.0),
]


def rotation_angle(a, b):
    c = (np.trace(a.T @ b) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def standard_lights(radius, intensity=1.0):
    """Six inward-facing colored quads on a cube of half-size ``radius``
    plus one directional light."""
    lights = []
    r = float(radius)
    faces = [
        ((-r, -r, -r), (0, 2 * r, 0), (0, 0, 2 * r)),   # x = -r, normal +x
        ((r, -r, -r), (0, 0, 2 * r), (0, 2 * r, 0)),    # x = +r, normal -x
        ((-r, -r, -r), (0, 0, 2 * r), (2 * r, 0, 0)),   # y = -r, normal +y
        ((-r, r, -r), (2 * r, 0, 0), (0, 0, 2 * r)),    # y = +r, normal -y
        ((-r, -r, -r), (2 * r, 0, 0), (0, 2 * r, 0)),   # z = -r, normal +z
        ((-r, -r, r), (0, 2 * r, 0), (2 * r, 0, 0)),    # z = +r, normal -z
    ]
    for (o, u, v), color in zip(faces, _ENCLOSURE_COLORS):
        lights.append(Light("quad", tuple(intensity * c for c in color), position=o, edge_u=u, edge_v=v))
    lights.append(Light("directional", (2.5 * intensity,) * 3, direction=(0.35, 0.5, 0.79)))
    return lights


def make_training_scenarios(mesh, n_sce, seed, bounces=1):
    """Standard enclosure scene with the mesh at ``n_sce`` rotations.

    The first six rotations take the mesh up axis to each signed
    coordinate axis; further rotations are seeded random draws.
    """
    n_sce = int(n_sce)
    if n_sce < 1:
        raise ValueError("need at least one scenario")
    from .sh import _random_rotation

    rotations = [r.copy() for r in _AXIS_ROTATIONS[:n_sce]]
    rng = np.random.default_rng(seed)
    while len(rotations) < n_sce:
        cand = _random_rotation(rng)
        if all(rotation_angle(cand, r) >= 45.0 for r in rotations) or rng.random() < 0.05:
            rotations.append(cand)
    centre = (mesh.vertices.min(0) + mesh.vertices.max(0)) / 2.0
    bound = float(np.linalg.norm(mesh.vertices - centre, axis=1).max())
    lights = standard_lights(4.0 * max(bound, 1e-3))
    out = []
    for rot in rotations:
        t = np.eye(4)
        t[:3, :3] = rot
        t[:3, 3] = -rot @ centre
        scene = Scene([MeshInstance(mesh, t, (0.7, 0.7, 0.7))], lights, (0.0, 0.0, 0.0), bounces)
        out.append((scene, rot))
    return out


# ---------------------------------------------------------------------------
# Files

def load_scene(path):
    """Scene JSON: meshes (path, 4x4 row-major transform, albedo), lights, sky, bounces."""
    path = Path(path)
    doc = json.loads(path.read_text())
    instances = []
    for entry in doc.get("meshes", []):
        mpath = Path(entry["path"])
        if not mpath.is_absolute():
            mpath = path.parent / mpath
        t = np.asarray(entry.get("transform", np.eye(4).tolist()), dtype=np.float64).reshape(4, 4)
        instances.append(MeshInstance(load_mesh(mpath), t, tuple(entry.get("albedo", (0.8, 0.8, 0.8))),
                                      str(mpath)))
    lights = []
    for entry in doc.get("lights", []):
        kind = entry["kind"]
        if kind == "directional":
            lights.append(Light(kind, tuple(entry["irradiance"]), direction=tuple(entry["direction"])))
        elif kind == "point":
            lights.append(Light(kind, tuple(entry["intensity"]), position=tuple(entry["position"])))
        elif kind in ("quad", "emissive-quad"):
            lights.append(Light("quad", tuple(entry["radiance"]), position=tuple(entry["corner"]),
                                edge_u=tuple(entry["edge_u"]), edge_v=tuple(entry["edge_v"])))
        else:
            raise ValueError(f"unknown light kind {kind!r}")
    return Scene(instances, lights, tuple(doc.get("sky", (0.0, 0.0, 0.0))), int(doc.get("bounces", 2)))


def scene_to_json(scene, mesh_paths):
    lights = []
    for l in scene.lights:
        if l.kind == "directional":
            lights.append({"kind": "directional", "direction": list(l.direction), "irradiance": list(l.radiance)})
        elif l.kind == "point":
            lights.append({"kind": "point", "position": list(l.position), "intensity": list(l.radiance)})
        else:
            lights.append({"kind": "emissive-quad", "corner": list(l.position), "edge_u": list(l.edge_u),
                           "edge_v": list(l.edge_v), "radiance": list(l.radiance)})
    return {
        "meshes": [{"path": str(p), "transform": inst.transform.tolist(), "albedo": list(inst.albedo)}
                   for inst, p in zip(scene.instances, mesh_paths)],
        "lights": lights,
        "sky": list(scene.sky),
        "bounces": scene.bounces,
    }


RTAB_MAGIC = b"RTAB"


def save_table(table, path):
    s, q = table.shape
    with open(path, "wb") as fh:
        fh.write(RTAB_MAGIC + struct.pack("<II", s, q))
        fh.write(table.values.astype("<f4").tobytes())
        fh.write(table.valid.astype(np.uint8).tobytes())


def load_table(path, directions=None):
    data = Path(path).read_bytes()
    if data[:4] != RTAB_MAGIC:
        raise ValueError(f"{path}: not a radiance table")
    s, q = struct.unpack_from("<II", data, 4)
    n = s * q * 3
    values = np.frombuffer(data, dtype="<f4", count=n, offset=12).astype(np.float64).reshape(s, q, 3)
    rest = data[12 + 4 * n:]
    valid = np.frombuffer(rest, dtype=np.uint8, count=s).astype(bool) if len(rest) >= s else np.ones(s, bool)
    return RadianceTable(values, valid, directions)
