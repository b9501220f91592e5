"""Reconstruction from probes, the multi-directional RMSE score, a plain
projection baseline, and image output."""

import json
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from .codec import PROBE_BYTES
from .radiance import RAY_EPS, _onb, _sample_rand, delta_irradiance, trace_radiance
from .sh import BAND_OF, COSINE_LOBE, N_COEFFS, DirectionSet, irradiance_basis, project


def _lod_coeffs(coeffs, lod):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if lod == 1:
        coeffs = coeffs.copy()
        coeffs[:, 4:] = 0.0
    elif lod != 0:
        raise ValueError("lod must be 0 or 1")
    return coeffs


def vertex_sh_all(assoc, coeffs):
    """Per-vertex blended SH, ``(V, 9, 3)``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return np.einsum("vn,vnac->vac", assoc.weights, coeffs[assoc.indices])


def vertex_sh(assoc, coeffs, vertex):
    """Blended SH of one vertex, ``(9, 3)``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return np.einsum("n,nac->ac", assoc.weights[vertex], coeffs[assoc.indices[vertex]])


def sample_sh(assoc, coeffs, mesh, triangles, bary, lod=0):
    """Barycentric blend of vertex SH at surface points, ``(S, 9, 3)``."""
    vsh = vertex_sh_all(assoc, _lod_coeffs(coeffs, lod))
    corners = mesh.triangles[np.asarray(triangles, dtype=np.int64)]
    return np.einsum("sk,skac->sac", np.asarray(bary, dtype=np.float64).reshape(-1, 3), vsh[corners])


def _dirs(directions):
    return directions.directions if isinstance(directions, DirectionSet) else np.asarray(directions)


def reconstruct(assoc, coeffs, mesh, sample, d, lod=0):
    """Reconstructed RGB ``f`` at one sample for direction(s) ``d``."""
    sh = sample_sh(assoc, coeffs, mesh, [sample.triangle], [sample.bary], lod)[0]
    return irradiance_basis(d) @ sh


def reconstruct_batch(assoc, coeffs, mesh, samples, directions, lod=0):
    """Reconstructed ``f`` for all samples and directions, ``(S, Q, 3)``."""
    sh = sample_sh(assoc, coeffs, mesh, samples.triangles, samples.bary, lod)
    return np.einsum("qa,sac->sqc", irradiance_basis(_dirs(directions)), sh)


def area_weights(mesh, samples, valid=None, normalize=True):
    """Per-sample share of surface area: triangle area over samples in it."""
    valid = np.ones(len(samples), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    tris = samples.triangles
    counts = np.bincount(tris[valid], minlength=mesh.n_triangles)
    w = np.where(valid, mesh.areas[tris] / np.maximum(counts[tris], 1), 0.0)
    if not normalize:
        return w
    total = w.sum()
    if total <= 0:
        raise ValueError("no valid samples to score")
    return w / total


def per_sample_error(truth, approx, normals, directions):
    """Cosine-weighted mean squared error over each sample's hemisphere, ``(S, 3)``."""
    cos = np.clip(normals @ directions.directions.T, 0.0, None) * directions.solid_weights
    norm = cos.sum(axis=1, keepdims=True)
    cos = cos / np.where(norm > 0, norm, 1.0)
    return np.einsum("sq,sqc->sc", cos, (truth - approx) ** 2)


def mrmse_from_values(truth, approx, mesh, samples, directions, valid=None, return_map=False):
    if len(samples) == 0:
        raise ValueError("empty sample set")
    err = per_sample_error(truth, approx, samples.normals, directions).mean(axis=1)
    w = area_weights(mesh, samples, valid)
    score = float(np.sqrt(np.sum(w * err)))
    if return_map:
        return score, np.sqrt(err)
    return score


def mrmse(table, assoc, coeffs, samples, mesh, lod=0, return_map=False):
    """Area- and cosine-normalized RMS error of the reconstruction against ``table``.

    Invalid samples are left out; channels are averaged before the root.
    """
    approx = reconstruct_batch(assoc, coeffs, mesh, samples, table.directions, lod)
    return mrmse_from_values(table.values, approx, mesh, samples, table.directions, table.valid,
                             return_map)


def deconvolve(sh):
    """Undo the cosine lobe so that the irradiance basis reproduces ``sh``'s function."""
    return np.asarray(sh) * (np.pi / COSINE_LOBE[BAND_OF])[:, None]


def baseline_coefficients(table, labels, probe_count):
    """Probe ``k`` = projection of the mean ``f`` over samples labelled ``k``.

    ``labels`` of -1 (and invalid samples) are ignored; empty clusters get
    zero coefficients.
    """
    labels = np.asarray(labels, dtype=np.int64)
    use = (labels >= 0) & table.valid
    coeffs = np.zeros((probe_count, N_COEFFS, 3))
    for k in range(probe_count):
        members = use & (labels == k)
        if members.any():
            mean = table.values[members].mean(axis=0)
            coeffs[k] = deconvolve(project(mean, table.directions))
    return coeffs


def dominant_probe(mesh, assoc, samples):
    """Cluster label per sample: the probe with the largest blended weight."""
    from .baker import mixing_matrix

    return np.asarray(mixing_matrix(mesh, assoc, samples).toarray().argmax(axis=1)).ravel()


def baseline_projection(samples, table, medoids, assoc, mesh=None):
    """Plain-projection comparison: cluster-mean ``f`` per probe, unoptimized association.

    ``medoids`` is either per-sample cluster labels or ``None`` to derive
    labels from ``assoc``'s dominant probe (needs ``mesh``).
    """
    labels = getattr(medoids, "assignment", medoids)
    if labels is None:
        labels = dominant_probe(mesh, assoc, samples)
    return assoc, baseline_coefficients(table, labels, assoc.probe_count)


def memory_bytes(probe_count, n_vertices, n_assoc=2):
    """Probemap payload plus association payload in bytes."""
    return PROBE_BYTES * probe_count + 2 * n_assoc * n_vertices


@dataclass
class EvalReport:
    mrmse: float
    per_sample: list
    probemap_bytes: int
    association_bytes: int
    params: dict = field(default_factory=dict)
    label: str = "fitted"

    def __post_init__(self):
        if not self.mrmse >= 0:
            raise ValueError("mrmse must be nonnegative")

    @property
    def memory_bytes(self):
        return self.probemap_bytes + self.association_bytes

    def to_dict(self):
        d = asdict(self)
        d["memory_bytes"] = self.memory_bytes
        d["memory_kb"] = float(Decimal(self.memory_bytes / 1024.0).quantize(Decimal("0.01"), ROUND_HALF_UP))
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Rendering

@dataclass
class Camera:
    position: tuple = (0.0, -3.4, 1.0)
    look_at: tuple = (0.0, 0.0, 1.0)
    up: tuple = (0.0, 0.0, 1.0)
    fov_deg: float = 45.0

    def rays(self, width, height):
        eye = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        h = np.tan(np.radians(self.fov_deg) / 2.0)
        aspect = width / height
        ys, xs = np.mgrid[0:height, 0:width]
        sx = ((xs + 0.5) / width * 2.0 - 1.0) * h * aspect
        sy = (1.0 - (ys + 0.5) / height * 2.0) * h
        d = fwd + sx[..., None] * right + sy[..., None] * up
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return np.broadcast_to(eye, d.shape).reshape(-1, 3), d.reshape(-1, 3)


def perturb_normals(normals, points, amplitude=0.3, seed=0, frequency=12.0):
    """Procedural sinusoidal normal map in each point's tangent frame."""
    if amplitude == 0:
        return normals
    phase = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi, size=4)
    t, s = _onb(normals)
    a = np.sin(frequency * points @ np.array([1.0, 0.7, 0.3]) + phase[0]) * np.cos(
        frequency * points[:, 2] + phase[1])
    b = np.sin(frequency * points @ np.array([0.2, 1.0, 0.6]) + phase[2]) * np.cos(
        frequency * points[:, 0] + phase[3])
    n = normals + amplitude * (a[:, None] * t + b[:, None] * s)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _hits(scene, camera, width, height):
    orig, dirs = camera.rays(width, height)
    t, tid, u, v = scene.tracer.intersect(orig, dirs)
    return orig, dirs, t, tid, u, v


def _surface_frame(scene, tid, u, v, hit_mask, orig, dirs, t):
    g = scene._geometry
    owner = g["owner"][tid]
    local = g["local"][tid]
    bary = np.stack([1.0 - u - v, u, v], axis=1)
    pts = orig + t[:, None] * dirs
    normals = np.zeros_like(pts)
    for k, inst in enumerate(scene.instances):
        sel = hit_mask & (owner == k)
        if sel.any():
            wm = inst.world_mesh
            corners = wm.triangles[local[sel]]
            n = np.einsum("sk,skj->sj", bary[sel], wm.normals[corners])
            normals[sel] = n / np.linalg.norm(n, axis=1, keepdims=True)
    return owner, local, bary, pts, normals


def render_image(scene, camera, shading=None, resolution=(64, 64), lod=0, normal_map=0.3,
                 normal_seed=0, rays=None, seed=0):
    """Linear RGB image of ``scene`` seen from ``camera``, shape ``(H, W, 3)``.

    ``shading`` lists ``(assoc, coeffs)`` per scene instance for probe
    reconstruction; ``None`` renders the ray-traced reference instead,
    integrating over ``rays``. Back faces render black, emitters show
    their radiance and misses show the sky.
    """
    width, height = resolution
    orig, dirs, t, tid, u, v = _hits(scene, camera, width, height)
    g = scene._geometry
    img = np.tile(np.asarray(scene.sky), (len(orig), 1))
    hit = tid >= 0
    if not hit.any():
        return img.reshape(height, width, 3)
    gid = np.where(hit, tid, 0)
    front = hit & (np.einsum("ij,ij->i", g["normals"][gid], dirs) < 0)
    img[hit] = 0.0
    emit = front & (g["owner"][gid] < 0)
    img[emit] = g["emission"][gid[emit]]
    surf = front & (g["owner"][gid] >= 0)
    owner, local, bary, pts, normals = _surface_frame(scene, gid, u, v, surf, orig, dirs, t)
    idx = np.flatnonzero(surf)
    if not len(idx):
        return img.reshape(height, width, 3)
    shade_n = perturb_normals(normals[idx], pts[idx], normal_map, normal_seed)
    albedo = g["albedo"][gid[idx]]
    if shading is not None:
        f = np.zeros((len(idx), 3))
        for k, inst in enumerate(scene.instances):
            sel = owner[idx] == k
            if not sel.any():
                continue
            assoc, coeffs = shading[k]
            sh = sample_sh(assoc, coeffs, inst.mesh, local[idx[sel]], bary[idx[sel]], lod)
            f[sel] = np.einsum("sa,sac->sc", irradiance_basis(shade_n[sel]), sh)
        img[idx] = albedo * np.clip(f, 0.0, None)
    else:
        if rays is None:
            from .sh import make_direction_set

            rays = make_direction_set(256)
        face = g["normals"][gid[idx]]
        img[idx] = albedo * reference_illumination(scene, pts[idx], face, shade_n, rays, seed)
    return img.reshape(height, width, 3)


def reference_illumination(scene, points, face_normals, shading_normals, rays, seed, batch=64):
    """Ray-traced ``f(p, n)`` at arbitrary points for one direction each."""
    out = np.zeros((len(points), 3))
    dirs = rays.directions
    for s in range(0, len(points), batch):
        sl = slice(s, min(len(points), s + batch))
        p, fn, sn = points[sl], face_normals[sl], shading_normals[sl]
        up = fn @ dirs.T > 0
        o = np.broadcast_to((p + RAY_EPS * fn)[:, None, :], (len(p), len(dirs), 3))
        d = np.broadcast_to(dirs, (len(p), len(dirs), 3))
        rand = np.stack([_sample_rand(seed, i, len(dirs), scene.bounces) for i in range(sl.start, sl.stop)])
        rad = np.zeros((len(p), len(dirs), 3))
        rad[up], _ = trace_radiance(scene, o[up], d[up], rand[up])
        lobe = np.clip(sn @ dirs.T, 0.0, None) * rays.solid_weights / np.pi
        out[sl] = np.einsum("sr,src->sc", lobe, rad)
        if scene.delta_lights:
            out[sl] += delta_irradiance(scene, p, sn, fn) / np.pi
    return out


def linear_to_srgb8(img):
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    s = np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1.0 / 2.4) - 0.055)
    return np.floor(s * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path, meta=None):
    """Write an 8-bit sRGB PNG or binary PPM chosen by file suffix.

    ``meta`` is stored as JSON in a PNG text chunk or a PPM comment.
    """
    path = Path(path)
    px = linear_to_srgb8(img)
    h, w, _ = px.shape
    note = json.dumps(meta, sort_keys=True, separators=(",", ":")) if meta is not None else None
    if path.suffix.lower() == ".ppm":
        comment = f"# {note}\n" if note else ""
        path.write_bytes(f"P6\n{comment}{w} {h}\n255\n".encode() + px.tobytes())
        return
    if path.suffix.lower() != ".png":
        raise ValueError("image path must end in .png or .ppm")
    info = PngInfo()
    if note:
        info.add_text("probebake", note)
    Image.fromarray(px, "RGB").save(path, pnginfo=info)
