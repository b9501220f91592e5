"""Built-in test scenes: a Cornell-style room, a two-plate light-leak
pair, an asymmetric two-lobe statue and a unit cube."""

import json
from pathlib import Path

import numpy as np

from .mesh import Mesh, merge_meshes, save_obj
from .radiance import Light, MeshInstance, Scene, scene_to_json


def grid_quad(corner, edge_u, edge_v, nu=8, nv=8, name="quad"):
    """Planar quad split into ``nu x nv`` cells; faces point along ``u x v``."""
    corner = np.asarray(corner, dtype=np.float64)
    eu = np.asarray(edge_u, dtype=np.float64)
    ev = np.asarray(edge_v, dtype=np.float64)
    s, t = np.meshgrid(np.linspace(0, 1, nu + 1), np.linspace(0, 1, nv + 1), indexing="ij")
    verts = corner + s.ravel()[:, None] * eu + t.ravel()[:, None] * ev
    idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    n = np.cross(eu, ev)
    n /= np.linalg.norm(n)
    return Mesh(verts, np.tile(n, (len(verts), 1)), tris, name)


def open_box(lo, hi, n=4, name="box"):
    """Axis-aligned box without its bottom face, normals outward."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    sx, sy, sz = x1 - x0, y1 - y0, z1 - z0
    faces = [
        grid_quad((x0, y0, z1), (sx, 0, 0), (0, sy, 0), n, n),    # top +z
        grid_quad((x0, y0, z0), (sx, 0, 0), (0, 0, sz), n, n),    # -y
        grid_quad((x1, y1, z0), (-sx, 0, 0), (0, 0, sz), n, n),   # +y
        grid_quad((x0, y1, z0), (0, -sy, 0), (0, 0, sz), n, n),   # -x
        grid_quad((x1, y0, z0), (0, sy, 0), (0, 0, sz), n, n),    # +x
    ]
    return merge_meshes(faces, name)


def cornell_meshes():
    """Room of side 2 m (z up, open towards -y) as five separate meshes."""
    shell = merge_meshes([
        grid_quad((-1, -1, 0), (2, 0, 0), (0, 2, 0)),      # floor
        grid_quad((-1, -1, 2), (0, 2, 0), (2, 0, 0)),      # ceiling
        grid_quad((-1, 1, 0), (2, 0, 0), (0, 0, 2)),       # back wall
    ], "white")
    red = grid_quad((-1, -1, 0), (0, 2, 0), (0, 0, 2), name="red")
    green = grid_quad((1, 1, 0), (0, -2, 0), (0, 0, 2), name="green")
    short = open_box((0.1, -0.6, 0.0), (0.7, 0.0, 0.6), name="short_box")
    tall = open_box((-0.7, 0.0, 0.0), (-0.1, 0.6, 1.2), name="tall_box")
    return [(shell, (0.75, 0.75, 0.75)), (red, (0.75, 0.1, 0.08)), (green, (0.1, 0.7, 0.12)),
            (short, (0.75, 0.75, 0.75)), (tall, (0.75, 0.75, 0.75))]


def cornell_lights():
    return [Light("quad", (12.0, 11.0, 9.0), position=(-0.4, -0.4, 1.995),
                  edge_u=(0.0, 0.8, 0.0), edge_v=(0.8, 0.0, 0.0))]


def cornell_scene(bounces=2):
    instances = [MeshInstance(m, np.eye(4), albedo, m.name) for m, albedo in cornell_meshes()]
    return Scene(instances, cornell_lights(), (0.05, 0.05, 0.06), bounces)


def two_plate_mesh(gap=0.05, size=1.0, n=8):
    """Two parallel plates facing away from each other, ``gap`` apart."""
    h = size / 2.0
    top = grid_quad((-h, -h, gap), (size, 0, 0), (0, size, 0), n, n)
    bottom = grid_quad((-h, -h, 0.0), (0, size, 0), (size, 0, 0), n, n)
    return merge_meshes([top, bottom], "two_plate")


def two_plate_scene(bounces=1):
    mesh = two_plate_mesh()
    lights = [Light("directional", (3.0, 2.8, 2.5), direction=(0.3, 0.2, 0.93))]
    return Scene([MeshInstance(mesh, np.eye(4), (0.7, 0.7, 0.7), mesh.name)], lights,
                 (0.02, 0.03, 0.05), bounces)


def ellipsoid(center, radii, n_u=12, n_v=8, name="ellipsoid"):
    """UV ellipsoid with poles on z and analytic outward normals."""
    center = np.asarray(center, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    theta = np.linspace(0, np.pi, n_v + 1)[1:-1]
    phi = np.linspace(0, 2 * np.pi, n_u, endpoint=False)
    t, p = np.meshgrid(theta, phi, indexing="ij")
    unit = np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], -1).reshape(-1, 3)
    unit = np.concatenate([[[0, 0, 1]], unit, [[0, 0, -1]]])
    verts = center + unit * radii
    normals = unit / radii
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    rings = n_v - 1
    ring = lambda r, j: 1 + r * n_u + (j % n_u)
    tris = []
    for j in range(n_u):
        tris.append((0, ring(0, j), ring(0, j + 1)))
        for r in range(rings - 1):
            a, b = ring(r, j), ring(r, j + 1)
            c, d = ring(r + 1, j), ring(r + 1, j + 1)
            tris += [(a, c, d), (a, d, b)]
        tris.append((len(verts) - 1, ring(rings - 1, j + 1), ring(rings - 1, j)))
    return Mesh(verts, normals, np.array(tris), name)


def statue_mesh():
    """Two overlapping ellipsoids forming an asymmetric two-lobe shape."""
    body = ellipsoid((0.0, 0.0, 0.0), (0.5, 0.4, 0.3))
    head = ellipsoid((0.6, 0.2, 0.1), (0.3, 0.25, 0.2))
    return merge_meshes([body, head], "statue")


def cube_mesh(size=1.0):
    h = size / 2.0
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    tris = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],   # -x, +x
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],   # -y, +y
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],   # -z, +z
    ])
    return Mesh.from_arrays(v, tris, name="cube")


def write_fixtures(outdir):
    """Write fixture meshes and scene files; returns the written paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    scene = cornell_scene()
    paths = []
    for inst in scene.instances:
        p = out / f"cornell_{inst.mesh.name}.obj"
        save_obj(inst.mesh, p)
        paths.append(p.name)
        written.append(p)
    p = out / "cornell.json"
    p.write_text(json.dumps(scene_to_json(scene, paths), indent=2))
    written.append(p)

    plate = two_plate_scene()
    save_obj(plate.instances[0].mesh, out / "two_plate.obj")
    p = out / "two_plate.json"
    p.write_text(json.dumps(scene_to_json(plate, ["two_plate.obj"]), indent=2))
    written += [out / "two_plate.obj", p]

    statue = statue_mesh()
    save_obj(statue, out / "statue.obj")
    lights = [Light("directional", (3.0, 3.0, 3.0), direction=(0.4, -0.3, 0.87))]
    sscene = Scene([MeshInstance(statue, np.eye(4), (0.8, 0.8, 0.8))], lights, (0.2, 0.25, 0.3), 1)
    p = out / "statue.json"
    p.write_text(json.dumps(scene_to_json(sscene, ["statue.obj"]), indent=2))
    written += [out / "statue.obj", p]

    save_obj(cube_mesh(), out / "cube.obj")
    written.append(out / "cube.obj")
    return written
