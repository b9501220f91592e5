"""File-level pipeline steps shared by the command line and the tests."""

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import split_meta
from .association import load_association, save_association
from .baker import bake
from .codec import PROBE_BYTES, encode_many, decode_many, encode_probemap, load_pmap, reset_decode_counter, save_pmap
from .evaluate import (Camera, EvalReport, area_weights, baseline_coefficients, dominant_probe,
                       per_sample_error, reconstruct_batch, render_image, save_image)
from .mesh import MeshError, load_mesh, surface_samples
from .radiance import build_radiance_table, load_scene
from .sh import make_direction_set


class MissingAssociation(FileNotFoundError):
    pass


def sidecar_paths(mesh_path):
    """``(association, prior association, medoid cache)`` paths next to a mesh."""
    base = Path(mesh_path).with_suffix("")
    return (base.with_suffix(".assoc"), Path(f"{base}.prior.assoc"), Path(f"{base}.medoids.json"))


@dataclass
class ImportResult:
    association: object
    prior: object
    probe_count: int
    n_vertices: int
    elapsed: float
    paths: tuple


def import_mesh(mesh_path, config, dump_samples=None):
    """Distribute probes on a mesh and write its sidecar files."""
    start = time.perf_counter()
    mesh = load_mesh(mesh_path)
    dist = config.distributor().fit(mesh)
    meta = dict(config.meta(), mesh=Path(mesh_path).name)
    assoc_path, prior_path, medoid_path = sidecar_paths(mesh_path)
    save_association(dist.association_, assoc_path, dict(meta, kind="association"))
    save_association(dist.prior_, prior_path, dict(meta, kind="prior"))
    keep = np.flatnonzero(dist.valid_)
    labels = np.full(len(dist.samples_), -1, dtype=np.int64)
    labels[keep] = dist.medoids_.assignment
    cache = dict(meta, probe_count=dist.probe_count_, medoids=keep[dist.medoids_.medoids].tolist(),
                 labels=labels.tolist(), medoid_cost=dist.medoids_.total_cost)
    if dist.optimization_ is not None:
        cache["loss_initial"] = dist.optimization_.initial_loss
        cache["loss_final"] = dist.optimization_.final_loss
    medoid_path.write_text(json.dumps(cache, sort_keys=True))
    if dump_samples:
        surface_samples(mesh, config.density, config.seed).to_csv(dump_samples)
    return ImportResult(dist.association_, dist.prior_, dist.probe_count_, mesh.n_vertices,
                        time.perf_counter() - start, (assoc_path, prior_path, medoid_path))


def _instance_association(inst, prior=False):
    assoc_path, prior_path, _ = sidecar_paths(inst.source)
    path = prior_path if prior else assoc_path
    if not path.is_file():
        raise MissingAssociation(f"no association for {inst.source}; run `probebake import {inst.source}` first")
    assoc = load_association(path)
    if assoc.n_vertices != inst.mesh.n_vertices:
        raise MeshError(f"{path} was built for a mesh with {assoc.n_vertices} vertices, "
                        f"{inst.source} has {inst.mesh.n_vertices}; re-run import")
    return assoc


def bake_scene(scene_path, config):
    """Bake every instance of a scene into one probemap.

    Returns ``(probemap, coefficients (K_total, 9, 3), metadata)``.
    Instances of the same mesh share its association but get their own
    probe ranges.
    """
    scene = load_scene(scene_path)
    if not scene.instances:
        raise ValueError("scene has no meshes")
    params = config.bake_params()
    ds = make_direction_set(config.bake_dirs)
    blocks, records, first = [], [], 0
    for k, inst in enumerate(scene.instances):
        assoc = _instance_association(inst)
        probes = bake(inst.mesh, assoc, scene, k, params, directions=ds)
        blocks.append(probes.coeffs)
        records.append({"mesh": Path(inst.source).name, "first_probe": first,
                        "probe_count": probes.probe_count})
        first += probes.probe_count
    coeffs = np.concatenate(blocks)
    meta = dict(config.meta(), reg_lambda=params.reg_lambda, n_dirs=len(ds), instances=records)
    return encode_probemap(coeffs), coeffs, meta


def pmap_meta(path):
    return split_meta(Path(path).read_bytes())[1] or {}


def _instance_ranges(meta, scene):
    records = meta.get("instances")
    if not records or len(records) != len(scene.instances):
        raise ValueError("probemap does not describe this scene's instances")
    return [(r["first_probe"], r["first_probe"] + r["probe_count"]) for r in records]


def _medoid_labels(inst, n_samples):
    path = sidecar_paths(inst.source)[2]
    if path.is_file():
        labels = json.loads(path.read_text()).get("labels")
        if labels is not None and len(labels) == n_samples:
            return np.asarray(labels, dtype=np.int64)
    return None


def evaluate_scene(scene_path, pmap_path, config, lod=0):
    """Fitted and baseline reports for a baked scene."""
    scene = load_scene(scene_path)
    pmap = load_pmap(pmap_path)
    meta = pmap_meta(pmap_path)
    ranges = _instance_ranges(meta, scene)
    fitted_all = pmap.decode(lod)
    ds = make_direction_set(config.bake_dirs)
    errs = {"fitted": [], "baseline": []}
    weights = []
    vertex_bytes = {}
    for k, inst in enumerate(scene.instances):
        assoc = _instance_association(inst)
        prior = _instance_association(inst, prior=True)
        vertex_bytes[inst.source] = assoc.nbytes()
        world = inst.world_mesh
        samples = surface_samples(inst.mesh, config.density, config.seed).transformed(inst.transform)
        table = build_radiance_table(scene, samples, ds, ds, config.seed * 100003 + k)
        lo, hi = ranges[k]
        labels = _medoid_labels(inst, len(samples))
        if labels is None:
            labels = dominant_probe(world, prior, samples)
        base = baseline_coefficients(table, labels, prior.probe_count)
        base = decode_many(encode_many(base), lod)
        for name, a, c in (("fitted", assoc, fitted_all[lo:hi]), ("baseline", prior, base)):
            approx = reconstruct_batch(a, c, world, samples, ds, lod)
            e = per_sample_error(table.values, approx, samples.normals, ds).mean(axis=1)
            errs[name].append(np.where(table.valid, e, 0.0))
        weights.append(area_weights(world, samples, table.valid, normalize=False))
    w = np.concatenate(weights)
    w = w / w.sum()
    reports = []
    params = dict(config.meta(), lod=lod)
    for name in ("fitted", "baseline"):
        e = np.concatenate(errs[name])
        reports.append(EvalReport(float(np.sqrt(np.sum(w * e))), np.sqrt(e).tolist(),
                                  PROBE_BYTES * pmap.probe_count, int(sum(vertex_bytes.values())),
                                  params, name))
    return reports


def report_json(reports):
    rows = [r.to_dict() for r in reports]
    return json.dumps({"rows": rows, "config_hash": rows[0]["params"]["config_hash"],
                       "seed": rows[0]["params"]["seed"]}, indent=2, sort_keys=True)


def render_scene(scene_path, pmap_path, out_path, config, lod=0, resolution=(64, 64), camera=None,
                 reference=False, normal_map=0.3):
    """Render a baked scene (or its ray-traced reference) to an image file.

    The probemap is decoded exactly once per probe.
    """
    scene = load_scene(scene_path)
    camera = camera or Camera()
    shading = None
    decoded = 0
    if not reference:
        pmap = load_pmap(pmap_path)
        ranges = _instance_ranges(pmap_meta(pmap_path), scene)
        reset_decode_counter()
        from .codec import decode_counter

        coeffs = pmap.decode(lod)
        decoded = dict(decode_counter)
        shading = [(_instance_association(inst), coeffs[lo:hi])
                   for inst, (lo, hi) in zip(scene.instances, ranges)]
    img = render_image(scene, camera, shading, resolution, lod, normal_map, config.seed,
                       seed=config.seed)
    save_image(img, out_path, dict(config.meta(), lod=lod, reference=reference))
    return img, decoded


def tod_blend(map_a, map_b, t, out_path, config):
    from .codec import tod_interpolate

    a, b = load_pmap(map_a), load_pmap(map_b)
    blended = tod_interpolate(a, b, float(t))
    meta = dict(pmap_meta(map_a))
    meta.update(config.meta(), tod={"t": float(t), "maps": [Path(map_a).name, Path(map_b).name]})
    save_pmap(blended, out_path, meta)
    return blended
