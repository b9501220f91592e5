import json

import numpy as np
import pytest
from PIL import Image

from probebake.association import Association
from probebake.evaluate import (Camera, EvalReport, area_weights, baseline_coefficients, deconvolve,
                                memory_bytes, mrmse, perturb_normals, reconstruct, reconstruct_batch,
                                render_image, save_image, vertex_sh, vertex_sh_all)
from probebake.fixtures import cornell_scene, grid_quad
from probebake.mesh import SurfaceSamples, surface_samples
from probebake.radiance import RadianceTable
from probebake.sh import irradiance_basis, make_direction_set, project

from conftest import right_triangle


def _two_probe_assoc():
    idx = np.array([[0, 1], [1, 0], [0, 1]])
    w = np.array([[0.75, 0.25], [1.0, 0.0], [0.5, 0.5]])
    return Association(idx, w, 2)


def test_vertex_sh_examples():
    coeffs = np.zeros((2, 9, 3))
    coeffs[0, 0] = 1.0
    coeffs[1, 0] = 3.0
    assoc = _two_probe_assoc()
    np.testing.assert_allclose(vertex_sh(assoc, coeffs, 0)[0], [1.5] * 3)
    np.testing.assert_allclose(vertex_sh(assoc, coeffs, 1)[0], [3.0] * 3)
    np.testing.assert_allclose(vertex_sh_all(assoc, coeffs)[:, 0, 0], [1.5, 3.0, 2.0])


def test_reconstruct_continuity_across_triangle():
    tri = right_triangle()
    coeffs = np.random.default_rng(0).normal(size=(2, 9, 3))
    assoc = _two_probe_assoc()
    d = np.array([[0.3, 0.2, 0.93]]) / np.linalg.norm([0.3, 0.2, 0.93])
    at_vertex = reconstruct(assoc, coeffs, tri, SurfaceSamples.from_bary(tri, [0], [[1, 0, 0]])[0], d)
    expect = irradiance_basis(d) @ vertex_sh(assoc, coeffs, 0)
    np.testing.assert_allclose(at_vertex, expect, atol=1e-12)
    near = SurfaceSamples.from_bary(tri, [0], [[1 - 2e-6, 1e-6, 1e-6]])[0]
    assert np.abs(reconstruct(assoc, coeffs, tri, near, d) - at_vertex).max() < 1e-4


def test_mrmse_matches_brute_force(ds120):
    quad = grid_quad((0, 0, 0), (1, 0, 0), (0, 1, 0), 3, 3)
    s = surface_samples(quad, 30, 0)
    rng = np.random.default_rng(1)
    values = rng.random((len(s), len(ds120), 3))
    valid = rng.random(len(s)) > 0.2
    table = RadianceTable(values, valid, ds120)
    assoc = Association(rng.integers(0, 3, (quad.n_vertices, 1)), np.ones((quad.n_vertices, 1)), 3)
    coeffs = rng.normal(size=(3, 9, 3))
    approx = reconstruct_batch(assoc, coeffs, quad, s, ds120)
    total, area = 0.0, 0.0
    counts = np.bincount(s.triangles[valid], minlength=quad.n_triangles)
    for i in range(len(s)):
        if not valid[i]:
            continue
        num = den = 0.0
        err = np.zeros(3)
        for q, d in enumerate(ds120.directions):
            c = max(0.0, float(d @ s.normals[i])) * ds120.solid_weights[q]
            err += c * (values[i, q] - approx[i, q]) ** 2
            den += c
        a = quad.areas[s.triangles[i]] / counts[s.triangles[i]]
        total += a * (err / den).mean()
        area += a
    assert mrmse(table, assoc, coeffs, s, quad) == pytest.approx(np.sqrt(total / area), rel=1e-10)


def test_mrmse_zero_and_constant_offset(ds120):
    quad = grid_quad((0, 0, 0), (1, 0, 0), (0, 1, 0), 3, 3)
    s = surface_samples(quad, 30, 0)
    coeffs = np.random.default_rng(2).normal(size=(1, 9, 3))
    assoc = Association(np.zeros((quad.n_vertices, 1), int), np.ones((quad.n_vertices, 1)), 1)
    exact = reconstruct_batch(assoc, coeffs, quad, s, ds120)
    table = RadianceTable(exact, np.ones(len(s), bool), ds120)
    assert mrmse(table, assoc, coeffs, s, quad) < 1e-12
    shifted = RadianceTable(exact + 0.25, table.valid, ds120)
    assert mrmse(shifted, assoc, coeffs, s, quad) == pytest.approx(0.25, rel=1e-9)
    score, per_sample = mrmse(shifted, assoc, coeffs, s, quad, return_map=True)
    np.testing.assert_allclose(per_sample, 0.25)


def test_lod_drops_band_two(ds120):
    quad = grid_quad((0, 0, 0), (1, 0, 0), (0, 1, 0), 2, 2)
    s = surface_samples(quad, 10, 0)
    coeffs = np.zeros((1, 9, 3))
    coeffs[0, 6] = 1.0
    assoc = Association(np.zeros((quad.n_vertices, 1), int), np.ones((quad.n_vertices, 1)), 1)
    assert np.abs(reconstruct_batch(assoc, coeffs, quad, s, ds120, lod=0)).max() > 0
    assert not reconstruct_batch(assoc, coeffs, quad, s, ds120, lod=1).any()
    with pytest.raises(ValueError):
        reconstruct_batch(assoc, coeffs, quad, s, ds120, lod=2)


def test_area_weights():
    tri = right_triangle()
    s = SurfaceSamples.from_bary(tri, [0, 0, 0], np.full((3, 3), 1 / 3))
    np.testing.assert_allclose(area_weights(tri, s), 1 / 3)
    np.testing.assert_allclose(area_weights(tri, s, normalize=False), 0.5 / 3)
    with pytest.raises(ValueError):
        area_weights(tri, s, np.zeros(3, bool))


def test_baseline_reproduces_projection(ds960):
    # A cluster whose f is a pure irradiance field is recovered exactly.
    truth = np.random.default_rng(3).normal(size=(9, 3))
    values = np.broadcast_to(irradiance_basis(ds960.directions) @ truth, (4, len(ds960), 3))
    table = RadianceTable(values, np.ones(4, bool), ds960)
    coeffs = baseline_coefficients(table, np.array([0, 0, 1, -1]), 3)
    np.testing.assert_allclose(coeffs[0], truth, atol=5e-3)
    assert not coeffs[2].any()
    np.testing.assert_allclose(deconvolve(project(irradiance_basis(ds960.directions) @ truth, ds960)), truth,
                               atol=5e-3)


def test_memory_accounting():
    assert memory_bytes(22, 1000) == 32 * 22 + 4 * 1000
    assert memory_bytes(1, 10, n_assoc=1) == 52
    r = EvalReport(0.1, [0.1], 64, 40, {"seed": 0})
    d = json.loads(r.to_json())
    assert d["memory_bytes"] == 104 and d["label"] == "fitted"
    with pytest.raises(ValueError):
        EvalReport(float("nan"), [], 0, 0)


def test_normal_map_keeps_unit_length():
    n = np.tile([0, 0, 1.0], (50, 1))
    p = np.random.default_rng(4).random((50, 3))
    out = perturb_normals(n, p, 0.3)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0)
    assert perturb_normals(n, p, 0.0) is n


def test_render_smoke(tmp_path):
    scene = cornell_scene()
    shading = []
    for inst in scene.instances:
        assoc = Association(np.zeros((inst.mesh.n_vertices, 1), int), np.ones((inst.mesh.n_vertices, 1)), 1)
        coeffs = np.zeros((1, 9, 3))
        coeffs[0, 0] = 1.0
        shading.append((assoc, coeffs))
    img = render_image(scene, Camera(), shading, (16, 12))
    assert img.shape == (12, 16, 3) and np.all(np.isfinite(img)) and img.max() > 0
    ref = render_image(scene, Camera(), None, (8, 8), rays=make_direction_set(32))
    assert ref.shape == (8, 8, 3) and ref.max() > 0
    save_image(img, tmp_path / "a.png", {"seed": 0})
    with Image.open(tmp_path / "a.png") as im:
        assert im.size == (16, 12)
        assert json.loads(im.text["probebake"]) == {"seed": 0}
    save_image(img, tmp_path / "a.ppm", {"seed": 0})
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n# ")
    with pytest.raises(ValueError):
        save_image(img, tmp_path / "a.bmp")
