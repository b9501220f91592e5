import numpy as np

from probebake.raytrace import Tracer


def _brute(tris, orig, dirs):
    # Plain Moller-Trumbore over every triangle.
    best_t = np.full(len(orig), np.inf)
    best_id = np.full(len(orig), -1)
    for k, (a, b, c) in enumerate(tris):
        e1, e2 = b - a, c - a
        p = np.cross(dirs, e2)
        det = p @ e1
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = orig - a
        u = np.einsum("ij,ij->i", s, p) * inv
        q = np.cross(s, e1)
        v = np.einsum("ij,ij->i", dirs, q) * inv
        t = (q @ e2) * inv
        hit = ok & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > 0) & (t < best_t)
        best_t[hit] = t[hit]
        best_id[hit] = k
    return best_t, best_id


def _soup(rng, n):
    centres = rng.uniform(-1, 1, size=(n, 1, 3))
    return centres + 0.2 * rng.normal(size=(n, 3, 3))


def test_closest_hit_matches_brute_force():
    rng = np.random.default_rng(0)
    tris = _soup(rng, 300)
    orig = rng.uniform(-2, 2, size=(2000, 3))
    dirs = rng.normal(size=(2000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, ids, u, v = Tracer(tris).intersect(orig, dirs)
    bt, bid = _brute(tris, orig, dirs)
    np.testing.assert_array_equal(ids, bid)
    hit = bid >= 0
    np.testing.assert_allclose(t[hit], bt[hit], rtol=1e-9)
    pts = orig[hit] + t[hit, None] * dirs[hit]
    tri = tris[ids[hit]]
    rebuilt = (1 - u[hit] - v[hit])[:, None] * tri[:, 0] + u[hit, None] * tri[:, 1] + v[hit, None] * tri[:, 2]
    np.testing.assert_allclose(rebuilt, pts, atol=1e-9)


def test_occlusion_respects_tmax_and_light_mask():
    tri = np.array([[[-1, -1, 1.0], [1, -1, 1.0], [0, 1, 1.0]]])
    orig = np.zeros((2, 3))
    dirs = np.array([[0, 0, 1.0], [0, 0, 1.0]])
    tracer = Tracer(tri)
    np.testing.assert_array_equal(tracer.occluded(orig, dirs, np.array([2.0, 0.5])), [True, False])
    light = Tracer(tri, occluder=[False])
    assert not light.occluded(orig, dirs).any()
    assert light.occluded(orig, dirs, occluders_only=False).all()


def test_empty_tracer():
    t, ids, _, _ = Tracer(np.zeros((0, 3, 3))).intersect(np.zeros((3, 3)), np.tile([0, 0, 1.0], (3, 1)))
    assert np.all(ids == -1) and np.all(np.isinf(t))
