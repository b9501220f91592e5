"""BVH ray casting over triangle soups.

Traversal and the ray/triangle tests are compiled with numba; the BVH
itself is built once in numpy (median split, small leaves).
"""

import numpy as np
from numba import njit

_LEAF_SIZE = 4
_STACK = 64


def _build_bvh(centroids, lo, hi):
    n = len(centroids)
    order = np.arange(n)
    node_lo, node_hi, left, right, start, count = [], [], [], [], [], []

    def new_node():
        node_lo.append(None)
        node_hi.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(node_lo) - 1

    root = new_node()
    todo = [(root, 0, n)]
    while todo:
        node, s, e = todo.pop()
        idx = order[s:e]
        node_lo[node] = lo[idx].min(axis=0)
        node_hi[node] = hi[idx].max(axis=0)
        if e - s <= _LEAF_SIZE:
            start[node], count[node] = s, e - s
            continue
        c = centroids[idx]
        axis = int(np.argmax(c.max(0) - c.min(0)))
        sub = np.argsort(c[:, axis], kind="stable")
        order[s:e] = idx[sub]
        mid = s + (e - s) // 2
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        todo.append((rnode, mid, e))
        todo.append((lnode, s, mid))
    return (np.array(node_lo), np.array(node_hi), np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64), np.array(start, dtype=np.int64),
            np.array(count, dtype=np.int64), order)


@njit(cache=True)
def _ray_box(ox, oy, oz, ix, iy, iz, lo, hi, tmax):
    t0 = 0.0
    t1 = tmax
    for a in range(3):
        o = ox if a == 0 else (oy if a == 1 else oz)
        inv = ix if a == 0 else (iy if a == 1 else iz)
        ta = (lo[a] - o) * inv
        tb = (hi[a] - o) * inv
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@njit(cache=True)
def _traverse(orig, dirs, tmax, any_hit, skip, node_lo, node_hi, left, right, start, count,
              v0, e1, e2, prim):
    n = orig.shape[0]
    t_out = np.full(n, np.inf)
    id_out = np.full(n, -1, dtype=np.int64)
    u_out = np.zeros(n)
    v_out = np.zeros(n)
    stack = np.empty(_STACK, dtype=np.int64)
    for r in range(n):
        ox, oy, oz = orig[r, 0], orig[r, 1], orig[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else 1e300
        iy = 1.0 / dy if dy != 0.0 else 1e300
        iz = 1.0 / dz if dz != 0.0 else 1e300
        best = tmax[r]
        best_id = -1
        bu = 0.0
        bv = 0.0
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _ray_box(ox, oy, oz, ix, iy, iz, node_lo[node], node_hi[node], best):
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    if skip[k]:
                        continue
                    ax, ay, az = e1[k, 0], e1[k, 1], e1[k, 2]
                    bx, by, bz = e2[k, 0], e2[k, 1], e2[k, 2]
                    px = dy * bz - dz * by
                    py = dz * bx - dx * bz
                    pz = dx * by - dy * bx
                    det = ax * px + ay * py + az * pz
                    if abs(det) < 1e-14:
                        continue
                    inv = 1.0 / det
                    sx = ox - v0[k, 0]
                    sy = oy - v0[k, 1]
                    sz = oz - v0[k, 2]
                    u = (sx * px + sy * py + sz * pz) * inv
                    if u < 0.0 or u > 1.0:
                        continue
                    qx = sy * az - sz * ay
                    qy = sz * ax - sx * az
                    qz = sx * ay - sy * ax
                    v = (dx * qx + dy * qy + dz * qz) * inv
                    if v < 0.0 or u + v > 1.0:
                        continue
                    t = (bx * qx + by * qy + bz * qz) * inv
                    if t > 0.0 and t < best:
                        best = t
                        best_id = prim[k]
                        bu = u
                        bv = v
                if any_hit and best_id >= 0:
                    break
            else:
                if sp + 2 > _STACK:
                    continue
                stack[sp] = left[node]
                stack[sp + 1] = right[node]
                sp += 2
        if best_id >= 0:
            t_out[r] = best
            id_out[r] = best_id
            u_out[r] = bu
            v_out[r] = bv
    return t_out, id_out, u_out, v_out


class Tracer:
    """Closest-hit and occlusion queries over a fixed triangle set.

    ``occluder`` marks triangles that block shadow rays; the rest (light
    geometry) are skipped by :meth:`occluded` when ``occluders_only``.
    """

    def __init__(self, triangles, occluder=None):
        tri = np.ascontiguousarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
        self.n_triangles = len(tri)
        self.occluder = (np.ones(len(tri), dtype=bool) if occluder is None
                         else np.asarray(occluder, dtype=bool))
        if len(tri) == 0:
            self._empty = True
            return
        self._empty = False
        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        pad = 1e-9 * (1.0 + np.abs(hi - lo).max())
        (self._lo, self._hi, self._left, self._right, self._start, self._count,
         order) = _build_bvh(tri.mean(axis=1), lo - pad, hi + pad)
        tri = tri[order]
        self._v0 = np.ascontiguousarray(tri[:, 0])
        self._e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self._e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
        self._prim = order.astype(np.int64)
        self._no_skip = np.zeros(len(tri), dtype=np.bool_)
        self._skip_lights = ~self.occluder[order]

    def _run(self, orig, dirs, tmax, any_hit, skip):
        orig = np.ascontiguousarray(orig, dtype=np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        n = len(orig)
        if tmax is None:
            tmax = np.full(n, np.inf)
        else:
            tmax = np.ascontiguousarray(np.broadcast_to(np.asarray(tmax, dtype=np.float64), (n,)))
        if self._empty or n == 0:
            return np.full(n, np.inf), np.full(n, -1, dtype=np.int64), np.zeros(n), np.zeros(n)
        return _traverse(orig, dirs, tmax, any_hit, skip, self._lo, self._hi, self._left,
                         self._right, self._start, self._count, self._v0, self._e1,
                         self._e2, self._prim)

    def intersect(self, orig, dirs, tmax=None):
        """Closest hit: ``(t, triangle id or -1, u, v)`` per ray."""
        if self._empty:
            return self._run(orig, dirs, tmax, False, None)
        return self._run(orig, dirs, tmax, False, self._no_skip)

    def occluded(self, orig, dirs, tmax=None, occluders_only=True):
        """Boolean mask of rays blocked before ``tmax``."""
        if self._empty:
            return np.zeros(len(np.asarray(orig).reshape(-1, 3)), dtype=bool)
        skip = self._skip_lights if occluders_only else self._no_skip
        _, ids, _, _ = self._run(orig, dirs, tmax, True, skip)
        return ids >= 0
