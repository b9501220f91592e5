"""Probe placement in mesh-local space.

Samples are clustered with K-Medoids under a visibility-aware distance,
the medoids become probes, per-sample inverse-distance weights are
carried to vertices, and the vertex weights are then refined by gradient
descent against the fitting loss under a set of synthetic lighting
scenarios.
"""

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .association import MAX_PROBES, Association
from .baker import solve_normal_equations
from .mesh import blue_noise_sample, canonicalize
from .radiance import MeshInstance, Scene, build_radiance_table, make_training_scenarios
from .sh import N_COEFFS, irradiance_basis, make_direction_set

DEFAULT_K_NEIGHBORS = 8
DEFAULT_N_ASSOC = 2
MEDOID_MAX_ITER = 50
LIFT_FRACTION = 0.25


# ---------------------------------------------------------------------------
# Visibility graph and distances

@dataclass(eq=False)
class VisibilityGraph:
    """Symmetric sparse graph over samples with Euclidean edge lengths."""

    positions: np.ndarray
    adjacency: sparse.csr_matrix

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    def edges(self):
        """Unique ``(i, j, length)`` triples with ``i < j``."""
        upper = sparse.triu(self.adjacency, k=1).tocoo()
        return np.stack([upper.row, upper.col], axis=1), upper.data

    def has_edge(self, i, j):
        return self.adjacency[i, j] > 0

    def degree(self):
        return np.diff(self.adjacency.indptr)


def _segments_visible(tracer, a, na, b, nb):
    """Segments between lifted endpoints that no mesh triangle blocks.

    Endpoints are lifted off the surface along their face normals by a
    quarter of their separation so that chords between neighbours on a
    curved surface do not graze the surface they sit on.
    """
    dist = np.linalg.norm(b - a, axis=1)
    lift = np.maximum(1e-4, LIFT_FRACTION * dist)[:, None]
    pa = a + lift * na
    pb = b + lift * nb
    seg = pb - pa
    length = np.linalg.norm(seg, axis=1)
    dirs = seg / np.maximum(length, 1e-300)[:, None]
    blocked = tracer.occluded(pa, dirs, length)
    return ~blocked


def build_visibility_graph(mesh, samples, k_neighbors=DEFAULT_K_NEIGHBORS, tracer=None):
    """Edges from each sample to its visible ones among ``k_neighbors`` nearest.

    Samples left without any visible neighbour are joined to their nearest
    sample regardless of visibility.
    """
    n = len(samples)
    if n < 2:
        raise ValueError("visibility graph needs at least two samples")
    if tracer is None:
        from .raytrace import Tracer

        tracer = Tracer(mesh.vertices[mesh.triangles])
    pos = samples.positions
    k = min(k_neighbors, n - 1)
    dist, nbr = cKDTree(pos).query(pos, k=k + 1)
    dist, nbr = dist[:, 1:], nbr[:, 1:]
    src = np.repeat(np.arange(n), k)
    dst = nbr.ravel()
    d = dist.ravel()
    keep = d > 0
    vis = np.zeros(len(src), dtype=bool)
    vis[keep] = _segments_visible(tracer, pos[src[keep]], samples.face_normals[src[keep]],
                                  pos[dst[keep]], samples.face_normals[dst[keep]])
    rows, cols = src[vis], dst[vis]
    isolated = np.setdiff1d(np.arange(n), np.concatenate([rows, cols]))
    if len(isolated):
        warnings.warn(f"{len(isolated)} samples had no visible neighbour; linked to nearest sample")
        first = dist[isolated, 0] > 0
        rows = np.concatenate([rows, isolated[first]])
        cols = np.concatenate([cols, nbr[isolated[first], 0]])
    pairs = np.unique(np.sort(np.stack([rows, cols], axis=1), axis=1), axis=0)
    lengths = np.linalg.norm(pos[pairs[:, 0]] - pos[pairs[:, 1]], axis=1)
    i = np.concatenate([pairs[:, 0], pairs[:, 1]])
    j = np.concatenate([pairs[:, 1], pairs[:, 0]])
    adj = sparse.csr_matrix((np.concatenate([lengths, lengths]), (i, j)), shape=(n, n))
    adj.sort_indices()
    return VisibilityGraph(np.asarray(pos, dtype=np.float64), adj)


def hybrid_distance(g, i, j):
    """Edge length for visible pairs, otherwise A* shortest path length."""
    if i == j:
        return 0.0
    adj = g.adjacency
    direct = adj[i, j]
    if direct > 0:
        return float(direct)
    pos = g.positions
    goal = pos[j]

    def h(v):
        return float(np.linalg.norm(pos[v] - goal))

    best = {i: 0.0}
    heap = [(h(i), 0.0, i)]
    closed = set()
    while heap:
        _, gcost, v = heapq.heappop(heap)
        if v == j:
            return gcost
        if v in closed:
            continue
        closed.add(v)
        lo, hi = adj.indptr[v], adj.indptr[v + 1]
        for u, w in zip(adj.indices[lo:hi], adj.data[lo:hi]):
            cand = gcost + w
            if cand < best.get(u, math.inf):
                best[u] = cand
                heapq.heappush(heap, (cand + h(u), cand, u))
    return math.inf


def hybrid_distance_matrix(g, sources=None):
    """Hybrid distances from ``sources`` (default all nodes) to every node."""
    idx = np.arange(g.n_nodes) if sources is None else np.asarray(sources, dtype=np.int64)
    d = dijkstra(g.adjacency, directed=False, indices=idx)
    d = np.atleast_2d(d)
    sub = g.adjacency[idx].tocoo()
    d[sub.row, sub.col] = sub.data
    d[np.arange(len(idx)), idx] = 0.0
    return d


# ---------------------------------------------------------------------------
# K-Medoids

@dataclass(eq=False)
class MedoidSet:
    medoids: np.ndarray
    assignment: np.ndarray
    total_cost: float
    cost_history: list = field(default_factory=list)
    n_iter: int = 0


def _finite_distances(d):
    finite = np.isfinite(d)
    if finite.all():
        return d
    top = d[finite].max() if finite.any() else 0.0
    return np.where(finite, d, 1e3 * (top + 1.0))


def _nearest_two(d, medoids):
    dm = d[medoids]
    order = np.argsort(dm, axis=0, kind="stable")
    n1 = order[0]
    cols = np.arange(d.shape[1])
    d1 = dm[n1, cols]
    d2 = dm[order[1], cols] if len(medoids) > 1 else np.full(d.shape[1], np.inf)
    return n1, d1, d2


def _kmedoids_init(d, k, rng):
    n = d.shape[0]
    first = int(rng.integers(n))
    medoids = [first]
    near = d[first].copy()
    for _ in range(1, k):
        p = near ** 2
        p[medoids] = 0.0
        total = p.sum()
        if total <= 0:
            choice = int(np.setdiff1d(np.arange(n), medoids)[0])
        else:
            choice = int(np.searchsorted(np.cumsum(p) / total, rng.random(), side="right"))
            choice = min(choice, n - 1)
            while choice in medoids:
                choice = (choice + 1) % n
        medoids.append(choice)
        near = np.minimum(near, d[choice])
    return np.array(medoids, dtype=np.int64)


def k_medoids_from_distances(d, k, seed=0, max_iter=MEDOID_MAX_ITER, init=None):
    """PAM best-swap K-Medoids on a precomputed distance matrix.

    Each iteration evaluates every (medoid, non-medoid) swap and applies
    the single best improving one; ties go to the lowest index.
    """
    d = _finite_distances(np.asarray(d, dtype=np.float64))
    n = d.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"K={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    medoids = (np.asarray(init, dtype=np.int64).copy() if init is not None
               else _kmedoids_init(d, k, rng))
    n1, d1, d2 = _nearest_two(d, medoids)
    cost = float(d1.sum())
    history = [cost]
    it = 0
    tol = 1e-12 * max(cost, 1.0)
    for it in range(1, max_iter + 1):
        near = np.minimum(d1[:, None], d)
        base = (near - d1[:, None]).sum(0)
        extra = np.minimum(d2[:, None], d) - near
        onehot = np.zeros((k, n))
        onehot[n1, np.arange(n)] = 1.0
        delta = base[None, :] + onehot @ extra
        delta[:, medoids] = np.inf
        flat = int(np.argmin(delta))
        slot, cand = divmod(flat, n)
        if not delta[slot, cand] < -tol:
            it -= 1
            break
        medoids[slot] = cand
        n1, d1, d2 = _nearest_two(d, medoids)
        cost = float(d1.sum())
        history.append(cost)
    order = np.argsort(medoids)
    medoids = medoids[order]
    n1, d1, _ = _nearest_two(d, medoids)
    return MedoidSet(medoids, n1, float(d1.sum()), history, it)


def k_medoids(g, samples, k, seed=0, max_iter=MEDOID_MAX_ITER):
    """K-Medoids over all graph nodes under the hybrid distance."""
    if k > g.n_nodes:
        raise ValueError(f"K={k} exceeds the number of samples ({g.n_nodes})")
    return k_medoids_from_distances(hybrid_distance_matrix(g), k, seed, max_iter)


# ---------------------------------------------------------------------------
# Weights

def inverse_distance_weights(dist, n_assoc):
    """Normalized inverse-distance weights over the ``n_assoc`` nearest columns.

    ``dist`` is ``(samples, K)``. A zero distance claims all the weight;
    unreachable medoids get none.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n, k = dist.shape
    if not 1 <= n_assoc <= k:
        raise ValueError("n_assoc must lie in [1, K]")
    order = np.argsort(dist, axis=1, kind="stable")[:, :n_assoc]
    d = np.take_along_axis(dist, order, axis=1)
    with np.errstate(divide="ignore"):
        inv = np.where(np.isfinite(d), 1.0 / d, 0.0)
    zero = d[:, 0] == 0
    inv[zero] = 0.0
    inv[zero, 0] = 1.0
    total = inv.sum(axis=1)
    lost = total == 0
    inv[lost, 0] = 1.0
    total[lost] = 1.0
    return order, inv / total[:, None]


def prior_weights(g, samples, medoids, n_assoc=DEFAULT_N_ASSOC):
    """Per-sample ``(probe indices, weights)`` from hybrid distances to medoids."""
    medoids = np.asarray(getattr(medoids, "medoids", medoids), dtype=np.int64)
    dist = hybrid_distance_matrix(g, medoids).T
    return inverse_distance_weights(dist, n_assoc)


def _top_n(acc, n_assoc):
    order = np.argsort(-acc, axis=1, kind="stable")[:, :n_assoc]
    w = np.take_along_axis(acc, order, axis=1)
    w = np.where(w > 0, w, 0.0)
    order = np.where(w > 0, order, order[:, :1])
    return order, w / w.sum(axis=1, keepdims=True)


def transfer_to_vertices(mesh, samples, sample_weights, n_assoc=DEFAULT_N_ASSOC, probe_count=None,
                         medoid_positions=None, max_rings=8):
    """Accumulate sample weights on vertices through barycentric coordinates.

    Vertices that receive nothing take the mean of their neighbours
    (repeated over a few rings); any still empty fall back to the nearest
    medoid with a warning.
    """
    idx, w = sample_weights
    idx = np.asarray(idx, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    k = int(probe_count if probe_count is not None else idx.max() + 1)
    if n_assoc > k:
        raise ValueError("n_assoc cannot exceed the probe count")
    v = mesh.n_vertices
    corners = mesh.triangles[samples.triangles]
    acc = np.zeros((v, k))
    rows = np.repeat(corners[:, :, None], idx.shape[1], axis=2)
    contrib = samples.bary[:, :, None] * w[:, None, :]
    np.add.at(acc, (rows.ravel(), np.repeat(idx[:, None, :], 3, axis=1).ravel()), contrib.ravel())

    nbrs = mesh.vertex_neighbors
    for _ in range(max_rings):
        empty = np.flatnonzero(acc.sum(1) <= 0)
        if not len(empty):
            break
        filled = acc.copy()
        for vi in empty:
            ring = [u for u in nbrs[vi] if acc[u].sum() > 0]
            if ring:
                filled[vi] = acc[ring].mean(0)
        if np.array_equal(filled, acc):
            break
        acc = filled
    empty = np.flatnonzero(acc.sum(1) <= 0)
    if len(empty):
        warnings.warn(f"{len(empty)} vertices had no nearby samples; using nearest probe")
        if medoid_positions is None:
            acc[empty, 0] = 1.0
        else:
            near = cKDTree(medoid_positions).query(mesh.vertices[empty])[1]
            acc[empty, near] = 1.0
    order, weights = _top_n(acc, n_assoc)
    return Association(order, weights, k)


def random_association(n_vertices, probe_count, n_assoc=DEFAULT_N_ASSOC, seed=0):
    """Uniformly random probe indices and simplex weights per vertex."""
    rng = np.random.default_rng(seed)
    idx = np.stack([rng.choice(probe_count, n_assoc, replace=False) for _ in range(n_vertices)])
    w = rng.dirichlet(np.ones(n_assoc), size=n_vertices)
    return Association(idx, w, probe_count)


# ---------------------------------------------------------------------------
# Weight optimization

def project_simplex(x):
    """Euclidean projection of each row of ``x`` onto the probability simplex."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[1]
    u = -np.sort(-x, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ks = np.arange(1, n + 1)
    cond = u - css / ks > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(x)), rho] / (rho + 1.0)
    return np.maximum(x - theta[:, None], 0.0)


class AssociationObjective:
    """Summed fitting loss over scenarios as a function of vertex weights.

    The probe indices of ``pattern`` are held fixed; only the weights
    vary. For every scenario the probe coefficients are re-solved without
    regularization, so the loss is the best achievable light residual.
    All tables must share ``directions`` expressed in the mesh frame.
    """

    def __init__(self, mesh, samples, pattern, tables, directions, min_cos=0.0, valid=None):
        self.mesh = mesh
        self.samples = samples
        self.indices = np.asarray(getattr(pattern, "indices", pattern), dtype=np.int64)
        self.probe_count = int(getattr(pattern, "probe_count", self.indices.max() + 1))
        self.n_assoc = self.indices.shape[1]
        k, s = self.probe_count, len(samples)
        valid = np.ones(s, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        for t in tables:
            valid = valid & t.valid

        cos = samples.normals @ directions.directions.T
        wgt = np.where((cos > min_cos) & valid[:, None], cos, 0.0)
        wgt *= directions.solid_weights[None, :] * mesh.total_area / max(s, 1)
        ybar = irradiance_basis(directions.directions)
        self.gram = np.einsum("sq,qa,qb->sab", wgt, ybar, ybar)
        self.h = [np.einsum("sq,qa,sqc->sac", wgt, ybar, t.values) for t in tables]
        self.c = [float(np.einsum("sq,sqc->", wgt, t.values ** 2)) for t in tables]

        corners = mesh.triangles[samples.triangles]
        self.corners = corners
        self.probe = self.indices[corners].reshape(s, 3 * self.n_assoc)
        p = self.probe.shape[1]
        block = (self.probe[:, :, None] * k + self.probe[:, None, :]).ravel()
        self.scatter = sparse.csr_matrix(
            (np.ones(s * p * p), (block, np.arange(s * p * p))), shape=(k * k, s * p * p))
        self.probe_scatter = sparse.csr_matrix(
            (np.ones(s * p), (self.probe.ravel(), np.arange(s * p))), shape=(k, s * p))

    def mixing(self, weights):
        """Per-sample mixing values ``(S, 3 * n_assoc)`` aligned with ``probe``."""
        w = np.asarray(weights, dtype=np.float64)
        return (self.samples.bary[:, :, None] * w[self.corners]).reshape(len(self.samples), -1)

    def _solve(self, m):
        k, s = self.probe_count, len(self.samples)
        outer = (m[:, :, None] * m[:, None, :]).ravel()
        blocks = self.scatter @ (outer[:, None] * np.repeat(self.gram.reshape(s, -1), m.shape[1] ** 2, axis=0))
        normal = blocks.reshape(k, k, N_COEFFS, N_COEFFS).transpose(0, 2, 1, 3).reshape(k * N_COEFFS, -1)
        p = m.shape[1]
        weighted = m.ravel()[:, None]
        rhs = np.concatenate([
            (self.probe_scatter @ (weighted * np.repeat(h.reshape(s, -1), p, axis=0))).reshape(k * N_COEFFS, 3)
            for h in self.h], axis=1)
        sol = solve_normal_equations(normal, rhs)
        return normal, rhs, sol

    def loss_and_grad(self, weights, with_grad=True):
        m = self.mixing(weights)
        k, s = self.probe_count, len(self.samples)
        normal, rhs, sol = self._solve(m)
        n_sce = len(self.h)
        loss = 0.0
        g_mix = np.zeros_like(m)
        for i in range(n_sce):
            x = sol[:, 3 * i:3 * i + 3]
            b = rhs[:, 3 * i:3 * i + 3]
            loss += self.c[i] + float(np.sum(x * (normal @ x))) - 2.0 * float(np.sum(x * b))
            if with_grad:
                shp = x.reshape(k, N_COEFFS, 3)[self.probe]
                v = np.einsum("sp,spac->sac", m, shp)
                resid = np.einsum("sab,sbc->sac", self.gram, v) - self.h[i]
                g_mix += 2.0 * np.einsum("spac,sac->sp", shp, resid)
        if not with_grad:
            return loss, None
        g = g_mix.reshape(s, 3, self.n_assoc) * self.samples.bary[:, :, None]
        grad = np.zeros((self.mesh.n_vertices, self.n_assoc))
        np.add.at(grad, self.corners.ravel(), g.reshape(-1, self.n_assoc))
        return loss, grad

    def loss(self, weights):
        return self.loss_and_grad(weights, with_grad=False)[0]


def cosine_lr(step, total, lr_start, lr_end):
    if total <= 1:
        return lr_start
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / (total - 1)))


@dataclass(eq=False)
class OptimizationResult:
    association: Association
    initial_loss: float
    final_loss: float
    history: list
    diverged: bool = False


def optimize_association(objective, assoc, iters=400, lr_start=0.01, lr_end=0.001,
                         betas=(0.9, 0.999), eps=1e-8):
    """Adam on vertex weights with simplex projection after every step.

    Returns the best iterate seen, so the final loss never exceeds the
    initial one. A non-finite loss reverts to the input weights.
    """
    x = project_simplex(assoc.weights)
    loss0, grad = objective.loss_and_grad(x, with_grad=iters > 0)
    history = [loss0]
    best_x, best = x.copy(), loss0
    if iters <= 0:
        return OptimizationResult(assoc, loss0, loss0, history)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2 = betas
    diverged = False
    for t in range(1, iters + 1):
        lr = cosine_lr(t - 1, iters, lr_start, lr_end)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = project_simplex(x - lr * mhat / (np.sqrt(vhat) + eps))
        loss, grad = objective.loss_and_grad(x, with_grad=t < iters)
        history.append(loss)
        if not np.isfinite(loss) or (grad is not None and not np.all(np.isfinite(grad))):
            warnings.warn("association optimization diverged; keeping the prior weights")
            diverged = True
            best_x, best = project_simplex(assoc.weights), loss0
            break
        if loss < best:
            best_x, best = x.copy(), loss
    out = Association(assoc.indices, best_x, assoc.probe_count)
    return OptimizationResult(out, loss0, best, history, diverged)


def training_tables(mesh, samples, n_scenarios=6, seed=0, n_dirs=120, n_rays=256, bounces=1):
    """Radiance tables for the standard training scenarios, queried in the mesh frame."""
    ds = make_direction_set(n_dirs)
    rays = make_direction_set(n_rays)
    tables = []
    for i, (scene, rot) in enumerate(make_training_scenarios(mesh, n_scenarios, seed, bounces)):
        world = samples.transformed(scene.instances[0].transform)
        t = build_radiance_table(scene, world, ds.rotated(rot), rays, seed * 100003 + i)
        tables.append(t)
    return tables, ds


def sample_validity(mesh, samples, n_rays=128, seed=0):
    """Validity flags from the mesh alone (samples buried inside geometry)."""
    scene = Scene([MeshInstance(mesh)], [], (0.0, 0.0, 0.0), 0)
    probe = make_direction_set(8)
    return build_radiance_table(scene, samples, probe, make_direction_set(n_rays), seed).valid


def auto_probe_count(area, n_valid):
    k = max(4, int(math.ceil(area / 2.0)))
    return int(max(1, min(k, MAX_PROBES, n_valid)))


# ---------------------------------------------------------------------------
# Estimator

class ProbeDistributor(BaseEstimator):
    """Place probes on a mesh and associate them with its vertices.

    All work happens in the mesh's canonical local frame, so rigid copies
    of a mesh receive identical associations.

    Parameters
    ----------
    n_probes : int or "auto"
        Probe count. ``"auto"`` uses one probe per 2 m^2 of surface, at
        least 4.
    n_assoc : int
        Probes blended per vertex.
    density : float
        Surface samples per square meter.
    k_neighbors : int
        Nearest candidates tested for visibility per sample.
    n_scenarios : int
        Lighting scenarios used to refine the weights.
    iters : int
        Optimizer steps; 0 keeps the geometric prior.
    lr_start, lr_end : float
        Cosine learning-rate schedule endpoints.
    train_dirs, train_min_angle, train_rays, train_bounces
        Query directions, cone half-angle in degrees, trace rays and
        bounce count for the training radiance tables.
    random_state : int
        Seed for sampling, clustering and scenarios.

    Attributes
    ----------
    association_ : Association
    medoids_ : MedoidSet
    samples_ : SurfaceSamples
        Samples on the canonical mesh.
    valid_ : ndarray of bool
    prior_ : Association
        Association before optimization.
    optimization_ : OptimizationResult or None
    """

    def __init__(self, n_probes="auto", n_assoc=DEFAULT_N_ASSOC, density=100.0,
                 k_neighbors=DEFAULT_K_NEIGHBORS, n_scenarios=6, iters=400, lr_start=0.01,
                 lr_end=0.001, train_dirs=120, train_min_angle=30.0, train_rays=256,
                 train_bounces=1, random_state=0):
        self.n_probes = n_probes
        self.n_assoc = n_assoc
        self.density = density
        self.k_neighbors = k_neighbors
        self.n_scenarios = n_scenarios
        self.iters = iters
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.train_dirs = train_dirs
        self.train_min_angle = train_min_angle
        self.train_rays = train_rays
        self.train_bounces = train_bounces
        self.random_state = random_state

    def _probe_count(self, area, n_valid):
        if self.n_probes == "auto" or self.n_probes is None:
            return auto_probe_count(area, n_valid)
        k = int(self.n_probes)
        if not 1 <= k <= MAX_PROBES:
            raise ValueError(f"n_probes must lie in [1, {MAX_PROBES}]")
        if k > n_valid:
            raise ValueError(f"n_probes={k} exceeds the {n_valid} valid samples")
        return k

    def fit(self, mesh, y=None):
        seed = int(self.random_state)
        canon = canonicalize(mesh)
        samples = blue_noise_sample(canon, self.density, seed)
        valid = sample_validity(canon, samples, seed=seed)
        if valid.sum() < 2:
            raise ValueError("fewer than two valid surface samples")
        k = self._probe_count(canon.total_area, int(valid.sum()))
        if self.n_assoc > k:
            raise ValueError("n_assoc cannot exceed the probe count")

        keep = np.flatnonzero(valid)
        sub = samples[keep]
        graph = build_visibility_graph(canon, sub, self.k_neighbors)
        medoids = k_medoids(graph, sub, k, seed)
        sample_w = prior_weights(graph, sub, medoids, self.n_assoc)
        prior = transfer_to_vertices(canon, sub, sample_w, self.n_assoc, k,
                                     medoid_positions=sub.positions[medoids.medoids])
        result = None
        assoc = prior
        if self.iters > 0:
            tables, ds = training_tables(canon, sub, self.n_scenarios, seed, self.train_dirs,
                                         self.train_rays, self.train_bounces)
            objective = AssociationObjective(canon, sub, prior, tables, ds,
                                             math.cos(math.radians(self.train_min_angle)))
            result = optimize_association(objective, prior, self.iters, self.lr_start, self.lr_end)
            assoc = result.association
        self.canonical_mesh_ = canon
        self.samples_ = samples
        self.valid_ = valid
        self.graph_ = graph
        self.medoids_ = medoids
        self.prior_ = prior
        self.optimization_ = result
        self.association_ = assoc
        self.probe_count_ = k
        return self

    def fit_transform(self, mesh, y=None):
        return self.fit(mesh).association_

    def transform(self, mesh=None):
        check_is_fitted(self, "association_")
        return self.association_
