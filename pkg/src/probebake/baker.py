"""Regularized least-squares fit of probe SH coefficients.

Unknowns are laid out probe-major: column ``k * 9 + c`` holds coefficient
``c`` of probe ``k``; the three colour channels share the design matrix and
are solved as three right-hand sides.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .mesh import build_butterfly_pairs, surface_samples
from .radiance import build_radiance_table
from .sh import N_COEFFS, irradiance_basis, make_direction_set

DEFAULT_LAMBDA = 0.1
DEFAULT_BAKE_DIRS = 960
JITTER = 1e-8


class NumericalError(RuntimeError):
    pass


@dataclass(eq=False)
class ProbeSet:
    """RGB SH coefficients per probe, shape ``(probe_count, 9, 3)``."""

    coeffs: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 3 or c.shape[1:] != (N_COEFFS, 3):
            raise ValueError(f"probe coefficients must be (K, 9, 3), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise NumericalError("non-finite probe coefficients")
        self.coeffs = c

    @property
    def probe_count(self):
        return self.coeffs.shape[0]

    def dump_text(self):
        """One line per probe: 27 floats, coefficient-major then RGB."""
        return "".join(" ".join(f"{v:.9g}" for v in p.ravel()) + "\n" for p in self.coeffs)


@dataclass(eq=False)
class FitSystem:
    A: sparse.csr_matrix
    rhs: np.ndarray
    R: sparse.csr_matrix
    lam: float
    probe_count: int

    def unknowns(self, coeffs):
        return np.asarray(coeffs).reshape(self.probe_count * N_COEFFS, 3)

    def light_energy(self, coeffs):
        r = self.A @ self.unknowns(coeffs) - self.rhs
        return float(np.sum(r * r))

    def reg_energy(self, coeffs):
        r = self.R @ self.unknowns(coeffs)
        return float(np.sum(r * r))

    def loss(self, coeffs):
        return self.light_energy(coeffs) + self.lam * self.reg_energy(coeffs)

    def normal_equations(self):
        n = (self.A.T @ self.A).toarray()
        if self.lam:
            n += self.lam * (self.R.T @ self.R).toarray()
        return n, self.A.T @ self.rhs

    def gradient(self, coeffs):
        """d(loss)/d(coeffs) in unknown layout, shape ``(9K, 3)``."""
        n, b = self.normal_equations()
        return 2.0 * (n @ self.unknowns(coeffs) - b)


def effective_directions(normal, ds, min_cos=0.0):
    """Indices and weights ``max(0, d.n)`` of directions with ``d.n > min_cos``."""
    cos = ds.directions @ np.asarray(normal, dtype=np.float64)
    idx = np.flatnonzero(cos > min_cos)
    return idx, cos[idx]


def mixing_matrix(mesh, assoc, samples):
    """Sparse ``(samples, probes)`` matrix B @ W of barycentric-blended weights."""
    s = np.repeat(np.arange(len(samples)), 3)
    b = sparse.csr_matrix((samples.bary.ravel(), (s, mesh.triangles[samples.triangles].ravel())),
                          shape=(len(samples), mesh.n_vertices))
    return (b @ assoc.matrix()).tocsr()


def gradient_basis(mesh):
    """Gradients of the three linear hat functions per triangle, ``(T, 3, 3)``."""
    tri = mesh.vertices[mesh.triangles]
    n = mesh.face_normals
    two_area = 2.0 * mesh.areas[:, None]
    ga = np.cross(n, tri[:, 2] - tri[:, 1]) / two_area
    gb = np.cross(n, tri[:, 0] - tri[:, 2]) / two_area
    gc = np.cross(n, tri[:, 1] - tri[:, 0]) / two_area
    return np.stack([ga, gb, gc], axis=1)


def gradient_operator(mesh, pairs=None):
    """Difference operator D: vertex values -> sqrt(a_t + a_u) (grad_t - grad_u).

    Three rows (x, y, z) per butterfly pair; pairs with zero combined area
    are skipped.
    """
    if pairs is None:
        pairs = build_butterfly_pairs(mesh)
    grads = gradient_basis(mesh)
    rows, cols, vals = [], [], []
    r = 0
    for pair in pairs:
        weight = pair.area_t + pair.area_u
        if weight <= 0:
            continue
        scale = np.sqrt(weight)
        for tri, sign in ((pair.tri_t, 1.0), (pair.tri_u, -1.0)):
            for j, v in enumerate(mesh.triangles[tri]):
                for axis in range(3):
                    rows.append(r + axis)
                    cols.append(v)
                    vals.append(sign * scale * grads[tri, j, axis])
        r += 3
    return sparse.csr_matrix((vals, (rows, cols)), shape=(r, mesh.n_vertices))


def build_gradient_rows(mesh, assoc, pairs=None):
    """Regularizer rows ``D @ Y' @ W`` mapping probe coefficients to
    per-pair gradient jumps of the vertex irradiance."""
    d = gradient_operator(mesh, pairs)
    yv = irradiance_basis(mesh.normals)
    w = assoc.matrix().tocoo()
    rows = np.repeat(w.row, N_COEFFS)
    cols = (w.col[:, None] * N_COEFFS + np.arange(N_COEFFS)).ravel()
    vals = (w.data[:, None] * yv[w.row]).ravel()
    yw = sparse.csr_matrix((vals, (rows, cols)), shape=(mesh.n_vertices, assoc.probe_count * N_COEFFS))
    return (d @ yw).tocsr()


def sample_area_weight(mesh, samples):
    return mesh.total_area / max(len(samples), 1)


def assemble(mesh, assoc, samples, table, ds, lam=DEFAULT_LAMBDA, min_cos=0.0):
    """Weighted design matrix over effective directions of valid samples."""
    valid = np.asarray(table.valid, dtype=bool)
    if not valid.any():
        raise ValueError("no valid samples to fit")
    cos = samples.normals @ ds.directions.T
    eff = (cos > min_cos) & valid[:, None]
    s_idx, q_idx = np.nonzero(eff)
    row_w = np.sqrt(cos[s_idx, q_idx] * ds.solid_weights[q_idx] * sample_area_weight(mesh, samples))

    m = mixing_matrix(mesh, assoc, samples)
    m.sort_indices()
    counts = np.diff(m.indptr)[s_idx]
    starts = m.indptr[s_idx]
    total = int(counts.sum())
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    ptr = np.repeat(starts, counts) + offs
    row = np.repeat(np.arange(len(s_idx)), counts)
    probe = m.indices[ptr]
    mval = m.data[ptr] * row_w[row]

    ybar = irradiance_basis(ds.directions)
    vals = (mval[:, None] * ybar[q_idx[row]]).ravel()
    rows = np.repeat(row, N_COEFFS)
    cols = (probe[:, None] * N_COEFFS + np.arange(N_COEFFS)).ravel()
    a = sparse.csr_matrix((vals, (rows, cols)), shape=(len(s_idx), assoc.probe_count * N_COEFFS))
    rhs = row_w[:, None] * table.values[s_idx, q_idx]
    r = build_gradient_rows(mesh, assoc)
    return FitSystem(a, rhs, r, float(lam), assoc.probe_count)


def solve_normal_equations(n, b):
    """Cholesky solve of ``n x = b`` with relative diagonal jitter.

    Falls back to a least-norm solution (with a warning) if the jittered
    matrix is still not positive definite.
    """
    dim = n.shape[0]
    scale = np.trace(n) / dim if dim else 0.0
    jitter = JITTER * (scale if scale > 0 else 1.0)
    nj = n + jitter * np.eye(dim)
    try:
        x = linalg.cho_solve(linalg.cho_factor(nj, lower=True, check_finite=True), b)
    except linalg.LinAlgError:
        warnings.warn("normal matrix rank deficient after jitter; using least-norm solution")
        x = linalg.lstsq(nj, b)[0]
    if not np.all(np.isfinite(x)):
        raise NumericalError("solver produced non-finite coefficients")
    return x


def solve(system):
    """Solve the normal equations of ``system`` for all three channels."""
    n, b = system.normal_equations()
    x = solve_normal_equations(n, b)
    res = np.linalg.norm(n @ x - b)
    ref = max(np.linalg.norm(b), np.finfo(float).tiny)
    if res > 1e-6 * ref + JITTER * np.trace(n) / max(n.shape[0], 1) * np.linalg.norm(x):
        warnings.warn(f"normal-equation residual {res / ref:.2e} exceeds tolerance")
    return ProbeSet(x.reshape(system.probe_count, N_COEFFS, 3))


@dataclass
class BakeParams:
    reg_lambda: float = DEFAULT_LAMBDA
    n_dirs: int = DEFAULT_BAKE_DIRS
    density: float = 100.0
    seed: int = 0


def bake(mesh, assoc, scene, instance=0, params=None, directions=None, return_system=False):
    """Bake probes for one scene instance of ``mesh``.

    Samples are generated in local space and carried to world space; the
    fit happens in world space so SH coefficients are world-oriented.
    """
    params = params or BakeParams()
    inst = scene.instances[instance]
    world = inst.world_mesh
    samples = surface_samples(mesh, params.density, params.seed).transformed(inst.transform)
    ds = directions if directions is not None else make_direction_set(params.n_dirs)
    table = build_radiance_table(scene, samples, ds, ds, params.seed * 100003 + instance)
    system = assemble(world, assoc, samples, table, ds, params.reg_lambda)
    probes = solve(system)
    probes.metadata.update(reg_lambda=params.reg_lambda, n_dirs=len(ds), density=params.density,
                           seed=params.seed, instance=instance)
    if return_system:
        return probes, system, samples, table
    return probes


class ProbeBaker(BaseEstimator):
    """Fit probe coefficients to a radiance table.

    Parameters
    ----------
    reg_lambda : float
        Weight of the gradient-smoothness regularizer.
    min_cos : float
        Directions with ``d.n <= min_cos`` are ignored while fitting.
    """

    def __init__(self, reg_lambda=DEFAULT_LAMBDA, min_cos=0.0):
        self.reg_lambda = reg_lambda
        self.min_cos = min_cos

    def fit(self, mesh, association, samples, table):
        """Fit ``probes_`` to ``table`` (computed on ``samples`` of ``mesh``)."""
        if table.directions is None:
            raise ValueError("radiance table must carry its direction set")
        if table.shape[0] != len(samples):
            raise ValueError("table rows must match the number of samples")
        self.mesh_ = mesh
        self.association_ = association
        self.system_ = assemble(mesh, association, samples, table, table.directions,
                                self.reg_lambda, self.min_cos)
        self.probes_ = solve(self.system_)
        return self

    def predict(self, samples, directions, lod=0):
        """Reconstructed ``f`` for every sample and direction, ``(S, Q, 3)``."""
        from .evaluate import reconstruct_batch

        check_is_fitted(self, "probes_")
        return reconstruct_batch(self.association_, self.probes_.coeffs, self.mesh_, samples,
                                 directions, lod)

    def score(self, samples, table):
        """Negative mRMSE against ``table`` (higher is better)."""
        from .evaluate import mrmse

        check_is_fitted(self, "probes_")
        return -mrmse(table, self.association_, self.probes_.coeffs, samples, self.mesh_)
