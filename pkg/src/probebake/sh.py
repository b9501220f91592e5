"""Real spherical harmonics for bands 0..2.

Conventions used across the package:

* 9 coefficients per channel, ordered (0,0), (1,-1), (1,0), (1,1),
  (2,-2), (2,-1), (2,0), (2,1), (2,2).
* Orthonormal real basis without the Condon-Shortley phase.
* An RGB probe is an array of shape ``(9, 3)`` (coefficient-major).
"""

from dataclasses import dataclass

import numpy as np

N_COEFFS = 9
BAND_OF = np.array([0, 1, 1, 1, 2, 2, 2, 2, 2])

# Clamped-cosine zonal factors per band: pi, 2pi/3, pi/4.
COSINE_LOBE = np.array([np.pi, 2.0 * np.pi / 3.0, np.pi / 4.0])

_C0 = 0.5 / np.sqrt(np.pi)
_C1 = np.sqrt(3.0 / (4.0 * np.pi))
_C2 = 0.5 * np.sqrt(15.0 / np.pi)
_C20 = 0.25 * np.sqrt(5.0 / np.pi)
_C22 = 0.25 * np.sqrt(15.0 / np.pi)

_UNIT_TOL = 1e-6


def _as_directions(d):
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != 3:
        raise ValueError(f"directions must have a trailing axis of 3, got {d.shape}")
    norms = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ValueError("directions must be unit length")
    return d


def eval_basis(d):
    """Evaluate the 9 basis functions at unit direction(s) ``d``.

    Accepts a single ``(3,)`` vector or a ``(..., 3)`` batch and returns
    ``(9,)`` or ``(..., 9)``.
    """
    d = _as_directions(d)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (N_COEFFS,))
    out[..., 0] = _C0
    out[..., 1] = _C1 * y
    out[..., 2] = _C1 * z
    out[..., 3] = _C1 * x
    out[..., 4] = _C2 * x * y
    out[..., 5] = _C2 * y * z
    out[..., 6] = _C20 * (3.0 * z * z - 1.0)
    out[..., 7] = _C2 * x * z
    out[..., 8] = _C22 * (x * x - y * y)
    return out


def band_scale():
    """Per-coefficient clamped-cosine factors, shape ``(9,)``."""
    return COSINE_LOBE[BAND_OF]


def cosine_convolve(sh):
    """Convolve SH coefficients with the clamped cosine lobe.

    ``sh`` has the coefficient axis first: ``(9,)`` or ``(9, channels)``.
    """
    sh = np.asarray(sh, dtype=np.float64)
    if sh.shape[0] != N_COEFFS:
        raise ValueError(f"expected 9 coefficients on axis 0, got {sh.shape}")
    scale = band_scale().reshape((N_COEFFS,) + (1,) * (sh.ndim - 1))
    return sh * scale


def irradiance_basis(d):
    """Basis rows mapping coefficients to irradiance response at ``d``.

    Equals ``cosine_convolve(Y(d)) / pi``; shape ``(..., 9)``.
    """
    return eval_basis(d) * (band_scale() / np.pi)


@dataclass(frozen=True)
class DirectionSet:
    """Unit directions with quadrature weights in steradians."""

    directions: np.ndarray
    solid_weights: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        w = np.asarray(self.solid_weights, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] != 3 or w.shape != (d.shape[0],):
            raise ValueError("directions must be (n, 3) with n weights")
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > _UNIT_TOL):
            raise ValueError("directions must be unit length")
        if np.any(w <= 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "solid_weights", w)

    def __len__(self):
        return self.directions.shape[0]

    def rotated(self, rotation):
        rotation = np.asarray(rotation, dtype=np.float64)
        dirs = self.directions @ rotation.T
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return DirectionSet(dirs, self.solid_weights.copy())


def _random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def make_direction_set(n, seed=None):
    """Spherical Fibonacci set of ``n`` directions with equal weights 4pi/n.

    With ``seed=None`` the canonical (unrotated) lattice is returned; an
    integer seed applies a reproducible random rotation.
    """
    n = int(n)
    if n < 8:
        raise ValueError(f"direction set needs at least 8 directions, got {n}")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    phi = 2.0 * np.pi * i / golden
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if seed is not None:
        dirs = dirs @ _random_rotation(np.random.default_rng(seed)).T
    return DirectionSet(dirs, np.full(n, 4.0 * np.pi / n))


def project(values, ds):
    """Quadrature projection of per-direction samples onto the basis.

    ``values`` is ``(n,)`` or ``(n, channels)``; the result puts the
    coefficient axis first.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != len(ds):
        raise ValueError(
            f"got {values.shape[0]} values for {len(ds)} directions"
        )
    basis = eval_basis(ds.directions) * ds.solid_weights[:, None]
    return np.tensordot(basis, values, axes=([0], [0]))


def reconstruct_irradiance(sh, d):
    """Irradiance response ``(1/pi) sum sh * T(Y)(d)`` for an RGB probe.

    ``sh`` is ``(9, 3)``; ``d`` is ``(3,)`` or ``(n, 3)``.
    """
    sh = np.asarray(sh, dtype=np.float64)
    return irradiance_basis(d) @ sh


def zero_band2(sh):
    """Copy of ``sh`` with band-2 coefficients cleared (coarse LOD)."""
    out = np.array(sh, dtype=np.float64, copy=True)
    out[4:] = 0.0
    return out
