"""Synthetic grids, observation noise, and restoration metrics.

Phantom constructors are deterministic: the same arguments always
produce the same grid, with no random state involved.  Noise is drawn
from one counter-based stream per site (Philox keyed by the seed and
the flat row-major site index), so the result does not depend on
evaluation order and parallel workers can corrupt disjoint site ranges
independently.

Each noise model matches one manifold: Von Mises angular offsets on
the circle, Gaussian tangent displacements on the sphere, and
entrywise Rician magnitude corruption of tensors.  The Rician level
convention is sigma = 1/eta per matrix entry, so larger eta means a
cleaner observation; candidate draws that fail positive definiteness
are rejected and redrawn from the same site's stream.
"""

import numpy as np
from dataclasses import dataclass

from .errors import ManifoldMismatchError, NoConvergenceError
from .manifolds import SPHERE, jacobi_eigh, mat_to_sym, sym_to_mat, wrap_angle

__all__ = [
    "VonMises", "TangentGaussian", "Rician", "NOISE_MODELS",
    "apply_noise", "delta_snr", "make_phantom", "PHANTOM_KINDS",
]

_MAX_REDRAWS = 100
# accepted tensors must survive the Cholesky validation downstream
_PD_FLOOR = 1e-10


def _check_level(value, label):
    if not (np.isfinite(value) and value > 0.0):
        raise ValueError(f"{label} must be a positive finite number, got {value}")


def _check_seed(seed):
    if not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) < 2 ** 64:
        raise ValueError(f"seed must be an integer in [0, 2^64), got {seed!r}")


@dataclass(frozen=True)
class VonMises:
    """Angular offsets theta ~ VonMises(0, kappa) applied as f = exp_g(theta)."""

    kappa: float
    seed: int = 0

    kind = "vonmises"
    manifold_name = "s1"

    def __post_init__(self):
        _check_level(self.kappa, "kappa")
        _check_seed(self.seed)


@dataclass(frozen=True)
class TangentGaussian:
    """Tangent displacements with i.i.d. N(0, sigma^2) components, f = exp_g(v)."""

    sigma: float
    seed: int = 0

    kind = "tangent-gaussian"
    manifold_name = "s2"

    def __post_init__(self):
        _check_level(self.sigma, "sigma")
        _check_seed(self.seed)


@dataclass(frozen=True)
class Rician:
    """Entrywise Rician magnitude corruption of symmetric matrix entries.

    Each entry m becomes sqrt((m + x)^2 + y^2) with x, y ~ N(0, 1/eta^2);
    the matrix stays symmetric because the six independent entries are
    corrupted once and mirrored.  Non positive definite results are
    rejected and redrawn.
    """

    eta: float
    seed: int = 0

    kind = "rician"
    manifold_name = "spd3"

    def __post_init__(self):
        _check_level(self.eta, "eta")
        _check_seed(self.seed)


NOISE_MODELS = {c.kind: c for c in (VonMises, TangentGaussian, Rician)}


def _site_rng(seed, site):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(site)]))


def _vonmises_flat(flat, spec):
    offs = np.empty(flat.shape)
    for i in range(flat.shape[0]):
        offs[i, 0] = _site_rng(spec.seed, i).vonmises(0.0, spec.kappa)
    return wrap_angle(flat + offs)


def _tangent_gaussian_flat(flat, spec):
    basis = SPHERE.tangent_basis(flat)
    coeff = np.empty((flat.shape[0], SPHERE.dim))
    for i in range(flat.shape[0]):
        coeff[i] = _site_rng(spec.seed, i).normal(0.0, spec.sigma, size=SPHERE.dim)
    v = np.einsum("nk,nkc->nc", coeff, basis)
    return SPHERE.exp(flat, v)


def _rician_flat(flat, spec):
    sig = 1.0 / spec.eta
    n = flat.shape[0]
    gens = [_site_rng(spec.seed, i) for i in range(n)]
    out = np.empty_like(flat)
    pending = np.arange(n)
    for _ in range(_MAX_REDRAWS):
        draws = np.empty((pending.size, 2, 6))
        for j, site in enumerate(pending):
            draws[j] = gens[site].normal(0.0, sig, size=(2, 6))
        cand = np.sqrt((flat[pending] + draws[:, 0]) ** 2 + draws[:, 1] ** 2)
        w, _ = jacobi_eigh(sym_to_mat(cand))
        ok = w[..., 0] > _PD_FLOOR
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return out
    raise NoConvergenceError(
        f"rician: no positive definite draw after {_MAX_REDRAWS} attempts "
        f"at {pending.size} site(s), first flat index {int(pending[0])}")


_APPLY = {
    "vonmises": _vonmises_flat,
    "tangent-gaussian": _tangent_gaussian_flat,
    "rician": _rician_flat,
}


def apply_noise(manifold, values, spec):
    """Corrupt a grid of manifold values with the observation model of spec.

    Parameters
    ----------
    manifold : Manifold
        Must be the manifold the noise model is defined on.
    values : ndarray, spatial shape + (point_dim,)
        Clean grid; unchanged on return.
    spec : VonMises | TangentGaussian | Rician
        Model, level, and seed.

    Returns
    -------
    ndarray of the same shape, one corrupted draw.

    Raises
    ------
    ManifoldMismatchError
        When the model does not match the manifold.
    NoConvergenceError
        When a tensor site fails positive definiteness 100 times in a row.
    """
    if manifold.name != spec.manifold_name:
        raise ManifoldMismatchError(
            f"{spec.kind} noise is defined on {spec.manifold_name}, "
            f"not {manifold.name}")
    values = manifold.check_point(np.asarray(values, dtype=float))
    flat = values.reshape(-1, manifold.point_dim)
    out = _APPLY[spec.kind](flat, spec)
    return out.reshape(values.shape)


def delta_snr(manifold, truth, observed, restored):
    """Improvement of the restoration over the observation, in decibels.

    Computes ``10 log10(sum d(g, f)^2 / sum d(g, u)^2)`` over all sites,
    for truth g, observation f, and restoration u.  Positive values mean
    the restoration is closer to the truth than the observation was.
    Returns ``inf`` when the restoration matches the truth exactly.
    """
    truth = np.asarray(truth, dtype=float)
    observed = np.asarray(observed, dtype=float)
    restored = np.asarray(restored, dtype=float)
    if truth.shape != observed.shape or truth.shape != restored.shape:
        raise ValueError(
            f"grid shapes differ: truth {truth.shape}, observed "
            f"{observed.shape}, restored {restored.shape}")
    num = float(np.sum(manifold.dist(truth, observed) ** 2))
    den = float(np.sum(manifold.dist(truth, restored) ** 2))
    if den == 0.0:
        return np.inf
    return 10.0 * np.log10(num / den)


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

PHANTOM_KINDS = ("constant", "ramp", "jumps", "disk")

# per-manifold tangent amplitudes, kept well inside the injectivity
# radius; tensor choices keep all eigenvalues inside [0.2, 5]
_RAMP_SPAN = {"s1": 1.5 * np.pi, "s2": 1.8, "spd3": 2.0}
_SMOOTH_AMP = {"s1": 0.8, "s2": 0.5, "spd3": 0.6}
_JUMP_SIZE = {"s1": 1.8, "s2": 1.0, "spd3": 1.0}


def _anchor(manifold):
    """Fixed base point and two unit tangent directions for phantoms."""
    name = manifold.name
    if name == "s1":
        base = np.array([0.3])
    elif name == "s2":
        base = np.array([0.0, 0.0, 1.0])
    elif name == "spd3":
        base = mat_to_sym(np.diag([1.0, 1.3, 0.7]))
    elif name.startswith("euclidean"):
        base = np.zeros(manifold.point_dim)
    else:
        raise ValueError(f"no phantom anchor for manifold {name!r}")
    basis = manifold.tangent_basis(base)
    return base, basis[0], basis[-1]


def _amp(table, manifold, default):
    return table.get(manifold.name, default)


def make_phantom(kind, dims, manifold):
    """Deterministic test grid of the requested kind.

    Parameters
    ----------
    kind : str
        "constant" (any dims), "ramp" or "jumps" (1-D), "disk" (2-D).
        The ramp is a geodesic arc, so its multiscale details vanish;
        jumps is a smooth arc with one plateau displaced sideways,
        giving two discontinuities; disk is a displaced circular region
        over a gentle horizontal drift.
    dims : int or tuple of int
        Grid extents.
    manifold : Manifold

    Returns
    -------
    ndarray, dims + (point_dim,)
    """
    if np.isscalar(dims):
        dims = (int(dims),)
    dims = tuple(int(d) for d in dims)
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind {kind!r}, expected one of "
                         f"{PHANTOM_KINDS}")
    if any(d < 1 for d in dims):
        raise ValueError(f"grid extents must be positive, got {dims}")
    base, v1, v2 = _anchor(manifold)

    if kind == "constant":
        return np.tile(base, dims + (1,))

    if kind in ("ramp", "jumps"):
        if len(dims) != 1:
            raise ValueError(f"{kind} phantom is one-dimensional, got dims {dims}")
        n = dims[0]
        t = np.arange(n) / max(n - 1, 1)
        if kind == "ramp":
            span = _amp(_RAMP_SPAN, manifold, 3.0)
            tang = ((t - 0.5) * span)[:, None] * v1
        else:
            amp = _amp(_SMOOTH_AMP, manifold, 1.0)
            jump = _amp(_JUMP_SIZE, manifold, 2.0)
            plateau = (t >= 1.0 / 3.0) & (t < 2.0 / 3.0)
            tang = (amp * np.sin(2.0 * np.pi * t))[:, None] * v1 \
                + np.where(plateau, jump, 0.0)[:, None] * v2
        return manifold.exp(np.broadcast_to(base, (n,) + base.shape), tang)

    # disk
    if len(dims) != 2:
        raise ValueError(f"disk phantom is two-dimensional, got dims {dims}")
    n, m = dims
    r = np.arange(n)[:, None]
    c = np.arange(m)[None, :]
    radius = 0.33 * min(n, m)
    inside = (r - 0.5 * (n - 1)) ** 2 + (c - 0.5 * (m - 1)) ** 2 <= radius ** 2
    drift = 0.3 * (c / max(m - 1, 1)) * np.ones((n, 1))
    jump = _amp(_JUMP_SIZE, manifold, 2.0)
    tang = np.where(inside, jump, 0.0)[..., None] * v1 + drift[..., None] * v2
    return manifold.exp(np.broadcast_to(base, (n, m) + base.shape), tang)
