"""Riemannian geometry kernels for the supported value spaces.

Points and tangent vectors are plain numpy arrays whose last axis holds
the coordinates; every operation broadcasts over arbitrary leading axes.
Coordinate conventions:

* circle ``s1``      : one angle in (-pi, pi]
* sphere ``s2``      : unit 3-vector
* tensors ``spd3``   : 6 upper-triangle entries (xx, xy, xz, yy, yz, zz)
  of a symmetric positive definite 3x3 matrix, affine-invariant metric
* flat ``euclidean`` : n real coordinates

The circle and flat space are zero-curvature ("flat") spaces for which
Jacobi-field machinery degenerates to identities; callers may branch on
``Manifold.flat`` for that shortcut.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CutLocusError,
    DegenerateGeodesicError,
    InvalidPointError,
)

TWO_PI = 2.0 * np.pi

# Below this geodesic length two points count as coincident.
DEGENERATE_TOL = 1e-15


def wrap_angle(x):
    """Wrap angles into (-pi, pi]; the boundary maps to +pi."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), TWO_PI)


def _raise_any(mask, exc, message):
    mask = np.asarray(mask)
    if np.any(mask):
        idx = tuple(int(i) for i in np.argwhere(mask)[0])
        raise exc(f"{message} (first at batch index {idx}, {int(np.count_nonzero(mask))} total)")


@dataclass
class JacobiFrame:
    """Eigen-decomposition of w -> R(w, g')g' along the geodesic p -> q.

    ``basis`` holds orthonormal tangent vectors at ``base`` (shape
    ``(..., dim, point_dim)``); ``lams`` the matching curvature
    eigenvalues for the unit-speed geodesic direction; ``length`` the
    geodesic length. One eigenvalue is zero with its basis vector
    parallel to the geodesic direction.
    """

    manifold: "Manifold"
    base: np.ndarray
    target: np.ndarray
    lams: np.ndarray
    basis: np.ndarray
    length: np.ndarray

    def transported_basis(self):
        """Frame vectors parallel-transported to ``target``."""
        return self.manifold.transport_frame(self.base, self.target, self.basis)


class Manifold:
    """Common interface; concrete spaces override the geometric kernels."""

    name = ""
    point_dim = 0
    dim = 0
    flat = False

    # -- validation ----------------------------------------------------
    def check_point(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape[-1:] != (self.point_dim,):
            raise InvalidPointError(
                f"{self.name}: expected last axis {self.point_dim}, got shape {p.shape}")
        _raise_any(~np.isfinite(p).all(axis=-1), InvalidPointError,
                   f"{self.name}: non-finite coordinates")
        self._check_point(p)
        return p

    def _check_point(self, p):  # pragma: no cover - overridden
        pass

    # -- metric --------------------------------------------------------
    def inner(self, p, u, v):
        """Riemannian inner product of tangents u, v at p."""
        return np.sum(np.asarray(u) * np.asarray(v), axis=-1)

    def norm(self, p, v):
        return np.sqrt(np.maximum(self.inner(p, v, v), 0.0))

    def dist(self, p, q):
        raise NotImplementedError

    # -- exponential/logarithm -----------------------------------------
    def exp(self, p, v):
        raise NotImplementedError

    def log(self, p, q, resolve_cut=False):
        """Inverse exponential; raises CutLocusError at the cut locus.

        ``resolve_cut=True`` applies the documented deterministic
        resolution where one exists (circle: antipodal tie broken
        toward +pi); on the sphere the error always propagates.
        """
        raise NotImplementedError

    def geodesic_point(self, p, q, t):
        """Point at arclength ``t`` along the geodesic from p toward q."""
        v = self.log(p, q, resolve_cut=True)
        d = self.norm(p, v)
        t = np.asarray(t, dtype=float)
        scale = np.where(d > 0.0, t / np.where(d > 0.0, d, 1.0), 0.0)
        return self.exp(p, v * scale[..., None])

    def transport(self, p, q, v):
        """Parallel transport of v along the geodesic from p to q."""
        raise NotImplementedError

    def transport_frame(self, p, q, vs):
        """Transport several tangents (stacked on axis -2) from p to q."""
        return self.transport(p[..., None, :], q[..., None, :], vs)

    # -- frames ----------------------------------------------------------
    def tangent_basis(self, p):
        """Deterministic orthonormal basis of T_p, shape (..., dim, point_dim)."""
        raise NotImplementedError

    def tangent_coords(self, p, v):
        """Coordinates of tangent v in ``tangent_basis(p)``, shape (..., dim)."""
        basis = self.tangent_basis(p)
        return self.inner(p[..., None, :], v[..., None, :], basis)

    def tangent_from_coords(self, p, c):
        """Tangent vector with coordinates ``c`` in ``tangent_basis(p)``."""
        basis = self.tangent_basis(p)
        return np.einsum("...k,...kc->...c", c, basis)

    def jacobi_frame(self, p, q):
        lams, basis, d = self._jacobi(np.asarray(p, float), np.asarray(q, float))
        return JacobiFrame(self, np.asarray(p, float), np.asarray(q, float), lams, basis, d)

    def _jacobi(self, p, q):
        raise NotImplementedError

    # -- randomness (tests, synthetic data) ------------------------------
    def random_point(self, rng, shape=()):
        raise NotImplementedError

    def random_tangent(self, rng, p, scale=1.0):
        basis = self.tangent_basis(p)
        coeff = rng.normal(0.0, scale, size=p.shape[:-1] + (self.dim,))
        return np.einsum("...k,...kc->...c", coeff, basis)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class Circle(Manifold):
    """Unit circle, represented by an angle in (-pi, pi]."""

    name = "s1"
    point_dim = 1
    dim = 1
    flat = True

    def _check_point(self, p):
        bad = (p[..., 0] > np.pi) | (p[..., 0] <= -np.pi)
        _raise_any(bad, InvalidPointError, "s1: angle outside (-pi, pi]")

    def exp(self, p, v):
        return wrap_angle(np.asarray(p, float) + np.asarray(v, float))

    def log(self, p, q, resolve_cut=False):
        d = wrap_angle(np.asarray(q, float) - np.asarray(p, float))
        if not resolve_cut:
            _raise_any(d[..., 0] == np.pi, CutLocusError, "s1: antipodal pair")
        return d

    def dist(self, p, q):
        return np.abs(wrap_angle(np.asarray(q, float) - np.asarray(p, float)))[..., 0]

    def transport(self, p, q, v):
        return np.broadcast_to(np.asarray(v, float),
                               np.broadcast_shapes(np.shape(p), np.shape(v))).copy()

    def tangent_basis(self, p):
        p = np.asarray(p, float)
        return np.ones(p.shape[:-1] + (1, 1))

    def tangent_coords(self, p, v):
        return np.asarray(v, float).copy()

    def tangent_from_coords(self, p, c):
        return np.asarray(c, float).copy()

    def _jacobi(self, p, q):
        v = self.log(p, q, resolve_cut=True)
        d = np.abs(v[..., 0])
        _raise_any(d < DEGENERATE_TOL, DegenerateGeodesicError, "s1: coincident points")
        basis = np.sign(v)[..., None, :]
        lams = np.zeros(p.shape[:-1] + (1,))
        return lams, basis, d

    def random_point(self, rng, shape=()):
        return rng.uniform(-np.pi, np.pi, size=shape + (1,))


class Sphere(Manifold):
    """Unit 2-sphere embedded in R^3."""

    name = "s2"
    point_dim = 3
    dim = 2

    def _check_point(self, p):
        bad = np.abs(np.linalg.norm(p, axis=-1) - 1.0) > 1e-9
        _raise_any(bad, InvalidPointError, "s2: point not unit length")

    def exp(self, p, v):
        p = np.asarray(p, float)
        v = np.asarray(v, float)
        theta = np.linalg.norm(v, axis=-1, keepdims=True)
        # sinc is sin(pi x)/(pi x); theta/pi recovers sin(theta)/theta at 0
        out = np.cos(theta) * p + np.sinc(theta / np.pi) * v
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def log(self, p, q, resolve_cut=False):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        c = np.clip(np.sum(p * q, axis=-1, keepdims=True), -1.0, 1.0)
        w = q - c * p
        wn = np.linalg.norm(w, axis=-1, keepdims=True)
        _raise_any((wn[..., 0] < 1e-12) & (c[..., 0] < 0.0), CutLocusError,
                   "s2: antipodal pair")
        theta = np.arctan2(wn, c)
        factor = np.where(wn > 0.0, theta / np.where(wn > 0.0, wn, 1.0), 1.0)
        return factor * w

    def dist(self, p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        cr = np.linalg.norm(np.cross(p, q), axis=-1)
        dt = np.sum(p * q, axis=-1)
        return np.arctan2(cr, dt)

    def transport(self, p, q, v):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        v = np.asarray(v, float)
        u = self.log(p, q)
        d = np.linalg.norm(u, axis=-1, keepdims=True)
        e = np.where(d > 0.0, u / np.where(d > 0.0, d, 1.0), 0.0)
        w2 = np.cos(d) * e - np.sin(d) * p
        a = np.sum(v * e, axis=-1, keepdims=True)
        out = v + a * (w2 - e)
        out = np.where(d > 0.0, out, np.broadcast_to(v, out.shape))
        # numerical cleanup: stay tangent at q
        out = out - np.sum(out * q, axis=-1, keepdims=True) * q
        return out

    def tangent_basis(self, p):
        p = np.asarray(p, float)
        k = np.argmin(np.abs(p), axis=-1)
        e = np.zeros_like(p)
        np.put_along_axis(e, k[..., None], 1.0, axis=-1)
        b1 = e - np.sum(e * p, axis=-1, keepdims=True) * p
        b1 = b1 / np.linalg.norm(b1, axis=-1, keepdims=True)
        b2 = np.cross(p, b1)
        return np.stack([b1, b2], axis=-2)

    def _jacobi(self, p, q):
        v = self.log(p, q)
        d = np.linalg.norm(v, axis=-1)
        _raise_any(d < DEGENERATE_TOL, DegenerateGeodesicError, "s2: coincident points")
        e = v / d[..., None]
        n = np.cross(p, e)
        basis = np.stack([e, n], axis=-2)
        lams = np.zeros(p.shape[:-1] + (2,))
        lams[..., 1] = 1.0
        return lams, basis, d

    def random_point(self, rng, shape=()):
        x = rng.normal(size=shape + (3,))
        return x / np.linalg.norm(x, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# symmetric 3x3 helpers for the tensor manifold
# ---------------------------------------------------------------------------

_IU = np.array([0, 0, 0, 1, 1, 2])
_JU = np.array([0, 1, 2, 1, 2, 2])


def sym_to_mat(v):
    """(..., 6) upper-triangle coordinates to (..., 3, 3) symmetric matrix."""
    v = np.asarray(v, dtype=float)
    m = np.empty(v.shape[:-1] + (3, 3))
    m[..., _IU, _JU] = v
    m[..., _JU, _IU] = v
    return m


def mat_to_sym(m):
    """(..., 3, 3) symmetric matrix to its 6 upper-triangle coordinates."""
    m = np.asarray(m, dtype=float)
    return m[..., _IU, _JU].copy()


def jacobi_eigh(mats, tol=1e-14, max_sweeps=40):
    """Eigen-decomposition of symmetric 3x3 matrices by cyclic Jacobi rotations.

    Fixed rotation order and a fixed convergence threshold make the
    result a deterministic function of the input bits, independent of
    any LAPACK build. Eigenvalues are returned ascending; each
    eigenvector's largest-magnitude component is made positive.

    Parameters
    ----------
    mats : ndarray, shape (..., 3, 3)
        Symmetric input matrices.
    tol : float
        Off-diagonal threshold relative to the Frobenius norm.

    Returns
    -------
    w : ndarray, shape (..., 3)
    v : ndarray, shape (..., 3, 3)
        Columns are eigenvectors, ``mats ~ v @ diag(w) @ v.T``.
    """
    a = np.asarray(mats, dtype=float)
    batch = a.shape[:-2]
    # unpack to component arrays: the rotation loop then runs on plain
    # ufuncs with no fancy indexing, which dominates the cost for the
    # small batches the solvers produce
    a00 = a[..., 0, 0] + 0.0
    a01 = a[..., 0, 1] + 0.0
    a02 = a[..., 0, 2] + 0.0
    a11 = a[..., 1, 1] + 0.0
    a12 = a[..., 1, 2] + 0.0
    a22 = a[..., 2, 2] + 0.0
    one = np.ones(batch)
    zero = np.zeros(batch)
    v00, v01, v02 = one, zero, zero
    v10, v11, v12 = zero, one, zero
    v20, v21, v22 = zero, zero, one
    scale2 = (a00 * a00 + a11 * a11 + a22 * a22
              + 2.0 * (a01 * a01 + a02 * a02 + a12 * a12))
    thresh2 = (tol * tol) * scale2

    # |theta| overflows harmlessly to inf for near-diagonal pairs (the
    # rotation then degenerates to the identity), so keep that quiet
    with np.errstate(over="ignore"):
        for _ in range(max_sweeps):
            off2 = a01 * a01 + a02 * a02 + a12 * a12
            if np.all(off2 <= thresh2):
                break
            # rotate (0, 1)
            den = 2.0 * a01
            theta = (a11 - a00) / np.where(den == 0.0, 1.0, den)
            t = np.where(theta >= 0.0, 1.0, -1.0) \
                / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(den == 0.0, 0.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            tau = s / (1.0 + c)
            a00 = a00 - t * a01
            a11 = a11 + t * a01
            a02, a12 = a02 - s * (a12 + tau * a02), a12 + s * (a02 - tau * a12)
            a01 = np.zeros(batch)
            v00, v01 = v00 - s * (v01 + tau * v00), v01 + s * (v00 - tau * v01)
            v10, v11 = v10 - s * (v11 + tau * v10), v11 + s * (v10 - tau * v11)
            v20, v21 = v20 - s * (v21 + tau * v20), v21 + s * (v20 - tau * v21)
            # rotate (0, 2)
            den = 2.0 * a02
            theta = (a22 - a00) / np.where(den == 0.0, 1.0, den)
            t = np.where(theta >= 0.0, 1.0, -1.0) \
                / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(den == 0.0, 0.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            tau = s / (1.0 + c)
            a00 = a00 - t * a02
            a22 = a22 + t * a02
            a01, a12 = a01 - s * (a12 + tau * a01), a12 + s * (a01 - tau * a12)
            a02 = np.zeros(batch)
            v00, v02 = v00 - s * (v02 + tau * v00), v02 + s * (v00 - tau * v02)
            v10, v12 = v10 - s * (v12 + tau * v10), v12 + s * (v10 - tau * v12)
            v20, v22 = v20 - s * (v22 + tau * v20), v22 + s * (v20 - tau * v22)
            # rotate (1, 2)
            den = 2.0 * a12
            theta = (a22 - a11) / np.where(den == 0.0, 1.0, den)
            t = np.where(theta >= 0.0, 1.0, -1.0) \
                / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(den == 0.0, 0.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            tau = s / (1.0 + c)
            a11 = a11 - t * a12
            a22 = a22 + t * a12
            a01, a02 = a01 - s * (a02 + tau * a01), a02 + s * (a01 - tau * a02)
            a12 = np.zeros(batch)
            v01, v02 = v01 - s * (v02 + tau * v01), v02 + s * (v01 - tau * v02)
            v11, v12 = v11 - s * (v12 + tau * v11), v12 + s * (v11 - tau * v12)
            v21, v22 = v21 - s * (v22 + tau * v21), v22 + s * (v21 - tau * v22)

    w = np.stack([a00, a11, a22], axis=-1)
    vec = np.empty(batch + (3, 3))
    vec[..., 0, 0] = v00
    vec[..., 0, 1] = v01
    vec[..., 0, 2] = v02
    vec[..., 1, 0] = v10
    vec[..., 1, 1] = v11
    vec[..., 1, 2] = v12
    vec[..., 2, 0] = v20
    vec[..., 2, 1] = v21
    vec[..., 2, 2] = v22
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    vec = np.take_along_axis(vec, order[..., None, :], axis=-1)
    # deterministic sign: largest-|.| component of each column positive
    comp = np.argmax(np.abs(vec), axis=-2)
    lead = np.take_along_axis(vec, comp[..., None, :], axis=-2)[..., 0, :]
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return w, vec * sign[..., None, :]


def _sym_apply(func, mats):
    w, v = jacobi_eigh(mats)
    fw = func(w)
    return np.einsum("...ik,...k,...jk->...ij", v, fw, v)


def _symmetrize(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _chol3(pm):
    """Closed-form lower Cholesky factor of symmetric 3x3 matrices.

    Returns the six nonzero components (l00, l10, l11, l20, l21, l22);
    raises InvalidPointError when the input is not positive definite.
    Pure arithmetic, so the factor is a deterministic function of the
    input bits.
    """
    a = pm[..., 0, 0]
    _raise_any(a <= 0.0, InvalidPointError,
               "spd3: matrix not positive definite")
    l00 = np.sqrt(a)
    l10 = pm[..., 1, 0] / l00
    l20 = pm[..., 2, 0] / l00
    d1 = pm[..., 1, 1] - l10 * l10
    _raise_any(d1 <= 0.0, InvalidPointError,
               "spd3: matrix not positive definite")
    l11 = np.sqrt(d1)
    l21 = (pm[..., 2, 1] - l20 * l10) / l11
    d2 = pm[..., 2, 2] - l20 * l20 - l21 * l21
    _raise_any(d2 <= 0.0, InvalidPointError,
               "spd3: matrix not positive definite")
    return l00, l10, l11, l20, l21, np.sqrt(d2)


def _chol_whiten(lc, qm):
    """L^{-1} Q L^{-T} for symmetric Q, by two forward substitutions."""
    l00, l10, l11, l20, l21, l22 = lc
    r0 = 1.0 / l00
    r1 = 1.0 / l11
    r2 = 1.0 / l22
    q01 = qm[..., 0, 1]
    q02 = qm[..., 0, 2]
    q12 = qm[..., 1, 2]
    m00 = qm[..., 0, 0] * r0
    m01 = q01 * r0
    m02 = q02 * r0
    m10 = (q01 - l10 * m00) * r1
    m11 = (qm[..., 1, 1] - l10 * m01) * r1
    m12 = (q12 - l10 * m02) * r1
    m20 = (q02 - l20 * m00 - l21 * m10) * r2
    m21 = (q12 - l20 * m01 - l21 * m11) * r2
    m22 = (qm[..., 2, 2] - l20 * m02 - l21 * m12) * r2
    w00 = m00 * r0
    w01 = m10 * r0
    w02 = m20 * r0
    w11 = (m11 - l10 * w01) * r1
    w12 = (m21 - l10 * w02) * r1
    w22 = (m22 - l20 * w02 - l21 * w12) * r2
    w = np.empty(w22.shape + (3, 3))
    w[..., 0, 0] = w00
    w[..., 0, 1] = w01
    w[..., 0, 2] = w02
    w[..., 1, 0] = w01
    w[..., 1, 1] = w11
    w[..., 1, 2] = w12
    w[..., 2, 0] = w02
    w[..., 2, 1] = w12
    w[..., 2, 2] = w22
    return w


def _chol_congruence(lc, em):
    """Upper-triangle coordinates of L E L^T for symmetric E."""
    l00, l10, l11, l20, l21, l22 = lc
    e00 = em[..., 0, 0]
    e01 = em[..., 0, 1]
    e02 = em[..., 0, 2]
    e11 = em[..., 1, 1]
    e12 = em[..., 1, 2]
    e22 = em[..., 2, 2]
    f00 = l00 * e00
    f10 = l10 * e00 + l11 * e01
    f11 = l10 * e01 + l11 * e11
    f12 = l10 * e02 + l11 * e12
    f20 = l20 * e00 + l21 * e01 + l22 * e02
    f21 = l20 * e01 + l21 * e11 + l22 * e12
    f22 = l20 * e02 + l21 * e12 + l22 * e22
    return np.stack([
        f00 * l00,
        f10 * l00,
        f20 * l00,
        f10 * l10 + f11 * l11,
        f20 * l10 + f21 * l11,
        f20 * l20 + f21 * l21 + f22 * l22,
    ], axis=-1)


def _sym_inv3(m):
    """Closed-form inverse of symmetric 3x3 matrices (adjugate over det)."""
    a = m[..., 0, 0]
    b = m[..., 0, 1]
    c = m[..., 0, 2]
    d = m[..., 1, 1]
    e = m[..., 1, 2]
    f = m[..., 2, 2]
    ca = d * f - e * e
    cb = c * e - b * f
    cc = b * e - c * d
    rdet = 1.0 / (a * ca + b * cb + c * cc)
    out = np.empty_like(m)
    out[..., 0, 0] = ca * rdet
    out[..., 0, 1] = cb * rdet
    out[..., 1, 0] = out[..., 0, 1]
    out[..., 0, 2] = cc * rdet
    out[..., 2, 0] = out[..., 0, 2]
    out[..., 1, 1] = (a * f - c * c) * rdet
    out[..., 1, 2] = (b * c - a * e) * rdet
    out[..., 2, 1] = out[..., 1, 2]
    out[..., 2, 2] = (a * d - b * b) * rdet
    return out


class SPD3(Manifold):
    """Symmetric positive definite 3x3 matrices, affine-invariant metric."""

    name = "spd3"
    point_dim = 6
    dim = 6

    def _check_point(self, p):
        m = sym_to_mat(p)
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise InvalidPointError("spd3: matrix not positive definite") from None

    @staticmethod
    def _sqrt_pair(p_mat):
        w, v = jacobi_eigh(p_mat)
        _raise_any(w[..., 0] <= 0.0, InvalidPointError, "spd3: matrix not positive definite")
        sq = np.einsum("...ik,...k,...jk->...ij", v, np.sqrt(w), v)
        isq = np.einsum("...ik,...k,...jk->...ij", v, 1.0 / np.sqrt(w), v)
        return sq, isq

    def _whitened(self, p, q):
        """p^{-1/2} q p^{-1/2} plus the square-root factors of p."""
        sq, isq = self._sqrt_pair(sym_to_mat(p))
        inner = _symmetrize(isq @ sym_to_mat(q) @ isq)
        return inner, sq, isq

    # exp/log/dist run on the Cholesky factor of the base point: for any
    # g with p = g g^T the affine-invariant operations are
    # exp_p(v) = g expm(g^{-1} v g^{-T}) g^T and likewise for log, so the
    # triangular factor can replace the symmetric root at a fraction of
    # the cost (one eigen-solve instead of two)

    def exp(self, p, v):
        lc = _chol3(sym_to_mat(p))
        w, vv = jacobi_eigh(_chol_whiten(lc, sym_to_mat(v)))
        e = np.einsum("...ik,...k,...jk->...ij", vv, np.exp(w), vv)
        return _chol_congruence(lc, e)

    def log(self, p, q, resolve_cut=False):
        lc = _chol3(sym_to_mat(p))
        w, vv = jacobi_eigh(_chol_whiten(lc, sym_to_mat(q)))
        _raise_any(w[..., 0] <= 0.0, InvalidPointError, "spd3: log target not positive definite")
        lg = np.einsum("...ik,...k,...jk->...ij", vv, np.log(w), vv)
        return _chol_congruence(lc, lg)

    def dist(self, p, q):
        lc = _chol3(sym_to_mat(p))
        w, _ = jacobi_eigh(_chol_whiten(lc, sym_to_mat(q)))
        _raise_any(w[..., 0] <= 0.0, InvalidPointError, "spd3: dist target not positive definite")
        return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))

    def inner(self, p, u, v):
        pinv = _sym_inv3(sym_to_mat(p))
        um = sym_to_mat(u)
        vm = sym_to_mat(v)
        return np.einsum("...ij,...jk,...kl,...li->...", pinv, um, pinv, vm)

    def transport(self, p, q, v):
        inner, sq, isq = self._whitened(p, q)
        half = _sym_apply(np.sqrt, inner)
        e = sq @ half @ isq
        out = e @ sym_to_mat(v) @ np.swapaxes(e, -1, -2)
        return mat_to_sym(_symmetrize(out))

    def transport_frame(self, p, q, vs):
        inner, sq, isq = self._whitened(p, q)
        half = _sym_apply(np.sqrt, inner)
        e = sq @ half @ isq
        vm = sym_to_mat(vs)
        out = e[..., None, :, :] @ vm @ np.swapaxes(e, -1, -2)[..., None, :, :]
        return mat_to_sym(_symmetrize(out))

    def tangent_basis(self, p):
        sq, _ = self._sqrt_pair(sym_to_mat(p))
        basis = np.empty(np.asarray(p).shape[:-1] + (6, 6))
        inv_sqrt2 = 1.0 / np.sqrt(2.0)
        for k in range(6):
            i, j = _IU[k], _JU[k]
            e = np.zeros((3, 3))
            if i == j:
                e[i, j] = 1.0
            else:
                e[i, j] = inv_sqrt2
                e[j, i] = inv_sqrt2
            basis[..., k, :] = mat_to_sym(_symmetrize(sq @ e @ sq))
        return basis

    def tangent_coords(self, p, v):
        _, isq = self._sqrt_pair(sym_to_mat(p))
        y = _symmetrize(isq @ sym_to_mat(v) @ isq)
        c = mat_to_sym(y)
        off = _IU != _JU
        c[..., off] *= np.sqrt(2.0)
        return c

    def tangent_from_coords(self, p, c):
        sq, _ = self._sqrt_pair(sym_to_mat(p))
        y = np.asarray(c, float).copy()
        off = _IU != _JU
        y[..., off] /= np.sqrt(2.0)
        return mat_to_sym(_symmetrize(sq @ sym_to_mat(y) @ sq))

    def _jacobi(self, p, q):
        lc = _chol3(sym_to_mat(p))
        w, vv = jacobi_eigh(_chol_whiten(lc, sym_to_mat(q)))
        _raise_any(w[..., 0] <= 0.0, InvalidPointError, "spd3: target not positive definite")
        logw = np.log(w)
        d = np.sqrt(np.sum(logw ** 2, axis=-1))
        _raise_any(d < DEGENERATE_TOL, DegenerateGeodesicError, "spd3: coincident points")
        delta = logw / d[..., None]  # eigenvalues of the unit geodesic direction

        # three flat directions spanned by the diagonal block; rotate so the
        # first one is the geodesic direction itself
        c1 = delta
        k = np.argmin(np.abs(c1), axis=-1)
        e = np.zeros_like(c1)
        np.put_along_axis(e, k[..., None], 1.0, axis=-1)
        c2 = e - np.sum(e * c1, axis=-1, keepdims=True) * c1
        c2 = c2 / np.linalg.norm(c2, axis=-1, keepdims=True)
        c3 = np.cross(c1, c2)

        batch = np.asarray(p).shape[:-1]
        lams = np.zeros(batch + (6,))
        basis = np.empty(batch + (6, 6))
        cols = [vv[..., :, a] for a in range(3)]
        for idx, coeff in enumerate((c1, c2, c3)):
            frame = np.einsum("...a,...ia,...ja->...ij", coeff, vv, vv)
            basis[..., idx, :] = _chol_congruence(lc, frame)
        pairs = ((0, 1), (0, 2), (1, 2))
        inv_sqrt2 = 1.0 / np.sqrt(2.0)
        for idx, (a, b) in enumerate(pairs):
            outer = cols[a][..., :, None] * cols[b][..., None, :]
            frame = inv_sqrt2 * (outer + np.swapaxes(outer, -1, -2))
            basis[..., 3 + idx, :] = _chol_congruence(lc, frame)
            lams[..., 3 + idx] = -0.25 * (delta[..., a] - delta[..., b]) ** 2
        return lams, basis, d

    def random_point(self, rng, shape=()):
        g = rng.normal(0.0, 0.4, size=shape + (3, 3))
        s = _symmetrize(g)
        m = _sym_apply(np.exp, s)
        return mat_to_sym(m)


class Euclidean(Manifold):
    """Flat reference space R^n; every operation is linear algebra."""

    flat = True

    def __init__(self, n):
        self.n = int(n)
        self.name = f"euclidean{self.n}"
        self.point_dim = self.n
        self.dim = self.n

    def exp(self, p, v):
        return np.asarray(p, float) + np.asarray(v, float)

    def log(self, p, q, resolve_cut=False):
        return np.asarray(q, float) - np.asarray(p, float)

    def dist(self, p, q):
        return np.linalg.norm(np.asarray(q, float) - np.asarray(p, float), axis=-1)

    def transport(self, p, q, v):
        return np.broadcast_to(np.asarray(v, float),
                               np.broadcast_shapes(np.shape(p), np.shape(v))).copy()

    def tangent_basis(self, p):
        p = np.asarray(p, float)
        return np.broadcast_to(np.eye(self.n), p.shape[:-1] + (self.n, self.n)).copy()

    def tangent_coords(self, p, v):
        return np.asarray(v, float).copy()

    def tangent_from_coords(self, p, c):
        return np.asarray(c, float).copy()

    def _jacobi(self, p, q):
        v = q - p
        d = np.linalg.norm(v, axis=-1)
        _raise_any(d < DEGENERATE_TOL, DegenerateGeodesicError,
                   f"{self.name}: coincident points")
        e1 = v / d[..., None]
        # Householder completion: H maps sign(e1_0)*e_0 to e1, remaining
        # columns give the orthonormal complement deterministically
        s = np.where(e1[..., 0] < 0.0, -1.0, 1.0)[..., None]
        hv = e1.copy()
        hv[..., 0] -= s[..., 0]
        denom = np.sum(hv * hv, axis=-1, keepdims=True)
        denom = np.where(denom > 0.0, denom, 1.0)
        basis = np.empty(p.shape[:-1] + (self.n, self.n))
        basis[..., 0, :] = e1
        for k in range(1, self.n):
            ek = np.zeros(self.n)
            ek[k] = 1.0
            col = ek - hv * (2.0 * hv[..., k : k + 1] / denom)
            basis[..., k, :] = s * col
        lams = np.zeros(p.shape[:-1] + (self.n,))
        return lams, basis, d

    def random_point(self, rng, shape=()):
        return rng.normal(size=shape + (self.n,))


CIRCLE = Circle()
SPHERE = Sphere()
SPD = SPD3()


def get_manifold(tag, euclidean_dim=None):
    """Look up a manifold by its grid/config tag."""
    tag = str(tag).lower()
    if tag == "s1":
        return CIRCLE
    if tag == "s2":
        return SPHERE
    if tag in ("spd3", "pos3"):
        return SPD
    if tag.startswith("euclidean"):
        suffix = tag[len("euclidean"):]
        if suffix:
            return Euclidean(int(suffix))
        if euclidean_dim is None:
            raise InvalidPointError("euclidean tag needs a dimension, e.g. euclidean2")
        return Euclidean(euclidean_dim)
    raise InvalidPointError(f"unknown manifold tag {tag!r}")
