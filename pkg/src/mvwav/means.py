"""Weighted intrinsic means and their first-order linearization.

The mean of points x_1..x_K with weights w_k (summing to one, possibly
negative) is a stationary point of F(v) = sum_k w_k dist(v, x_k)^2,
computed by masked gradient descent with an Armijo line search, batched
over arbitrary leading axes.

Differentiating the stationarity condition sum_k w_k log_m(x_k) = 0
gives the derivative of the mean map and, by duality, the chain rule
for gradients of functions composed with it.  Both reduce to diagonal
scalings in curvature eigenframes of the geodesics m -> x_k; the scale
factors solve the scalar boundary value problems a'' + lam d^2 a = 0 on
[0, 1] with (a(0)=0, a(1)=1) and (a(1)=0, a'(1)=1) respectively.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ConjugatePointError,
    NoConvergenceError,
    SingularLError,
)
from .manifolds import _raise_any

_ARMIJO_C = 1e-4
_MAX_HALVINGS = 30
_L_COND_MAX = 1e12

# geodesics shorter than this are treated as degenerate (flat limit)
_FRAME_TOL = 1e-12


def _expand_weights(weights, count, batch):
    w = np.asarray(weights, dtype=float)
    if w.shape == (count,):
        w = np.broadcast_to(w.reshape((count,) + (1,) * len(batch)), (count,) + batch)
    elif w.shape != (count,) + batch:
        raise ValueError(
            f"weights shape {w.shape} incompatible with points {(count,) + batch}")
    total = np.sum(w, axis=0)
    if np.any(np.abs(total - 1.0) > 1e-9):
        raise ValueError("mean weights must sum to 1 at every site")
    return w


def intrinsic_mean(manifold, points, weights=None, init=None, grad_tol=1e-10,
                   max_iter=200, tol_scale=None, strict=True):
    """Weighted intrinsic mean, batched over leading axes.

    Parameters
    ----------
    points : ndarray, shape (K, ..., point_dim)
        Sample points; the first axis enumerates them.
    weights : ndarray, shape (K,) or (K, ...), optional
        Weights summing to 1 per site (negative entries allowed).
        Defaults to uniform.
    init : ndarray, optional
        Warm start, broadcastable to the batch shape. Defaults to the
        sample with the largest weight.
    grad_tol : float
        Convergence threshold on the gradient norm, scaled by
        ``1 + tol_scale``.
    tol_scale : float or ndarray, optional
        Spread scale of the samples; computed as the maximum pairwise
        distance when omitted. Pass a precomputed value in hot loops.
    strict : bool
        With ``strict=False`` a site that fails the gradient test
        returns its final iterate instead of raising; meant for
        diagnostic evaluations that must stay finite, never for
        updates.

    Returns
    -------
    ndarray, shape (..., point_dim)

    Raises
    ------
    NoConvergenceError
        If some site fails the gradient test after ``max_iter`` sweeps
        (suppressed by ``strict=False``).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim < 2:
        raise ValueError("points must have shape (K, ..., point_dim)")
    count = pts.shape[0]
    batch = pts.shape[1:-1]
    cd = manifold.point_dim
    if weights is None:
        weights = np.full((count,), 1.0 / count)
    w = _expand_weights(weights, count, batch)

    pts = pts.reshape((count, -1, cd))
    w = w.reshape((count, -1))
    nsites = pts.shape[1]

    if init is None:
        kbest = np.argmax(w, axis=0)
        v = np.take_along_axis(pts, kbest[None, :, None], axis=0)[0].copy()
    else:
        v = np.broadcast_to(np.asarray(init, dtype=float),
                            batch + (cd,)).reshape(-1, cd).copy()

    if tol_scale is None:
        spread = np.zeros(nsites)
        for a in range(count):
            for b in range(a + 1, count):
                spread = np.maximum(spread, manifold.dist(pts[a], pts[b]))
    else:
        spread = np.broadcast_to(np.asarray(tol_scale, dtype=float),
                                 batch).reshape(-1)
    tol = grad_tol * (1.0 + spread)

    if manifold.flat:
        # quadratic objective in log coordinates: a full step is exact up
        # to angle re-wrapping, so a couple of sweeps always suffice
        for _ in range(max_iter):
            logs = manifold.log(v[None], pts, resolve_cut=True)
            g = np.sum(w[..., None] * logs, axis=0)
            act = manifold.norm(v, g) > tol
            if not np.any(act):
                return v.reshape(batch + (cd,))
            v = np.where(act[..., None], manifold.exp(v, g), v)
        if strict:
            bad = int(np.count_nonzero(manifold.norm(v, g) > tol))
            raise NoConvergenceError(
                f"intrinsic mean: {bad} of {nsites} sites not converged "
                f"after {max_iter} iterations")
        return v.reshape(batch + (cd,))

    step0 = 1.0 / np.sum(np.abs(w), axis=0)
    idx = np.arange(nsites)
    frozen = []
    for _ in range(max_iter):
        if idx.size == 0:
            break
        sv = v[idx]
        sp = pts[:, idx]
        sw = w[:, idx]
        logs = manifold.log(sv[None], sp, resolve_cut=True)
        g = np.sum(sw[..., None] * logs, axis=0)
        gn = manifold.norm(sv, g)
        live = gn > tol[idx]
        if not np.all(live):
            idx = idx[live]
            if idx.size == 0:
                break
            sv = sv[live]
            sp = sp[:, live]
            sw = sw[:, live]
            g = g[live]
            gn = gn[live]
            logs = logs[:, live]
        d2 = manifold.inner(sv[None], logs, logs)
        fval = np.sum(sw * d2, axis=0)
        # resolution of the objective: signed terms may cancel, so measure
        # against the absolute-value sum, not |fval|
        fres = 64.0 * np.finfo(float).eps * np.sum(np.abs(sw) * d2, axis=0)
        t = step0[idx].copy()
        undone = np.ones(idx.size, dtype=bool)
        vnew = sv.copy()
        for _ in range(_MAX_HALVINGS):
            cand = manifold.exp(sv, t[:, None] * g)
            dc = manifold.dist(cand[None], sp)
            fc = np.sum(sw * dc * dc, axis=0)
            need = _ARMIJO_C * t * gn * gn
            # once the required decrease drops below what the objective can
            # resolve the test is vacuous; accept the trial step (the
            # fixed-point map is contractive near the optimum)
            ok = ((fc <= fval - need) | (need <= fres)) & undone
            vnew[ok] = cand[ok]
            undone &= ~ok
            if not np.any(undone):
                break
            t = np.where(undone, 0.5 * t, t)
        v[idx] = vnew
        if np.any(undone):
            # no admissible decrease left: at the numerical floor
            frozen.append(idx[undone])
            idx = idx[~undone]

    check = np.concatenate([idx] + frozen) if frozen else idx
    if check.size and strict:
        logs = manifold.log(v[check][None], pts[:, check], resolve_cut=True)
        g = np.sum(w[:, check, None] * logs, axis=0)
        bad = int(np.count_nonzero(manifold.norm(v[check], g) > tol[check]))
        if bad:
            raise NoConvergenceError(
                f"intrinsic mean: {bad} of {nsites} sites not converged "
                f"after {max_iter} iterations")
    return v.reshape(batch + (cd,))


def jacobi_factors(lams, lengths):
    """Scale factors of the mean linearization in a curvature eigenframe.

    For eigenvalue lam and geodesic length d, with x = sqrt(|lam|) d:

    * ``f1`` scales coefficients carried from one endpoint to the other
      (x/sin x, x/sinh x, or 1 by the sign of lam),
    * ``f2`` is the diagonal of the symmetric endpoint operator
      (-x cos x/sin x, -x cosh x/sinh x, or -1).

    Raises
    ------
    ConjugatePointError
        When x >= pi for a positive eigenvalue.
    """
    lams = np.asarray(lams, dtype=float)
    x = np.sqrt(np.abs(lams)) * np.asarray(lengths, dtype=float)[..., None]
    pos = (lams > 0.0) & (x > 0.0)
    neg = (lams < 0.0) & (x > 0.0)
    _raise_any(pos & (x >= np.pi), ConjugatePointError,
               "conjugate point reached: sqrt(lam) * length >= pi")
    xp = np.where(pos, x, 0.5)
    xn = np.where(neg, x, 0.5)
    f1 = np.ones_like(x)
    f2 = -np.ones_like(x)
    f1 = np.where(pos, xp / np.sin(xp), f1)
    f2 = np.where(pos, -xp * np.cos(xp) / np.sin(xp), f2)
    f1 = np.where(neg, xn / np.sinh(xn), f1)
    f2 = np.where(neg, -xn * np.cosh(xn) / np.sinh(xn), f2)
    return f1, f2


def _frames(manifold, m, x):
    """Eigenframe data for the geodesic m -> x with a flat degenerate limit.

    Returns ``(coords, f1, f2, basis_target)`` where ``coords`` holds the
    frame vectors' coordinates in ``tangent_basis(m)`` as rows
    (shape (..., dim, dim)) and ``basis_target`` the frame transported
    to x (shape (..., dim, point_dim)).
    """
    dim = manifold.dim
    d = manifold.dist(m, x)
    degen = d < _FRAME_TOL
    x_safe = x
    if np.any(degen):
        probe = manifold.exp(m, 0.5 * manifold.tangent_basis(m)[..., 0, :])
        x_safe = np.where(degen[..., None], probe, x)
    lams, basis_m, length = manifold._jacobi(m, x_safe)
    f1, f2 = jacobi_factors(lams, length)
    basis_x = manifold.transport_frame(m, x_safe, basis_m)
    coords = manifold.tangent_coords(m[..., None, :], basis_m)
    if np.any(degen):
        flat_basis = manifold.tangent_basis(m)
        eye = np.broadcast_to(np.eye(dim), coords.shape)
        coords = np.where(degen[..., None, None], eye, coords)
        f1 = np.where(degen[..., None], 1.0, f1)
        f2 = np.where(degen[..., None], -1.0, f2)
        basis_x = np.where(degen[..., None, None], flat_basis, basis_x)
    return coords, f1, f2, basis_x


def l_matrix(manifold, mean, points, weights):
    """Endpoint operator of the mean linearization, in base coordinates.

    Returns the symmetric matrix of v -> sum_k w_k l_k(v) on T_mean in
    ``tangent_basis(mean)`` coordinates, shape (..., dim, dim). On flat
    spaces this is minus the identity.
    """
    pts = np.asarray(points, dtype=float)
    count = pts.shape[0]
    batch = pts.shape[1:-1]
    w = _expand_weights(weights, count, batch)
    dim = manifold.dim
    if manifold.flat:
        return np.broadcast_to(-np.eye(dim), batch + (dim, dim)).copy()
    mat = np.zeros(batch + (dim, dim))
    for k in range(count):
        coords, _, f2, _ = _frames(manifold, mean, pts[k])
        mat += w[k][..., None, None] * np.einsum(
            "...ij,...i,...ik->...jk", coords, f2, coords)
    return mat


def _solve_l(mat, rhs):
    cond = np.linalg.cond(mat)
    _raise_any(~np.isfinite(cond) | (cond > _L_COND_MAX), SingularLError,
               f"mean linearization ill-conditioned (cond > {_L_COND_MAX:.0e})")
    return np.linalg.solve(mat, rhs[..., None])[..., 0]


def mean_derivative(manifold, points, weights, k, tangent, mean=None):
    """Directional derivative of the mean map in its k-th argument.

    Pushes the tangent vector ``tangent`` at points[k] forward through
    the mean, returning a tangent at the mean. On flat spaces this is
    ``w_k * tangent``.
    """
    pts = np.asarray(points, dtype=float)
    count = pts.shape[0]
    batch = pts.shape[1:-1]
    w = _expand_weights(weights, count, batch)
    tangent = np.asarray(tangent, dtype=float)
    if manifold.flat:
        return w[k][..., None] * tangent
    if mean is None:
        mean = intrinsic_mean(manifold, pts, weights)
    mat = np.zeros(batch + (manifold.dim, manifold.dim))
    rk_coords = None
    for j in range(count):
        coords, f1, f2, basis_x = _frames(manifold, mean, pts[j])
        mat += w[j][..., None, None] * np.einsum(
            "...ij,...i,...ik->...jk", coords, f2, coords)
        if j == k:
            alpha = manifold.inner(pts[k][..., None, :],
                                   tangent[..., None, :], basis_x)
            rk_coords = np.einsum("...i,...ij->...j", w[k][..., None] * f1 * alpha,
                                  coords)
    out = _solve_l(mat, -rk_coords)
    return manifold.tangent_from_coords(mean, out)


def grad_through_mean(manifold, points, weights, grad_at_mean, mean=None):
    """Chain rule through the mean map.

    Given the gradient of some function at the mean, returns the
    gradients with respect to each sample point, shape
    (K, ..., point_dim). On flat spaces entry k is ``w_k * grad``.
    """
    pts = np.asarray(points, dtype=float)
    count = pts.shape[0]
    batch = pts.shape[1:-1]
    w = _expand_weights(weights, count, batch)
    grad = np.asarray(grad_at_mean, dtype=float)
    if manifold.flat:
        return w[..., None] * grad[None]
    if mean is None:
        mean = intrinsic_mean(manifold, pts, weights)
    dim = manifold.dim
    frames = [_frames(manifold, mean, pts[k]) for k in range(count)]
    mat = np.zeros(batch + (dim, dim))
    for k in range(count):
        coords, _, f2, _ = frames[k]
        mat += w[k][..., None, None] * np.einsum(
            "...ij,...i,...ik->...jk", coords, f2, coords)
    z = _solve_l(mat, -manifold.tangent_coords(mean, grad))
    out = np.empty((count,) + batch + (manifold.point_dim,))
    for k in range(count):
        coords, f1, _, basis_x = frames[k]
        alpha = np.einsum("...ij,...j->...i", coords, z)
        out[k] = w[k][..., None] * np.einsum("...i,...ic->...c", f1 * alpha, basis_x)
    return out
