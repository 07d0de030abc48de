import numpy as np
import pytest

from mvwav.errors import ConjugatePointError, NoConvergenceError, SingularLError
from mvwav.manifolds import CIRCLE, SPD, SPHERE, Euclidean, mat_to_sym, wrap_angle
from mvwav.means import (
    grad_through_mean,
    intrinsic_mean,
    jacobi_factors,
    l_matrix,
    mean_derivative,
)

from conftest import random_cluster, rng_for

DD_WEIGHTS = np.array([-1.0 / 16, 9.0 / 16, 9.0 / 16, -1.0 / 16])


def stable_weights(rng, count, max_total=3.0):
    """Random weights summing to 1 with bounded total variation.

    Stencil weights in the package stay below total 1.6; huge
    sign-alternating weights slow the fixed-step mean iteration down
    past its iteration cap, so keep draws in the supported regime.
    """
    while True:
        w = rng.normal(size=count)
        w[np.argmax(np.abs(w))] = np.abs(w).max() + 1.0
        w = w / w.sum()
        if np.sum(np.abs(w)) <= max_total:
            return w


def weighted_cost(man, v, pts, w):
    d = man.dist(v[None] if v.ndim == pts.ndim - 1 else v, pts)
    return float(np.sum(w * d * d))


# ---------------------------------------------------------------------------
# the mean itself
# ---------------------------------------------------------------------------


def test_euclidean_mean_is_linear_combination():
    man = Euclidean(3)
    rng = rng_for("mean-lin")
    for _ in range(20):
        pts = rng.normal(size=(5, 4, 3))
        w = rng.normal(size=5)
        w = w - (w.sum() - 1.0) / 5.0
        m = intrinsic_mean(man, pts, w)
        expect = np.einsum("k,k...->...", w, pts)
        assert np.max(np.abs(m - expect)) < 1e-12


def test_singleton_and_coincident(manifold):
    rng = rng_for("mean-triv", manifold.name)
    p = manifold.random_point(rng)
    assert np.allclose(intrinsic_mean(manifold, p[None], np.array([1.0])), p)
    pair = np.stack([p, p])
    m = intrinsic_mean(manifold, pair, np.array([0.5, 0.5]))
    assert manifold.dist(m, p) < 1e-12


def test_two_point_mean_is_midpoint(manifold):
    rng = rng_for("mean-mid", manifold.name)
    for _ in range(10):
        base, pts = random_cluster(manifold, rng, 2, spread=0.6)
        m = intrinsic_mean(manifold, pts, np.array([0.5, 0.5]))
        mid = manifold.geodesic_point(pts[0], pts[1],
                                      0.5 * manifold.dist(pts[0], pts[1]))
        assert manifold.dist(m, mid) < 1e-8


def test_mean_stationarity_batched(manifold):
    rng = rng_for("mean-stat", manifold.name)
    for trial in range(25):
        count = int(rng.integers(2, 6))
        base, pts = random_cluster(manifold, rng, count, spread=0.3, shape=(7,))
        w = stable_weights(rng, count)
        m = intrinsic_mean(manifold, pts, w)
        g = np.sum(w[:, None, None] * manifold.log(m[None], pts, resolve_cut=True),
                   axis=0)
        diam = 0.0
        for a in range(count):
            for b in range(a + 1, count):
                diam = np.maximum(diam, manifold.dist(pts[a], pts[b]))
        assert np.all(manifold.norm(m, g) <= 1e-10 * (1.0 + diam))


def test_circle_mean_across_wrap():
    # cluster straddling the +pi / -pi seam
    ang = np.array([np.pi - 0.25, np.pi - 0.05, -np.pi + 0.1, -np.pi + 0.2])
    pts = ang[:, None]
    w = DD_WEIGHTS
    # unwrap by hand around the first sample, then wrap the combination
    y = ang[0] + wrap_angle(ang - ang[0])
    expect = wrap_angle(np.sum(w * y))
    m = intrinsic_mean(CIRCLE, pts, w)
    assert abs(CIRCLE.dist(m, np.array([expect]))) < 1e-12


def test_sphere_mean_on_great_circle_negative_weights():
    # points on a tilted great circle: arclength there is the sphere
    # distance, so the mean must sit at the weighted angle combination
    rng = rng_for("mean-circle")
    for _ in range(10):
        a = rng.normal(size=3)
        a /= np.linalg.norm(a)
        b = rng.normal(size=3)
        b -= (b @ a) * a
        b /= np.linalg.norm(b)
        c = np.cross(a, b)
        t = np.array([-0.9, -0.3, 0.3, 0.9]) + rng.uniform(-0.2, 0.2)
        pts = np.cos(t)[:, None] * a + np.sin(t)[:, None] * b + 0.0 * c
        theta = np.sum(DD_WEIGHTS * t)
        expect = np.cos(theta) * a + np.sin(theta) * b
        m = intrinsic_mean(SPHERE, pts, DD_WEIGHTS)
        assert SPHERE.dist(m, expect) < 1e-8


def test_spd_mean_on_commuting_family_negative_weights():
    # diagonal one-parameter geodesic family: closed-form weighted mean
    d = np.array([0.5, -0.3, 0.2])
    t = np.array([-0.9, -0.3, 0.3, 0.9]) + 0.17

    def point(s):
        e = np.exp(s * d)
        return mat_to_sym(np.diag(e))

    pts = np.stack([point(s) for s in t])
    theta = np.sum(DD_WEIGHTS * t)
    m = intrinsic_mean(SPD, pts, DD_WEIGHTS)
    assert SPD.dist(m, point(theta)) < 1e-8


def test_sphere_mean_grid_minimality():
    # independent minimality check: no nearby candidate on a dense
    # tangent grid beats the returned mean
    rng = rng_for("mean-grid")
    base, pts = random_cluster(SPHERE, rng, 4, spread=0.4)
    m = intrinsic_mean(SPHERE, pts, DD_WEIGHTS)
    basis = SPHERE.tangent_basis(m)
    g = np.linspace(-0.04, 0.04, 81)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    cand = SPHERE.exp(m, xx[..., None] * basis[0] + yy[..., None] * basis[1])
    vals = np.zeros(xx.shape)
    for k in range(4):
        vals += DD_WEIGHTS[k] * SPHERE.dist(cand, pts[k]) ** 2
    f0 = weighted_cost(SPHERE, m, pts, DD_WEIGHTS)
    assert vals.min() >= f0 - 1e-9
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    assert abs(g[i]) <= g[1] - g[0] + 1e-12
    assert abs(g[j]) <= g[1] - g[0] + 1e-12


def test_mean_warm_start_and_tol_scale(manifold):
    rng = rng_for("mean-warm", manifold.name)
    base, pts = random_cluster(manifold, rng, 4, spread=0.3, shape=(5,))
    m = intrinsic_mean(manifold, pts, DD_WEIGHTS)
    again = intrinsic_mean(manifold, pts, DD_WEIGHTS, init=m, tol_scale=1.0)
    assert np.all(manifold.dist(m, again) < 1e-9)


def test_mean_rejects_bad_weights():
    rng = rng_for("mean-bad")
    pts = rng.normal(size=(3, 2))
    with pytest.raises(ValueError):
        intrinsic_mean(Euclidean(2), pts, np.array([0.5, 0.5, 0.5]))


def test_mean_no_convergence_raises():
    rng = rng_for("mean-noconv")
    base, pts = random_cluster(SPHERE, rng, 4, spread=0.5)
    with pytest.raises(NoConvergenceError):
        intrinsic_mean(SPHERE, pts, DD_WEIGHTS, max_iter=1)


# ---------------------------------------------------------------------------
# linearization factors
# ---------------------------------------------------------------------------


def test_jacobi_factors_frozen_values():
    f1, f2 = jacobi_factors(np.array([1.0, -1.0, 0.0]), np.array(np.pi / 2))
    assert abs(f1[0] - np.pi / 2) < 1e-15
    assert abs(f2[0] - 0.0) < 1e-15
    x = np.pi / 2
    assert abs(f1[1] - x / np.sinh(x)) < 1e-15
    assert abs(f2[1] + x * np.cosh(x) / np.sinh(x)) < 1e-15
    assert f1[2] == 1.0 and f2[2] == -1.0
    f1b, f2b = jacobi_factors(np.array([-1.0]), np.array(1.0))
    assert abs(f1b[0] - 0.8509181282393216) < 1e-15
    assert abs(f2b[0] + 1.3130352854993312) < 1e-15


def test_jacobi_factors_conjugate_point():
    with pytest.raises(ConjugatePointError):
        jacobi_factors(np.array([1.0]), np.array(np.pi))
    # safely past on the negative side
    jacobi_factors(np.array([-1.0]), np.array(10.0))


def test_l_matrix_flat_is_minus_identity():
    man = Euclidean(3)
    rng = rng_for("lflat")
    pts = rng.normal(size=(4, 3))
    w = DD_WEIGHTS
    m = intrinsic_mean(man, pts, w)
    mat = l_matrix(man, m, pts, w)
    assert np.max(np.abs(mat + np.eye(3))) < 1e-14


def test_l_matrix_symmetric(manifold):
    rng = rng_for("lsym", manifold.name)
    for _ in range(10):
        base, pts = random_cluster(manifold, rng, 4, spread=0.4)
        m = intrinsic_mean(manifold, pts, DD_WEIGHTS)
        mat = l_matrix(manifold, m, pts, DD_WEIGHTS)
        assert np.max(np.abs(mat - mat.T)) < 1e-10


def test_singular_l_raises():
    # craft weights so the curvature parts cancel along the normal mode
    m = np.array([1.0, 0.0, 0.0])
    e = np.array([0.0, 1.0, 0.0])
    p = SPHERE.exp(m, 0.01 * e)
    q = SPHERE.exp(m, 2.0 * e)
    _, f2s = jacobi_factors(np.array([1.0]), np.array(0.01))
    _, f2l = jacobi_factors(np.array([1.0]), np.array(2.0))
    w1 = float(f2l[0] / (f2l[0] - f2s[0]))
    w = np.array([w1, 1.0 - w1])
    with pytest.raises(SingularLError):
        grad_through_mean(SPHERE, np.stack([p, q]), w, 0.1 * e, mean=m)


# ---------------------------------------------------------------------------
# derivatives through the mean
# ---------------------------------------------------------------------------


def test_grad_through_mean_flat_shortcut():
    man = Euclidean(2)
    rng = rng_for("gtm-flat")
    pts = rng.normal(size=(4, 6, 2))
    v = rng.normal(size=(6, 2))
    out = grad_through_mean(man, pts, DD_WEIGHTS, v)
    for k in range(4):
        assert np.max(np.abs(out[k] - DD_WEIGHTS[k] * v)) < 1e-14


def test_grad_through_mean_coincident_points(manifold):
    rng = rng_for("gtm-coin", manifold.name)
    p = manifold.random_point(rng)
    v = manifold.random_tangent(rng, p)
    pts = np.stack([p, p])
    out = grad_through_mean(manifold, pts, np.array([0.5, 0.5]), v, mean=p)
    for k in range(2):
        assert np.max(np.abs(out[k] - 0.5 * v)) < 1e-10


def test_mean_derivative_matches_finite_differences(manifold):
    rng = rng_for("md-fd", manifold.name)
    eps = 1e-5
    for trial in range(8):
        count = int(rng.integers(2, 5))
        base, pts = random_cluster(manifold, rng, count, spread=0.25)
        w = stable_weights(rng, count)
        k = int(rng.integers(count))
        tang = manifold.random_tangent(rng, pts[k], scale=1.0)
        m0 = intrinsic_mean(manifold, pts, w)
        ana = mean_derivative(manifold, pts, w, k, tang, mean=m0)

        def shifted(sign):
            p2 = pts.copy()
            p2[k] = manifold.exp(pts[k], sign * eps * tang)
            return intrinsic_mean(manifold, p2, w, init=m0, grad_tol=1e-13)

        fd = (manifold.log(m0, shifted(1.0)) - manifold.log(m0, shifted(-1.0))) / (2 * eps)
        scale = 1.0 + manifold.norm(m0, ana)
        assert np.max(np.abs(ana - fd)) / scale < 1e-3


def test_gradient_chain_matches_finite_differences(manifold):
    # scalar objective dist(mean(x), y)^2 differentiated in each sample
    rng = rng_for("gtm-fd", manifold.name)
    eps = 1e-5
    for trial in range(25):
        count = int(rng.integers(2, 5))
        base, pts = random_cluster(manifold, rng, count, spread=0.25)
        y = manifold.exp(base, manifold.random_tangent(rng, base, scale=0.2))
        w = stable_weights(rng, count)
        m0 = intrinsic_mean(manifold, pts, w)
        v = -2.0 * manifold.log(m0, y, resolve_cut=True)
        grads = grad_through_mean(manifold, pts, w, v, mean=m0)
        k = int(rng.integers(count))
        tang = manifold.random_tangent(rng, pts[k], scale=1.0)

        def value(sign):
            p2 = pts.copy()
            p2[k] = manifold.exp(pts[k], sign * eps * tang)
            m = intrinsic_mean(manifold, p2, w, init=m0, grad_tol=1e-13)
            return manifold.dist(m, y) ** 2

        fd = (value(1.0) - value(-1.0)) / (2 * eps)
        ana = manifold.inner(pts[k], grads[k], tang)
        assert abs(ana - fd) / (1.0 + abs(fd)) < 1e-4


def test_derivative_adjoint_identity(manifold):
    # <grad_through_mean(v)[k], w> at x_k equals <v, mean_derivative(w)> at m
    rng = rng_for("adj-id", manifold.name)
    for _ in range(10):
        base, pts = random_cluster(manifold, rng, 4, spread=0.3)
        m = intrinsic_mean(manifold, pts, DD_WEIGHTS)
        v = manifold.random_tangent(rng, m)
        k = int(rng.integers(4))
        w = manifold.random_tangent(rng, pts[k])
        lhs = manifold.inner(pts[k],
                             grad_through_mean(manifold, pts, DD_WEIGHTS, v, mean=m)[k],
                             w)
        rhs = manifold.inner(m, v,
                             mean_derivative(manifold, pts, DD_WEIGHTS, k, w, mean=m))
        assert abs(lhs - rhs) < 1e-9 * (1.0 + abs(lhs))
