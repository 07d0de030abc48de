import numpy as np
import pytest

from mvwav.errors import (
    CutLocusError,
    DegenerateGeodesicError,
    InvalidPointError,
)
from mvwav.manifolds import (
    CIRCLE,
    SPD,
    SPHERE,
    Euclidean,
    get_manifold,
    jacobi_eigh,
    mat_to_sym,
    sym_to_mat,
    wrap_angle,
)

from conftest import ALL_MANIFOLDS, random_cluster, rng_for


# ---------------------------------------------------------------------------
# angle wrapping and direct kernel values
# ---------------------------------------------------------------------------

def test_wrap_angle_boundary_maps_to_plus_pi():
    assert wrap_angle(np.pi) == np.pi
    assert wrap_angle(-np.pi) == np.pi
    assert wrap_angle(3.0 * np.pi) == np.pi
    assert abs(wrap_angle(np.pi + 0.25) - (-np.pi + 0.25)) < 1e-15


def test_circle_exp_log_values():
    p = np.array([np.pi / 2])
    assert np.allclose(CIRCLE.exp(p, np.array([np.pi])), [-np.pi / 2])
    # shortest path from -3pi/4 to +3pi/4 runs through pi
    v = CIRCLE.log(np.array([-3 * np.pi / 4]), np.array([3 * np.pi / 4]))
    assert np.allclose(v, [-np.pi / 2])
    assert CIRCLE.dist(np.array([-3 * np.pi / 4]), np.array([3 * np.pi / 4])) == pytest.approx(np.pi / 2)


def test_circle_cut_locus_and_resolution():
    p = np.array([0.25])
    q = CIRCLE.exp(p, np.array([np.pi]))
    with pytest.raises(CutLocusError):
        CIRCLE.log(p, q)
    v = CIRCLE.log(p, q, resolve_cut=True)
    assert v[0] == np.pi  # deterministic tie toward +pi
    assert np.allclose(CIRCLE.exp(p, v), q)


def test_sphere_quarter_turn():
    ex = np.array([1.0, 0.0, 0.0])
    ey = np.array([0.0, 1.0, 0.0])
    assert SPHERE.dist(ex, ey) == pytest.approx(np.pi / 2)
    v = SPHERE.log(ex, ey)
    assert np.allclose(v, [0.0, np.pi / 2, 0.0])
    assert np.allclose(SPHERE.exp(ex, v), ey, atol=1e-15)


def test_sphere_antipodal_raises_even_with_resolution_flag():
    p = np.array([0.0, 0.0, 1.0])
    with pytest.raises(CutLocusError):
        SPHERE.log(p, -p)
    with pytest.raises(CutLocusError):
        SPHERE.log(p, -p, resolve_cut=True)


def test_spd_identity_to_scaled_identity():
    eye = mat_to_sym(np.eye(3))
    target = mat_to_sym(np.e * np.eye(3))
    assert SPD.dist(eye, target) == pytest.approx(np.sqrt(3.0))
    v = SPD.log(eye, target)
    assert np.allclose(sym_to_mat(v), np.eye(3))
    mid = SPD.geodesic_point(eye, target, SPD.dist(eye, target) / 2.0)
    assert np.allclose(sym_to_mat(mid), np.sqrt(np.e) * np.eye(3), atol=1e-12)


def test_check_point_rejects_invalid_inputs():
    with pytest.raises(InvalidPointError):
        CIRCLE.check_point(np.array([3.5]))
    with pytest.raises(InvalidPointError):
        SPHERE.check_point(np.array([1.0, 1.0, 0.0]))
    with pytest.raises(InvalidPointError):
        SPD.check_point(mat_to_sym(np.diag([1.0, -0.5, 2.0])))
    with pytest.raises(InvalidPointError):
        CIRCLE.check_point(np.array([np.nan]))
    # valid points pass through unchanged
    SPD.check_point(mat_to_sym(np.diag([0.2, 1.0, 5.0])))


def test_get_manifold_tags():
    assert get_manifold("s1") is CIRCLE
    assert get_manifold("S2") is SPHERE
    assert get_manifold("spd3") is SPD
    assert get_manifold("euclidean3").n == 3
    assert get_manifold("euclidean", euclidean_dim=2).n == 2
    with pytest.raises(InvalidPointError):
        get_manifold("torus")


# ---------------------------------------------------------------------------
# metric axioms and round trips, batched over random clusters
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("man", ALL_MANIFOLDS, ids=lambda m: m.name)
def test_exp_log_round_trip(man):
    rng = rng_for(101, man.name)
    base, pts = random_cluster(man, rng, 2, spread=0.8, shape=(1000,))
    p, q = pts[0], pts[1]
    v = man.log(p, q, resolve_cut=True)
    back = man.exp(p, v)
    d = man.dist(back, q)
    assert np.all(d <= 1e-10 * (1.0 + man.dist(p, q)))
    # log of exp recovers the tangent
    w = man.random_tangent(rng, p, scale=0.3)
    again = man.log(p, man.exp(p, w), resolve_cut=True)
    assert np.max(np.abs(again - w)) < 1e-8


@pytest.mark.parametrize("man", ALL_MANIFOLDS, ids=lambda m: m.name)
def test_dist_axioms(man):
    rng = rng_for(102, man.name)
    base, pts = random_cluster(man, rng, 3, spread=0.7, shape=(300,))
    a, b, c = pts
    dab = man.dist(a, b)
    assert np.allclose(dab, man.dist(b, a), atol=1e-12)
    assert np.all(man.dist(a, a) < 1e-12)
    assert np.all(dab <= man.dist(a, c) + man.dist(c, b) + 1e-10)
    # dist agrees with the norm of the log
    assert np.allclose(dab, man.norm(a, man.log(a, b, resolve_cut=True)), atol=1e-10)


@pytest.mark.parametrize("man", ALL_MANIFOLDS, ids=lambda m: m.name)
def test_transport_is_isometric_and_maps_geodesic_direction(man):
    rng = rng_for(103, man.name)
    base, pts = random_cluster(man, rng, 2, spread=0.8, shape=(200,))
    p, q = pts
    u = man.random_tangent(rng, p, scale=0.5)
    w = man.random_tangent(rng, p, scale=0.5)
    tu = man.transport(p, q, u)
    tw = man.transport(p, q, w)
    assert np.allclose(man.inner(q, tu, tw), man.inner(p, u, w), atol=1e-9)
    # the geodesic tangent transports onto the reversed log at the far end
    fwd = man.transport(p, q, man.log(p, q, resolve_cut=True))
    assert np.max(np.abs(fwd + man.log(q, p, resolve_cut=True))) < 1e-9


@pytest.mark.parametrize("man", ALL_MANIFOLDS, ids=lambda m: m.name)
def test_geodesic_point_endpoints_and_additivity(man):
    rng = rng_for(104, man.name)
    base, pts = random_cluster(man, rng, 2, spread=0.6, shape=(50,))
    p, q = pts
    d = man.dist(p, q)
    assert np.max(man.dist(man.geodesic_point(p, q, np.zeros_like(d)), p)) < 1e-12
    assert np.max(man.dist(man.geodesic_point(p, q, d), q)) < 1e-9
    mid = man.geodesic_point(p, q, 0.5 * d)
    assert np.allclose(man.dist(p, mid), 0.5 * d, atol=1e-9)
    assert np.allclose(man.dist(mid, q), 0.5 * d, atol=1e-9)


@pytest.mark.parametrize("man", ALL_MANIFOLDS, ids=lambda m: m.name)
def test_tangent_basis_is_orthonormal(man):
    rng = rng_for(105, man.name)
    p = man.random_point(rng, (40,))
    basis = man.tangent_basis(p)
    gram = np.empty((40, man.dim, man.dim))
    for i in range(man.dim):
        for j in range(man.dim):
            gram[:, i, j] = man.inner(p, basis[:, i, :], basis[:, j, :])
    assert np.max(np.abs(gram - np.eye(man.dim))) < 1e-10


# ---------------------------------------------------------------------------
# sphere transport against an independent Rodrigues-rotation oracle
# ---------------------------------------------------------------------------

def _rodrigues_rotation(axis, angle):
    k = axis / np.linalg.norm(axis)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def test_sphere_transport_matches_rotation_oracle():
    rng = rng_for(106)
    for _ in range(50):
        p = SPHERE.random_point(rng)
        q = SPHERE.random_point(rng)
        if SPHERE.dist(p, q) > np.pi - 0.2:
            continue
        v = SPHERE.random_tangent(rng, p)
        axis = np.cross(p, q)
        if np.linalg.norm(axis) < 1e-12:
            continue
        rot = _rodrigues_rotation(axis, SPHERE.dist(p, q))
        assert np.allclose(SPHERE.transport(p, q, v), rot @ v, atol=1e-10)


# ---------------------------------------------------------------------------
# Jacobi frames: algebraic structure plus an ODE oracle
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("man", ALL_MANIFOLDS, ids=lambda m: m.name)
def test_jacobi_frame_structure(man):
    rng = rng_for(107, man.name)
    for _ in range(20):
        base, pts = random_cluster(man, rng, 2, spread=0.7)
        p, q = pts
        if man.dist(p, q) < 1e-3:
            continue
        fr = man.jacobi_frame(p, q)
        assert fr.lams.shape == (man.dim,)
        assert fr.basis.shape == (man.dim, man.point_dim)
        gram = np.array([[man.inner(p, fr.basis[i], fr.basis[j])
                          for j in range(man.dim)] for i in range(man.dim)])
        assert np.max(np.abs(gram - np.eye(man.dim))) < 1e-9
        # first vector is the unit geodesic direction with eigenvalue zero
        direction = man.log(p, q, resolve_cut=True)
        direction = direction / man.norm(p, direction)
        assert abs(abs(man.inner(p, fr.basis[0], direction)) - 1.0) < 1e-9
        assert abs(fr.lams[0]) < 1e-12
        assert fr.length == pytest.approx(man.dist(p, q))
    with pytest.raises(DegenerateGeodesicError):
        p = man.random_point(rng_for(1))
        man.jacobi_frame(p, p)


def test_jacobi_eigenvalue_signs():
    rng = rng_for(108)
    _, pts = random_cluster(SPHERE, rng, 2, spread=0.9)
    fr = SPHERE.jacobi_frame(pts[0], pts[1])
    assert sorted(np.round(fr.lams, 12)) == [0.0, 1.0]
    _, pts = random_cluster(SPD, rng, 2, spread=0.9)
    fr = SPD.jacobi_frame(pts[0], pts[1])
    assert np.all(fr.lams <= 1e-15)
    assert np.sum(np.abs(fr.lams) < 1e-15) >= 3
    _, pts = random_cluster(CIRCLE, rng, 2, spread=0.9)
    fr = CIRCLE.jacobi_frame(pts[0], pts[1])
    assert fr.lams.tolist() == [0.0]


def _jacobi_closed_form(lam, d, t):
    """Scale factor a(t) solving a'' + d^2 lam a = 0, a(0)=0, a'(0)=1."""
    if lam > 1e-14:
        w = np.sqrt(lam) * d
        return np.sin(w * t) / w
    if lam < -1e-14:
        w = np.sqrt(-lam) * d
        return np.sinh(w * t) / w
    return t


@pytest.mark.parametrize("man", [SPHERE, SPD], ids=lambda m: m.name)
def test_jacobi_frame_against_geodesic_variation_oracle(man):
    # Independent oracle: differentiate the geodesic family
    # t -> exp_p(t (u + eps w)) in eps; the result is the Jacobi field with
    # J(0) = 0 and initial derivative w, whose closed form along the frame
    # is a(t) * (transported frame vector).
    rng = rng_for(109, man.dim)
    eps = 1e-6
    checked = 0
    for _ in range(12):
        _, pts = random_cluster(man, rng, 2, spread=0.9)
        p, q = pts
        u = man.log(p, q)
        fr = man.jacobi_frame(p, q)
        d = float(fr.length)
        for i in range(man.dim):
            w = fr.basis[i]
            for t in (0.5, 1.0):
                gamma = man.exp(p, t * u)
                plus = man.exp(p, t * (u + eps * w))
                minus = man.exp(p, t * (u - eps * w))
                jt = (man.log(gamma, plus) - man.log(gamma, minus)) / (2.0 * eps)
                expected = _jacobi_closed_form(float(fr.lams[i]), d, t) * man.transport(
                    p, gamma, w)
                scale = max(1.0, float(man.norm(gamma, expected)))
                err = float(man.norm(gamma, jt - expected)) / scale
                assert err < 1e-4, (man.name, i, t, err)
                checked += 1
    assert checked >= 4 * man.dim


# ---------------------------------------------------------------------------
# deterministic symmetric 3x3 eigensolver
# ---------------------------------------------------------------------------

def test_jacobi_eigh_reconstructs_and_orders():
    rng = rng_for(110)
    g = rng.normal(size=(500, 3, 3))
    mats = 0.5 * (g + np.swapaxes(g, -1, -2))
    w, v = jacobi_eigh(mats)
    recon = np.einsum("...ik,...k,...jk->...ij", v, w, v)
    assert np.max(np.abs(recon - mats)) < 1e-12
    assert np.all(np.diff(w, axis=-1) >= -1e-13)
    orth = np.einsum("...ki,...kj->...ij", v, v)
    assert np.max(np.abs(orth - np.eye(3))) < 1e-12


def test_jacobi_eigh_is_bitwise_deterministic():
    rng = rng_for(111)
    g = rng.normal(size=(64, 3, 3))
    mats = 0.5 * (g + np.swapaxes(g, -1, -2))
    w1, v1 = jacobi_eigh(mats)
    w2, v2 = jacobi_eigh(mats.copy())
    assert w1.tobytes() == w2.tobytes()
    assert v1.tobytes() == v2.tobytes()


def test_spd_inner_matches_trace_formula():
    rng = rng_for(112)
    _, pts = random_cluster(SPD, rng, 1, spread=0.5)
    p = pts[0]
    u = SPD.random_tangent(rng, p)
    v = SPD.random_tangent(rng, p)
    pinv = np.linalg.inv(sym_to_mat(p))
    expected = np.trace(pinv @ sym_to_mat(u) @ pinv @ sym_to_mat(v))
    assert SPD.inner(p, u, v) == pytest.approx(expected, rel=1e-10)


def test_spd_operations_are_congruence_equivariant():
    rng = rng_for(113)
    _, pts = random_cluster(SPD, rng, 2, spread=0.8)
    p, q = pts
    g = rng.normal(size=(3, 3))
    g += 4.0 * np.eye(3)

    def push(x):
        return mat_to_sym(g @ sym_to_mat(x) @ g.T)

    assert SPD.dist(push(p), push(q)) == pytest.approx(SPD.dist(p, q), rel=1e-9)
    moved = SPD.exp(push(p), push(SPD.log(p, q)))
    assert np.allclose(moved, push(q), atol=1e-8)
