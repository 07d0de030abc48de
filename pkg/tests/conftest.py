import zlib

import numpy as np
import pytest

from mvwav.manifolds import CIRCLE, SPD, SPHERE, Euclidean

ALL_MANIFOLDS = [CIRCLE, SPHERE, SPD, Euclidean(2)]


@pytest.fixture(params=ALL_MANIFOLDS, ids=lambda m: m.name)
def manifold(request):
    return request.param


def rng_for(*key):
    ints = [k if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode())
            for k in key]
    return np.random.default_rng(np.random.SeedSequence(ints))


def random_cluster(man, rng, count, spread=0.3, shape=()):
    """Points in a geodesic ball: a base point plus bounded tangent steps.

    Keeps samples well inside injectivity radii so log/means are safe.
    """
    base = man.random_point(rng, shape)
    pts = np.empty((count,) + base.shape)
    for k in range(count):
        v = man.random_tangent(rng, base, scale=spread / max(1.0, np.sqrt(man.dim)))
        nrm = man.norm(base, v)
        cap = np.minimum(np.asarray(nrm), spread)
        v = v * np.where(nrm > 0, cap / np.where(nrm > 0, nrm, 1.0), 0.0)[..., None]
        pts[k] = man.exp(base, v)
    return base, pts


def directional_fd(f, eps=1e-6):
    """Central difference of a scalar/array function of one real parameter."""
    return (f(eps) - f(-eps)) / (2.0 * eps)
