"""Interpolatory multiscale transforms for manifold-valued grids.

A signal (or image) of values on a manifold is split into a coarse
subsampled copy plus per-level detail coefficients.  Grid sites whose
index is divisible by 2^(R-r) form the level-r grid; at each level the
sites that drop out of the next coarser grid ("odd" sites) are
predicted by a weighted intrinsic mean of nearby coarser sites, and the
detail coefficient is the scaled logarithm from the prediction to the
actual value.  Because the even sites are copied verbatim, the
transform is interpolatory and reconstruction is exact.

Prediction stencils come from a subdivision mask (midpoint or the
four-point cubic), extended at the boundary by wrapping, whole-sample
reflection, or one-sided polynomial fits.  All stencils are precompiled
into flat gather tables, so transforming a grid is a handful of batched
mean/log/exp calls per level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .means import intrinsic_mean

BOUNDARIES = ("periodic", "reflect", "polyfit")


@dataclass(frozen=True)
class Mask:
    """Interpolatory subdivision mask.

    ``offsets`` are odd offsets of the coarse neighbors in half-step
    units around the predicted site; ``order`` is the polynomial
    reproduction order.
    """

    name: str
    offsets: tuple
    weights: tuple
    order: int


FIRST_ORDER = Mask("first", (-1, 1), (0.5, 0.5), 1)
DD3 = Mask("dd3", (-3, -1, 1, 3), (-1.0 / 16, 9.0 / 16, 9.0 / 16, -1.0 / 16), 3)

_MASKS = {m.name: m for m in (FIRST_ORDER, DD3)}


def get_mask(name):
    if isinstance(name, Mask):
        return name
    try:
        return _MASKS[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown mask {name!r}; choose from {sorted(_MASKS)}") from None


def lagrange_weights(nodes, x):
    """Weights of polynomial interpolation through ``nodes`` evaluated at x."""
    nodes = np.asarray(nodes, dtype=float)
    w = np.ones(nodes.size)
    for i in range(nodes.size):
        for j in range(nodes.size):
            if i != j:
                w[i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
    return w


def _merge_duplicates(nodes, weights):
    """Row-wise: collapse repeated node indices by summing their weights.

    Duplicate slots keep their (valid) index with weight zero, so the
    arrays stay rectangular.
    """
    order = np.argsort(nodes, axis=1, kind="stable")
    sn = np.take_along_axis(nodes, order, axis=1)
    sw = np.take_along_axis(weights, order, axis=1)
    for k in range(1, sn.shape[1]):
        dup = sn[:, k] == sn[:, k - 1]
        sw[:, k] += np.where(dup, sw[:, k - 1], 0.0)
        sw[:, k - 1] = np.where(dup, 0.0, sw[:, k - 1])
    return sn, sw


def _axis_stencil(n_coarse, n_odd, mask, boundary):
    """Per-axis prediction stencils in coarse-grid index units.

    Returns (nodes, weights) of shape (n_odd, K): odd site j sits at
    coarse coordinate j + 1/2.
    """
    j = np.arange(n_odd)
    shifts = np.array([(o + 1) // 2 for o in mask.offsets])
    nodes = j[:, None] + shifts[None, :]
    weights = np.broadcast_to(np.asarray(mask.weights, dtype=float),
                              nodes.shape).copy()
    if boundary == "periodic":
        return _merge_duplicates(np.mod(nodes, n_coarse), weights)
    if boundary == "reflect":
        if n_coarse < 2:
            raise ValueError("reflect boundary needs at least 2 coarse sites")
        period = 2 * n_coarse - 2
        m = np.mod(nodes, period)
        m = np.where(m >= n_coarse, period - m, m)
        return _merge_duplicates(m, weights)
    if boundary == "polyfit":
        order = mask.order
        if n_coarse < order + 1:
            raise ValueError(
                f"polyfit boundary needs at least {order + 1} coarse sites, "
                f"have {n_coarse}")
        for ri in np.flatnonzero(nodes[:, 0] < 0):
            nodes[ri] = np.arange(order + 1)
            weights[ri] = lagrange_weights(nodes[ri], j[ri] + 0.5)
        for ri in np.flatnonzero(nodes[:, -1] > n_coarse - 1):
            nodes[ri] = n_coarse - 1 - order + np.arange(order + 1)
            weights[ri] = lagrange_weights(nodes[ri], j[ri] + 0.5)
        return nodes, weights
    raise ValueError(f"unknown boundary {boundary!r}; choose from {BOUNDARIES}")


@dataclass
class AtomStencil:
    """One parity class of predicted sites at one level.

    ``targets`` and ``nodes`` are flat indices into the full spatial
    grid; ``slots`` are flat indices into the dense level-r coefficient
    array.  Prediction of targets[i] is the intrinsic mean of
    values[nodes[i]] with weights[i].
    """

    level: int
    targets: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    slots: np.ndarray


@dataclass
class TransformPlan:
    """Precompiled gather tables for a transform of a fixed grid shape."""

    shape: tuple
    levels: int
    mask: Mask
    boundary: str
    stencils: list = field(default_factory=list)   # [level-1] -> [AtomStencil]
    level_shapes: list = field(default_factory=list)
    base_shape: tuple = ()

    @property
    def ndim_spatial(self):
        return len(self.shape)


def default_boundary(ndim_spatial):
    return "polyfit" if ndim_spatial == 1 else "reflect"


def make_plan(shape, levels, mask=DD3, boundary=None):
    """Build the stencil tables for a grid of the given spatial shape."""
    shape = tuple(int(n) for n in shape)
    if len(shape) not in (1, 2):
        raise ValueError("only 1-d signals and 2-d images are supported")
    levels = int(levels)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    mask = get_mask(mask)
    if boundary is None:
        boundary = default_boundary(len(shape))
    if boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary {boundary!r}; choose from {BOUNDARIES}")
    if boundary == "periodic":
        for n in shape:
            if n % (1 << levels):
                raise ValueError(
                    f"periodic boundary needs lengths divisible by 2^levels, "
                    f"got {n} with levels={levels}")

    plan = TransformPlan(shape, levels, mask, boundary)
    for r in range(1, levels + 1):
        h = 1 << (levels - r)
        level_shape = tuple((n + h - 1) // h for n in shape)
        plan.level_shapes.append(level_shape)
        axes = []
        for n in shape:
            coarse = np.arange(0, n, 2 * h)
            odd = np.arange(h, n, 2 * h)
            cn, cw = _axis_stencil(coarse.size, odd.size, mask, boundary)
            axes.append((coarse, odd, coarse[0] + 2 * h * cn, cw))

        group = []
        if len(shape) == 1:
            coarse, odd, nodes, weights = axes[0]
            group.append(AtomStencil(r, odd, nodes, weights, odd // h))
        else:
            n1 = shape[1]
            l1 = level_shape[1]
            (c0, o0, nf0, w0), (c1, o1, nf1, w1) = axes

            def flat(i0, i1):
                return i0 * n1 + i1

            def slot(i0, i1):
                return (i0 // h) * l1 + (i1 // h)

            if o0.size and c1.size:
                targets = flat(o0[:, None], c1[None, :]).ravel()
                nodes = flat(nf0[:, None, :], c1[None, :, None])
                weights = np.broadcast_to(w0[:, None, :], nodes.shape)
                group.append(AtomStencil(
                    r, targets, nodes.reshape(targets.size, -1),
                    weights.reshape(targets.size, -1).copy(),
                    slot(o0[:, None], c1[None, :]).ravel()))
            if c0.size and o1.size:
                targets = flat(c0[:, None], o1[None, :]).ravel()
                nodes = flat(c0[:, None, None], nf1[None, :, :])
                weights = np.broadcast_to(w1[None, :, :], nodes.shape)
                group.append(AtomStencil(
                    r, targets, nodes.reshape(targets.size, -1),
                    weights.reshape(targets.size, -1).copy(),
                    slot(c0[:, None], o1[None, :]).ravel()))
            if o0.size and o1.size:
                targets = flat(o0[:, None], o1[None, :]).ravel()
                nodes = flat(nf0[:, None, :, None], nf1[None, :, None, :])
                weights = w0[:, None, :, None] * w1[None, :, None, :]
                group.append(AtomStencil(
                    r, targets, nodes.reshape(targets.size, -1),
                    weights.reshape(targets.size, -1),
                    slot(o0[:, None], o1[None, :]).ravel()))
        plan.stencils.append(group)

    step = 1 << levels
    plan.base_shape = tuple((n + step - 1) // step for n in shape)
    return plan


@dataclass
class Pyramid:
    """Multiscale decomposition: coarse base plus per-level details.

    ``details[r-1]`` is a dense array shaped like the level-r grid
    (plus the coordinate axis); entries at sites already present on the
    level-(r-1) grid are zero.
    """

    manifold: str
    shape: tuple
    levels: int
    mask: str
    boundary: str
    base: np.ndarray
    details: list

    def detail_norms(self, manifold=None):
        """Euclidean norms of the detail coefficients, one array per level."""
        return [np.linalg.norm(d, axis=-1) for d in self.details]


def _predict(manifold, flat_values, stencil, tol_scale=None, init=None):
    pts = flat_values[stencil.nodes]
    return intrinsic_mean(manifold, np.swapaxes(pts, 0, 1),
                          np.swapaxes(stencil.weights, 0, 1),
                          init=init, tol_scale=tol_scale)


def forward_transform(manifold, values, levels=None, mask=DD3, boundary=None,
                      plan=None):
    """Decompose a grid of manifold values into a pyramid.

    Parameters
    ----------
    values : ndarray, spatial shape + (point_dim,)
    levels : int
        Number of detail levels (ignored when ``plan`` is given).
    plan : TransformPlan, optional
        Precompiled stencils; built on the fly when omitted.
    """
    values = manifold.check_point(np.asarray(values, dtype=float))
    spatial = values.shape[:-1]
    if plan is None:
        if levels is None:
            raise ValueError("either levels or plan must be given")
        plan = make_plan(spatial, levels, mask, boundary)
    elif plan.shape != spatial:
        raise ValueError(f"plan shape {plan.shape} != data shape {spatial}")
    cd = manifold.point_dim
    flat = values.reshape(-1, cd)
    s = plan.ndim_spatial

    details = [np.zeros(ls + (cd,)) for ls in plan.level_shapes]
    for r in range(1, plan.levels + 1):
        scale = 2.0 ** (-0.5 * s * r)
        for st in plan.stencils[r - 1]:
            if st.targets.size == 0:
                continue
            pred = _predict(manifold, flat, st)
            diff = manifold.log(pred, flat[st.targets], resolve_cut=True)
            details[r - 1].reshape(-1, cd)[st.slots] = scale * diff

    step = 1 << plan.levels
    sl = tuple(slice(0, None, step) for _ in spatial)
    base = values[sl].copy()
    return Pyramid(manifold.name, spatial, plan.levels, plan.mask.name,
                   plan.boundary, base, details)


def inverse_transform(manifold, pyramid, plan=None):
    """Reconstruct the grid of values from a pyramid."""
    if plan is None:
        plan = make_plan(pyramid.shape, pyramid.levels,
                         get_mask(pyramid.mask), pyramid.boundary)
    cd = manifold.point_dim
    out = np.zeros(pyramid.shape + (cd,))
    flat = out.reshape(-1, cd)
    step = 1 << plan.levels
    sl = tuple(slice(0, None, step) for _ in pyramid.shape)
    out[sl] = pyramid.base
    s = plan.ndim_spatial
    for r in range(1, plan.levels + 1):
        scale = 2.0 ** (0.5 * s * r)
        for st in plan.stencils[r - 1]:
            if st.targets.size == 0:
                continue
            pred = _predict(manifold, flat, st)
            d = pyramid.details[r - 1].reshape(-1, cd)[st.slots]
            flat[st.targets] = manifold.exp(pred, scale * d)
    return out


def subdivide(manifold, base, plan):
    """Refine a coarse grid by prediction only (all details zero)."""
    base = manifold.check_point(np.asarray(base, dtype=float))
    if base.shape[:-1] != plan.base_shape:
        raise ValueError(
            f"base shape {base.shape[:-1]} != plan base shape {plan.base_shape}")
    cd = manifold.point_dim
    pyr = Pyramid(manifold.name, plan.shape, plan.levels, plan.mask.name,
                  plan.boundary, base,
                  [np.zeros(ls + (cd,)) for ls in plan.level_shapes])
    return inverse_transform(manifold, pyr, plan)
