"""Data-fidelity terms: imaging operators, gradients, proximal maps.

Fidelity of a reconstruction u to observations f is a sum of per-site
atoms dist(A(u)_i, f_i)^p with p in {1, 2}.  The imaging operator A
assigns each output site a row of real weights over input sites and
maps the row to its weighted intrinsic mean; the identity (denoising),
a boolean site mask (inpainting) and centered convolution stencils
(deconvolution) are all rows of this one construction.  Rows are
renormalized to sum 1, which leaves the means unchanged.

Atom gradients chain through the mean map the same way detail atoms of
the multiscale penalty do.  The identity operator additionally has a
closed-form prox, used by the cyclic solver; every other operator is
handled by gradient (trajectory) steps only.
"""

from __future__ import annotations

import numpy as np

from .means import grad_through_mean, intrinsic_mean
from .multiscale import _merge_duplicates
from .regularizer import _color_first_fit, _pow_guarded, _spread_bound

KERNEL_BOUNDARIES = ("truncate", "periodic", "reflect")


def gaussian_kernel(sigma=2.0, window=13):
    """Sampled Gaussian weights of odd length, normalized to sum 1."""
    window = int(window)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd length")
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    j = np.arange(window) - window // 2
    w = np.exp(-0.5 * (j / float(sigma)) ** 2)
    return w / np.sum(w)


class Identity:
    """Every output site reads its own input site."""

    kind = "identity"

    def __repr__(self):
        return "Identity()"


class InpaintMask:
    """Observation keeps the sites where ``mask`` is True.

    Output sites enumerate the kept input sites in row-major order, so
    observations for this operator are a flat list, not a full grid.
    """

    kind = "inpaint"

    def __init__(self, mask):
        self.mask = np.asarray(mask, dtype=bool)
        if not self.mask.any():
            raise ValueError("inpainting mask keeps no sites")

    def __repr__(self):
        kept = int(np.count_nonzero(self.mask))
        return f"InpaintMask(kept={kept}/{self.mask.size})"


class MeanKernel:
    """Weighted-mean analogue of convolution with a centered stencil.

    ``kernel`` is a 1-D or 2-D array of odd window lengths; its entries
    may be negative as long as every row keeps a positive sum after
    boundary handling.  ``boundary`` closes windows leaving the grid:
    "truncate" drops the outside slots and renormalizes the row,
    "periodic" and "reflect" wrap or mirror the indices.
    """

    kind = "kernel"

    def __init__(self, kernel, boundary="truncate"):
        self.kernel = np.asarray(kernel, dtype=float)
        if self.kernel.ndim not in (1, 2):
            raise ValueError("kernel must be 1-D or 2-D")
        if any(w % 2 == 0 for w in self.kernel.shape):
            raise ValueError("kernel windows must have odd length")
        if boundary not in KERNEL_BOUNDARIES:
            raise ValueError(
                f"unknown boundary {boundary!r}; choose from {KERNEL_BOUNDARIES}")
        self.boundary = boundary

    def __repr__(self):
        return (f"MeanKernel(shape={self.kernel.shape}, "
                f"boundary={self.boundary!r})")


def _axis_window(n, width, boundary):
    """Per-site node coordinates and keep-flags of a centered window.

    Kernel slot j lands on site i + half - j, so the stencil acts as a
    true convolution (the window reads the kernel reversed).
    """
    half = width // 2
    coord = np.arange(n)[:, None] + (half - np.arange(width))[None, :]
    if boundary == "periodic":
        return np.mod(coord, n), np.ones(coord.shape, dtype=bool)
    if boundary == "reflect":
        if n < 2:
            raise ValueError("reflect boundary needs at least 2 sites")
        period = 2 * n - 2
        m = np.mod(coord, period)
        return np.where(m >= n, period - m, m), np.ones(coord.shape, dtype=bool)
    keep = (coord >= 0) & (coord < n)
    return np.clip(coord, 0, n - 1), keep


def _kernel_rows(shape, kernel, boundary):
    """Flat node indices and normalized weights, one row per site."""
    if kernel.ndim != len(shape):
        raise ValueError("kernel dimensionality must match the grid")
    if kernel.ndim == 1:
        nodes, keep = _axis_window(shape[0], kernel.shape[0], boundary)
        weights = np.where(keep, kernel[None, :], 0.0)
    else:
        n0, k0 = _axis_window(shape[0], kernel.shape[0], boundary)
        n1, k1 = _axis_window(shape[1], kernel.shape[1], boundary)
        nodes = n0[:, None, :, None] * shape[1] + n1[None, :, None, :]
        keep = k0[:, None, :, None] & k1[None, :, None, :]
        weights = np.where(keep, kernel[None, None], 0.0)
        nodes = nodes.reshape(shape[0] * shape[1], kernel.size)
        weights = weights.reshape(shape[0] * shape[1], kernel.size)
    sums = np.sum(weights, axis=1)
    if np.any(sums <= 0.0):
        raise ValueError("kernel rows must keep positive sums at the boundary")
    return _merge_duplicates(nodes, weights / sums[:, None])


def _operator_rows(operator, shape):
    """Row table (sites, weights) of an operator on a grid shape."""
    nsites = int(np.prod(shape))
    if operator.kind == "identity":
        sites = np.arange(nsites)[:, None]
        return sites, np.ones(sites.shape)
    if operator.kind == "inpaint":
        if operator.mask.shape != tuple(shape):
            raise ValueError("mask shape does not match the grid")
        sites = np.flatnonzero(operator.mask.ravel())[:, None]
        return sites, np.ones(sites.shape)
    if operator.kind == "kernel":
        return _kernel_rows(tuple(shape), operator.kernel, operator.boundary)
    raise ValueError(f"unknown operator kind {operator.kind!r}")


def _predict_rows(manifold, block, weights):
    """Weighted means of gathered row points; block is (rows, k, cd)."""
    if block.shape[1] == 1:
        return block[:, 0]
    return intrinsic_mean(manifold, np.swapaxes(block, 0, 1),
                          np.swapaxes(weights, 0, 1),
                          tol_scale=_spread_bound(manifold, block))


def apply_operator(manifold, operator, values):
    """Forward map A(u) of an imaging operator on a grid of points.

    Returns a grid of the input shape for Identity and MeanKernel, and
    the flat row-major list of kept sites for InpaintMask.
    """
    values = np.asarray(values, dtype=float)
    cd = manifold.point_dim
    shape = values.shape[:-1]
    sites, weights = _operator_rows(operator, shape)
    flat = values.reshape(-1, cd)
    out = _predict_rows(manifold, flat[sites], weights)
    if operator.kind == "inpaint":
        return out
    return out.reshape(shape + (cd,))


class DataTerm:
    """Fidelity term dist(A(u), f)^p bound to one observation set.

    Parameters
    ----------
    manifold : Manifold
    operator : Identity, InpaintMask or MeanKernel
    observed : ndarray
        Observations f; a full grid for Identity and MeanKernel, the
        flat row-major list of kept sites for InpaintMask.
    p : {1, 2}
        Fidelity exponent.

    Attributes
    ----------
    sites, weights, live : ndarray
        Row table of the operator: per atom the flat input sites it
        reads, their mean weights, and which slots carry weight (merged
        duplicates and truncated slots are dead but keep valid indices).
    """

    def __init__(self, manifold, operator, observed, p=2):
        p = float(p)
        if p not in (1.0, 2.0):
            raise ValueError("fidelity exponent p must be 1 or 2")
        self.manifold = manifold
        self.operator = operator
        self.p = p
        cd = manifold.point_dim
        f = np.asarray(observed, dtype=float)
        if f.ndim < 2 or f.shape[-1] != cd:
            raise ValueError("observations must end in the point dimension")
        if operator.kind == "inpaint":
            self.shape = operator.mask.shape
        else:
            self.shape = f.shape[:-1]
        if len(self.shape) not in (1, 2):
            raise ValueError("grids must be 1-D or 2-D")
        self.sites, self.weights = _operator_rows(operator, self.shape)
        self.live = self.weights != 0.0
        self.n_atoms = self.sites.shape[0]
        self.f = f.reshape(-1, cd)
        if self.f.shape[0] != self.n_atoms:
            raise ValueError(
                f"expected {self.n_atoms} observations, got {self.f.shape[0]}")
        self._colors = None

    @property
    def colors(self):
        """Atom batches whose read sites are pairwise disjoint."""
        if self._colors is None:
            if self.operator.kind == "kernel":
                touched = [row[lv] for row, lv in zip(self.sites, self.live)]
                self._colors = _color_first_fit(touched)
            else:
                self._colors = [np.arange(self.n_atoms)]
        return self._colors

    # -- whole-grid views --------------------------------------------------
    def _flatten(self, values):
        flat = np.asarray(values, dtype=float).reshape(-1, self.manifold.point_dim)
        if flat.shape[0] != int(np.prod(self.shape)):
            raise ValueError("grid does not match the operator shape")
        return flat

    def apply(self, values):
        """Forward map A(u) on a grid matching the bound observations."""
        flat = self._flatten(values)
        out = _predict_rows(self.manifold, flat[self.sites], self.weights)
        if self.operator.kind == "inpaint":
            return out
        return out.reshape(self.shape + (self.manifold.point_dim,))

    def value(self, values):
        """Fidelity value at a grid of manifold points."""
        flat = self._flatten(values)
        idx = np.arange(self.n_atoms)
        return float(np.sum(self.block_value(self.gather(flat, idx), idx)))

    def gradient(self, values):
        """Riemannian gradient; zero-distance atoms contribute zero for p=1."""
        values = np.asarray(values, dtype=float)
        flat = self._flatten(values)
        grad = np.zeros_like(flat)
        idx = np.arange(self.n_atoms)
        g = self.block_gradient(self.gather(flat, idx), idx)
        np.add.at(grad, self.sites, g)
        return grad.reshape(values.shape)

    # -- atom blocks (gather/compute/scatter, used by the solvers) ---------
    def gather(self, flat, idx):
        """Site values read by the selected atoms, shape (len(idx), k, cd)."""
        return flat[self.sites[idx]]

    def scatter(self, flat, idx, block):
        """Write live slots of a gathered block back; dead slots are skipped."""
        sites = self.sites[idx]
        lv = self.live[idx]
        flat[sites[lv]] = block[lv]

    def block_value(self, block, idx):
        """Per-atom fidelity dist(A(u)_i, f_i)^p on a gathered block."""
        pred = _predict_rows(self.manifold, block, self.weights[idx])
        return self.manifold.dist(pred, self.f[idx]) ** self.p

    def block_gradient(self, block, idx):
        """Per-atom gradient at the read sites; dead slots get zero."""
        man = self.manifold
        pred = _predict_rows(man, block, self.weights[idx])
        d = man.dist(pred, self.f[idx])
        scale = self.p * _pow_guarded(d, self.p - 2.0)
        v = -scale[:, None] * man.log(pred, self.f[idx], resolve_cut=True)
        if block.shape[1] == 1:
            return v[:, None, :]
        g = grad_through_mean(man, np.swapaxes(block, 0, 1),
                              np.swapaxes(self.weights[idx], 0, 1), v, mean=pred)
        return np.where(self.live[idx][..., None], np.swapaxes(g, 0, 1), 0.0)

    # -- proximal map -------------------------------------------------------
    def prox_sweep(self, values, mu):
        """Closed-form prox of every identity atom; returns the new grid.

        Site i moves toward f_i along the geodesic by min(mu, dist) for
        p = 1 (snapping onto f_i once mu exceeds the distance) and by
        2 mu dist / (1 + 2 mu) for p = 2.  Only the identity operator
        has a prox; the others take gradient steps in the solvers.
        """
        if self.operator.kind != "identity":
            raise ValueError("proximal map requires the identity operator")
        man = self.manifold
        out = np.array(values, dtype=float)
        flat = out.reshape(-1, man.point_dim)
        d = man.dist(flat, self.f)
        if self.p == 1.0:
            t = np.minimum(mu, d)
        else:
            t = 2.0 * mu * d / (1.0 + 2.0 * mu)
        snap = np.flatnonzero((t >= d) & (d > 0.0))
        part = np.flatnonzero((t > 0.0) & (t < d))
        flat[part] = man.geodesic_point(flat[part], self.f[part], t[part])
        flat[snap] = self.f[snap]
        return out
