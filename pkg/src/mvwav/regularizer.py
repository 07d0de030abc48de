"""Sparse multiscale regularization: values, gradients, proximal sweeps.

The penalty has two parts.  Detail terms measure, per predicted site,
the geodesic distance between the value and its stencil prediction,
raised to the power q and weighted by lam1 times a per-level factor
2^(r(q*alpha - s)) (s = spatial dimension); with q = 0 the term counts
nonzero details instead, without level factors.  Coarse terms penalize
first differences between neighboring sites of the coarsest grid with
weight lam2.

Proximal maps treat one term ("atom") at a time, moving every grid
site the atom reads.  Coarse pairs have closed forms.  Detail atoms
minimize the prox objective over the predicted site and its stencil
jointly, by comparing two candidates: a monotone line-searched descent
from the current values, and an annihilation candidate that zeroes the
detail outright (exact for the counting penalty, and the kink branch
for q = 1).  Atoms are grouped into conflict-free batches (first-fit
coloring over touched sites) so each batch is one vectorized update;
batch composition is deterministic, and within a batch all sites are
disjoint, so execution order inside a batch cannot matter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, NoConvergenceError, NotDifferentiableError
from .means import grad_through_mean, intrinsic_mean
from .multiscale import _merge_duplicates

# details with geodesic length at most this count as exactly zero
EPS_DETAIL = 1e-9

# the sufficient-decrease constant is deliberately large: with a weak
# constant, trial steps near t*H = 2 pass while contracting by barely
# anything per iteration; requiring a tenth of the first-order decrease
# forces a halving there, so accepted steps contract by 0.8 or better
_ARMIJO_C = 0.1
_MAX_HALVINGS = 25
_INNER_CAP = 200
_MOVE_TOL = 1e-12

# curved-manifold descent stops once the projected remaining decrease of
# the objective falls below this fraction of its size; flat manifolds
# use closed forms instead and are exact
_TAIL_TOL = 1e-5


@dataclass(frozen=True)
class RegParams:
    """Weights and exponent of the multiscale penalty.

    ``q`` is the detail/difference exponent: 0 selects the counting
    penalty, otherwise q must lie in [1, 2].  ``alpha`` is the
    smoothness index entering the per-level factors.
    """

    lam1: float
    lam2: float
    q: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.lam1 < 0 or self.lam2 < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.q != 0.0 and not 1.0 <= self.q <= 2.0:
            raise ValueError("q must be 0 or in [1, 2]")


def level_factor(level, q, alpha, ndim_spatial):
    """Per-level weight of detail terms; 1 for the counting penalty."""
    if q == 0.0:
        return 1.0
    return 2.0 ** (level * (q * alpha - ndim_spatial))


def _color_first_fit(touched):
    """First-fit coloring of atoms given their touched-site lists.

    Returns index arrays; atoms inside one color touch disjoint sites.
    """
    colors = []
    for i, sites in enumerate(touched):
        ss = set(int(t) for t in sites)
        for taken, members in colors:
            if not (ss & taken):
                taken.update(ss)
                members.append(i)
                break
        else:
            colors.append((ss, [i]))
    return [np.asarray(members, dtype=np.int64) for _, members in colors]


@dataclass
class _DetailBlock:
    level: int
    factor: float
    targets: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    colors: list


@dataclass
class AtomFamily:
    """Site table plus block callbacks of one family of smooth atoms.

    Gradient-based solvers sweep atoms through this uniform view: gather
    ``flat[sites[idx]]`` into a block of shape (len(idx), k, point_dim),
    evaluate ``value``/``gradient`` on it, and scatter back through
    ``live`` (dead slots hold valid indices but must never be written).
    ``colors`` partitions the atoms into conflict-free batches.
    """

    sites: np.ndarray
    live: np.ndarray
    colors: list
    value: object
    gradient: object


def _pair_table(plan):
    """Adjacent-site pairs on the coarsest grid, as flat indices."""
    step = 1 << plan.levels
    shape = plan.shape
    if len(shape) == 1:
        sites = np.arange(0, shape[0], step)
        pairs = np.stack([sites[:-1], sites[1:]], axis=1)
        if plan.boundary == "periodic" and sites.size > 1:
            pairs = np.concatenate([pairs, [[sites[-1], sites[0]]]], axis=0)
        return pairs
    s0 = np.arange(0, shape[0], step)
    s1 = np.arange(0, shape[1], step)
    flat = s0[:, None] * shape[1] + s1[None, :]
    rows = [np.stack([flat[:-1].ravel(), flat[1:].ravel()], axis=1),
            np.stack([flat[:, :-1].ravel(), flat[:, 1:].ravel()], axis=1)]
    if plan.boundary == "periodic":
        if s0.size > 1:
            rows.append(np.stack([flat[-1].ravel(), flat[0].ravel()], axis=1))
        if s1.size > 1:
            rows.append(np.stack([flat[:, -1].ravel(), flat[:, 0].ravel()], axis=1))
    return np.concatenate(rows, axis=0)


class WaveletRegularizer:
    """Multiscale penalty bound to one grid layout.

    Parameters
    ----------
    manifold : Manifold
    plan : TransformPlan
        Stencil tables of the grid; detail atoms reuse its predictions.
    params : RegParams
    """

    def __init__(self, manifold, plan, params):
        self.manifold = manifold
        self.plan = plan
        self.params = params
        self.ndim_spatial = plan.ndim_spatial

        self.pairs = _pair_table(plan)
        self.pair_colors = _color_first_fit(list(self.pairs))

        self.blocks = []
        for r in range(1, plan.levels + 1):
            for st in plan.stencils[r - 1]:
                if st.targets.size == 0:
                    continue
                # duplicate node slots (merged boundaries, short periodic
                # axes) must not alias in the prox scatter: point every
                # zero-weight slot at the atom's own target, whose write
                # lands last
                nodes, weights = _merge_duplicates(st.nodes, st.weights)
                nodes = np.where(weights == 0.0, st.targets[:, None], nodes)
                touched = [np.concatenate([[t], row])
                           for t, row in zip(st.targets, nodes)]
                self.blocks.append(_DetailBlock(
                    r, level_factor(r, params.q, params.alpha, self.ndim_spatial),
                    st.targets, nodes, weights,
                    _color_first_fit(touched)))

    # -- objective -------------------------------------------------------
    def _pair_dists(self, flat):
        return self.manifold.dist(flat[self.pairs[:, 0]], flat[self.pairs[:, 1]])

    def _block_dists(self, flat, block, strict=True):
        pts = np.swapaxes(flat[block.nodes], 0, 1)
        pred = intrinsic_mean(self.manifold, pts, np.swapaxes(block.weights, 0, 1),
                              strict=strict)
        return pred, self.manifold.dist(pred, flat[block.targets])

    def value(self, values):
        """Penalty value at a grid of manifold points.

        Diagnostic evaluation: a prediction mean that fails to converge
        (possible on heavily corrupted grids) enters at its final
        iterate so the reported value stays finite.  Update paths keep
        strict semantics and skip such atoms instead.
        """
        q = self.params.q
        flat = np.asarray(values, dtype=float).reshape(-1, self.manifold.point_dim)
        total = 0.0
        if self.params.lam2 > 0 and self.pairs.size:
            d = self._pair_dists(flat)
            if q == 0.0:
                total += self.params.lam2 * np.count_nonzero(d > EPS_DETAIL)
            else:
                total += self.params.lam2 * np.sum(d ** q)
        if self.params.lam1 > 0:
            for block in self.blocks:
                _, d = self._block_dists(flat, block, strict=False)
                if q == 0.0:
                    total += self.params.lam1 * np.count_nonzero(d > EPS_DETAIL)
                else:
                    total += self.params.lam1 * block.factor * np.sum(d ** q)
        return float(total)

    def gradient(self, values):
        """Riemannian gradient; kinks of the q = 1 penalty contribute zero."""
        q = self.params.q
        if q == 0.0:
            raise NotDifferentiableError("counting penalty has no gradient")
        man = self.manifold
        values = np.asarray(values, dtype=float)
        flat = values.reshape(-1, man.point_dim)
        grad = np.zeros_like(flat)

        if self.params.lam2 > 0 and self.pairs.size:
            a = flat[self.pairs[:, 0]]
            b = flat[self.pairs[:, 1]]
            d = man.dist(a, b)
            scale = self.params.lam2 * q * _pow_guarded(d, q - 2.0)
            np.add.at(grad, self.pairs[:, 0],
                      -scale[:, None] * man.log(a, b, resolve_cut=True))
            np.add.at(grad, self.pairs[:, 1],
                      -scale[:, None] * man.log(b, a, resolve_cut=True))

        if self.params.lam1 > 0:
            for block in self.blocks:
                pred, d = self._block_dists(flat, block)
                y = flat[block.targets]
                scale = self.params.lam1 * block.factor * q * _pow_guarded(d, q - 2.0)
                np.add.at(grad, block.targets,
                          -scale[:, None] * man.log(y, pred, resolve_cut=True))
                v = -scale[:, None] * man.log(pred, y, resolve_cut=True)
                pts = np.swapaxes(flat[block.nodes], 0, 1)
                gx = grad_through_mean(man, pts, np.swapaxes(block.weights, 0, 1),
                                       v, mean=pred)
                np.add.at(grad, block.nodes, np.swapaxes(gx, 0, 1))
        return grad.reshape(values.shape)

    # -- smooth atom views -------------------------------------------------
    def atom_families(self):
        """Per-atom gather/scatter views for gradient-based sweeps.

        Returns the active penalty atoms as a list of ``AtomFamily``
        (coarse pairs first, then detail blocks in level order), the
        same enumeration the prox sweep uses.
        """
        if self.params.q == 0.0:
            raise NotDifferentiableError("counting penalty has no gradient")
        fams = []
        if self.params.lam2 > 0 and self.pairs.size:
            fams.append(self._pair_family())
        if self.params.lam1 > 0:
            for block in self.blocks:
                fams.append(self._detail_family(block))
        return fams

    def _pair_family(self):
        man = self.manifold
        lam2 = self.params.lam2
        q = self.params.q

        def value(block, idx):
            return lam2 * man.dist(block[:, 0], block[:, 1]) ** q

        def gradient(block, idx):
            a = block[:, 0]
            b = block[:, 1]
            scale = lam2 * q * _pow_guarded(man.dist(a, b), q - 2.0)
            return np.stack([-scale[:, None] * man.log(a, b, resolve_cut=True),
                             -scale[:, None] * man.log(b, a, resolve_cut=True)],
                            axis=1)

        live = np.ones(self.pairs.shape, dtype=bool)
        return AtomFamily(self.pairs, live, self.pair_colors, value, gradient)

    def _detail_family(self, block):
        man = self.manifold
        lam_eff = self.params.lam1 * block.factor
        q = self.params.q
        wts = block.weights

        def predict(gb, idx):
            x = gb[:, 1:]
            return intrinsic_mean(man, np.swapaxes(x, 0, 1),
                                  np.swapaxes(wts[idx], 0, 1),
                                  tol_scale=_spread_bound(man, x))

        def value(gb, idx):
            return lam_eff * man.dist(predict(gb, idx), gb[:, 0]) ** q

        def gradient(gb, idx):
            pred = predict(gb, idx)
            y = gb[:, 0]
            scale = lam_eff * q * _pow_guarded(man.dist(pred, y), q - 2.0)
            gy = -scale[:, None] * man.log(y, pred, resolve_cut=True)
            v = -scale[:, None] * man.log(pred, y, resolve_cut=True)
            gx = grad_through_mean(man, np.swapaxes(gb[:, 1:], 0, 1),
                                   np.swapaxes(wts[idx], 0, 1), v, mean=pred)
            out = np.concatenate([gy[:, None], np.swapaxes(gx, 0, 1)], axis=1)
            return np.where(live[idx][..., None], out, 0.0)

        sites = np.concatenate([block.targets[:, None], block.nodes], axis=1)
        live = np.concatenate([np.ones((sites.shape[0], 1), dtype=bool),
                               wts != 0.0], axis=1)
        return AtomFamily(sites, live, block.colors, value, gradient)

    # -- proximal sweep ---------------------------------------------------
    def prox_sweep(self, values, mu, order="batched"):
        """One pass of atom proxes; returns (new values, stalled count).

        ``order="batched"`` (canonical) executes conflict-free batches;
        ``order="serial"`` walks the same batches one atom at a time;
        ``order="lex"`` applies atoms strictly one at a time in table
        order.  The stalled count includes atoms whose prediction mean
        failed to evaluate; those are skipped unchanged for this sweep.
        """
        if order not in ("batched", "serial", "lex"):
            raise ValueError(f"unknown sweep order {order!r}")
        man = self.manifold
        out = np.array(values, dtype=float)
        flat = out.reshape(-1, man.point_dim)
        stalled = 0
        if self.params.lam2 > 0:
            for color in self._pair_groups(order):
                self._prox_pairs(flat, self.pairs[color], mu)
        if self.params.lam1 > 0:
            for block in self.blocks:
                for color in self._block_groups(block, order):
                    stalled += self._prox_details(flat, block, color, mu)
        return out, stalled

    def _pair_groups(self, order):
        if order == "batched":
            return self.pair_colors
        if order == "serial":
            return _split_singletons(self.pair_colors)
        return [np.array([i]) for i in range(self.pairs.shape[0])]

    def _block_groups(self, block, order):
        if order == "batched":
            return block.colors
        if order == "serial":
            return _split_singletons(block.colors)
        return [np.array([i]) for i in range(block.targets.size)]

    def _prox_pairs(self, flat, pairs, mu):
        man = self.manifold
        lam2 = self.params.lam2
        q = self.params.q
        a = flat[pairs[:, 0]]
        b = flat[pairs[:, 1]]
        d = man.dist(a, b)
        if q == 0.0:
            collapse = d <= 2.0 * np.sqrt(mu * lam2)
            mid = man.geodesic_point(a, b, 0.5 * d)
            sel = collapse[:, None]
            flat[pairs[:, 0]] = np.where(sel, mid, a)
            flat[pairs[:, 1]] = np.where(sel, mid, b)
            return
        if q == 1.0:
            t = np.minimum(mu * lam2, 0.5 * d)
        elif q == 2.0:
            t = mu * lam2 * d / (2.0 + 2.0 * mu * lam2)
        else:
            t = _pair_step_bisect(d, mu, lam2, q)
        flat[pairs[:, 0]] = man.geodesic_point(a, b, t)
        flat[pairs[:, 1]] = man.geodesic_point(b, a, t)

    def _prox_details(self, flat, block, color, mu):
        man = self.manifold
        q = self.params.q
        lam_eff = self.params.lam1 * block.factor
        targets = block.targets[color]
        nodes = block.nodes[color]
        weights = block.weights[color]
        y0 = flat[targets]
        x0 = flat[nodes]
        try:
            ynew, xnew, nstall = prox_detail_atoms(
                man, y0, x0, weights, mu, lam_eff, q)
        except (GeometryError, NoConvergenceError):
            if color.size == 1:
                return 1
            # retry one atom at a time so a single bad stencil cannot
            # block its whole batch
            return sum(self._prox_details(flat, block, color[j:j + 1], mu)
                       for j in range(color.size))
        # node slots redirected to the target carry its stale value, so
        # the target write must land after them
        flat[nodes] = xnew
        flat[targets] = ynew
        return nstall


def _split_singletons(colors):
    return [np.array([i]) for color in colors for i in color]


def _pair_step_bisect(d, mu, lam2, q):
    """Per-endpoint step of the coarse-pair prox for q in (1, 2).

    Root of t/mu = lam2 q (d - 2t)^(q-1) on [0, d/2]; the objective
    t^2/mu + lam2 (d - 2t)^q is strictly convex there.
    """
    lo = np.zeros_like(d)
    hi = 0.5 * d
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        gap = np.maximum(d - 2.0 * mid, 0.0)
        pos = mid / mu - lam2 * q * gap ** (q - 1.0) > 0.0
        lo = np.where(pos, lo, mid)
        hi = np.where(pos, mid, hi)
    return 0.5 * (lo + hi)


def _pow_guarded(d, expo):
    """d**expo with 0 where d is (numerically) zero; safe for expo < 0."""
    if expo >= 0.0:
        return np.where(d > EPS_DETAIL, d, 0.0) ** expo
    safe = np.where(d > EPS_DETAIL, d, 1.0)
    return np.where(d > EPS_DETAIL, safe ** expo, 0.0)


def _spread_bound(man, x0):
    """Cheap upper bound on the pairwise spread of stencil points."""
    bound = np.zeros(x0.shape[0])
    for k in range(1, x0.shape[1]):
        bound = np.maximum(bound, man.dist(x0[:, 0], x0[:, k]))
    return 2.0 * bound


def _shrink_root(d0, muT, lam_eff, q):
    """Shrunk detail magnitude for exponents in (1, 2) by bisection.

    Root of (d - d0)/muT + lam_eff q d^(q-1) on [0, d0]; the derivative
    is increasing there, so the sign test brackets the root.
    """
    lo = np.zeros_like(d0)
    hi = d0.copy()
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        pos = (mid - d0) / muT + lam_eff * q * mid ** (q - 1.0) > 0.0
        lo = np.where(pos, lo, mid)
        hi = np.where(pos, mid, hi)
    return 0.5 * (lo + hi)


def _prox_detail_flat(man, y0, x0, weights, mu, lam_eff, q):
    """Exact detail prox on flat manifolds.

    In log coordinates the atom objective is quadratic plus a radial
    penalty of the signed detail D = y - mean(x), so the minimizer keeps
    the direction of D and shrinks its magnitude; the sites then split
    the move along the joint direction (1, -w) with squared norm
    1 + sum w^2.
    """
    wT = np.swapaxes(weights, 0, 1)
    tnorm2 = 1.0 + np.sum(weights * weights, axis=1)
    m0 = intrinsic_mean(man, np.swapaxes(x0, 0, 1), wT)
    dvec = man.log(m0, y0, resolve_cut=True)
    dn = man.norm(m0, dvec)
    dn_safe = np.maximum(dn, 1e-300)
    if q == 0.0:
        sig = np.where(dn * dn > 2.0 * mu * lam_eff * tnorm2, 1.0, 0.0)
    elif q == 1.0:
        sig = np.maximum(0.0, 1.0 - mu * lam_eff * tnorm2 / dn_safe)
    elif q == 2.0:
        sig = 1.0 / (1.0 + 2.0 * mu * lam_eff * tnorm2)
    else:
        sig = _shrink_root(dn, mu * tnorm2, lam_eff, q) / dn_safe
    y = y0.copy()
    x = x0.copy()
    al = np.flatnonzero((sig < 1.0) & (dn > 0.0))
    if al.size:
        delta = ((sig[al] - 1.0) / tnorm2[al])[:, None] * dvec[al]
        y[al] = man.exp(y0[al], delta)
        x[al] = man.exp(x0[al], -weights[al][..., None] * delta[:, None, :])
    return y, x, 0


def prox_detail_atoms(manifold, y0, x0, weights, mu, lam_eff, q):
    """Proximal map of one batch of detail atoms.

    Minimizes (1/(2 mu)) (dist(y, y0)^2 + sum_k dist(x_k, x0_k)^2)
    + lam_eff * dist(mean(x), y)^q jointly over the predicted value y
    and its stencil points x, vectorized over atoms (first axis).

    Returns (y, x, stalled_count).
    """
    man = manifold
    if man.flat:
        return _prox_detail_flat(man, y0, x0, weights, mu, lam_eff, q)
    wT = np.swapaxes(weights, 0, 1)
    tol_scale = _spread_bound(man, x0)
    m0 = intrinsic_mean(man, np.swapaxes(x0, 0, 1), wT, tol_scale=tol_scale)
    d0 = man.dist(m0, y0)

    if q == 0.0:
        active = np.flatnonzero(d0 > EPS_DETAIL)
        y = y0.copy()
        x = x0.copy()
        if active.size == 0:
            return y, x, 0
        xb, mb, vb, nstall = _annihilate(
            man, y0[active], x0[active], wT[:, active], mu, m0[active],
            tol_scale[active])
        take = active[vb <= lam_eff]
        y[take] = mb[vb <= lam_eff]
        x[take] = xb[vb <= lam_eff]
        return y, x, nstall

    natoms = y0.shape[0]
    if q == 1.0:
        # atoms whose detail is already well inside the soft-threshold
        # dead zone end at the kink, where descent only bounces; the
        # annihilation candidate is the minimizer there (flat-case
        # boundary is 2 mu lam |t|^2, so 0.8 leaves curvature headroom)
        tnorm2 = 1.0 + np.sum(wT * wT, axis=0)
        idx = np.flatnonzero(d0 >= 0.8 * mu * lam_eff * tnorm2)
    else:
        idx = np.arange(natoms)
    ya = y0.copy()
    xa = x0.copy()
    ga = np.full(natoms, np.inf)
    nstall = 0
    if idx.size:
        yi, xi, gi, stall_a = _descend_joint(
            man, y0[idx], x0[idx], wT[:, idx], mu, lam_eff, q,
            m0[idx], d0[idx], tol_scale[idx])
        ya[idx] = yi
        xa[idx] = xi
        ga[idx] = gi
        nstall = int(np.count_nonzero(stall_a))
    if q < 2.0:
        xb, mb, vb, nstall_b = _annihilate(man, y0, x0, wT, mu, m0, tol_scale)
        nstall += nstall_b
        better = vb < ga
        ya = np.where(better[:, None], mb, ya)
        xa = np.where(better[:, None, None], xb, xa)
    return ya, xa, nstall


def _joint_value(man, y, x, y0, x0, mu, lam_eff, q, m):
    d = man.dist(m, y)
    quad = man.dist(y, y0) ** 2 + np.sum(man.dist(x, x0) ** 2, axis=1)
    return quad / (2.0 * mu) + lam_eff * d ** q, d


def _descend_joint(man, y0, x0, wT, mu, lam_eff, q, m0, d0, tol_scale):
    """Line-searched descent on the joint prox objective from (y0, x0)."""
    y = y0.copy()
    x = x0.copy()
    m = m0.copy()
    natoms = y0.shape[0]
    gval, d = _joint_value(man, y, x, y0, x0, mu, lam_eff, q, m)
    # all terms are positive, so a slim resolution floor suffices
    fres = 16.0 * np.finfo(float).eps * gval
    tnorm2 = 1.0 + np.sum(wT * wT, axis=0)
    tolm = _MOVE_TOL * (1.0 + tol_scale)
    done = np.zeros(natoms, dtype=bool)
    tprev = np.full(natoms, np.inf)
    gp1 = gval.copy()
    gp2 = gval.copy()
    if q == 1.0:
        done |= d <= EPS_DETAIL  # kink: the annihilation branch takes over
    for _ in range(_INNER_CAP):
        # compact to the undone atoms: one crawler should not drag the
        # whole batch through mean solves every iteration
        al = np.flatnonzero(~done)
        if al.size == 0:
            break
        ya, xa, ma, da = y[al], x[al], m[al], d[al]
        y0a, x0a, wa = y0[al], x0[al], wT[:, al]
        gva = gval[al]
        scale = lam_eff * q * _pow_guarded(da, q - 2.0)
        gy = -man.log(ya, y0a, resolve_cut=True) / mu \
            - scale[:, None] * man.log(ya, ma, resolve_cut=True)
        v = -scale[:, None] * man.log(ma, ya, resolve_cut=True)
        gchain = grad_through_mean(man, np.swapaxes(xa, 0, 1), wa, v, mean=ma)
        gx = -man.log(xa, x0a, resolve_cut=True) / mu \
            + np.swapaxes(gchain, 0, 1)
        iy = man.inner(ya, gy, gy)
        ix = man.inner(xa, gx, gx)
        gn2 = iy + np.sum(ix, axis=1)

        # trial step matched to the local curvature: 1/mu from the prox
        # terms plus lam q d^(q-2) |t|^2 from the penalty (its stiffest
        # direction; exact for q = 2, the 1/d transverse term for q = 1).
        # t = 2/(Hmin+Hmax) contracts every mode, so the line search
        # normally accepts the first probe instead of hunting by halving
        tnat = 2.0 * mu / (2.0 + mu * scale * tnorm2[al])
        # cap the trial so no single site moves more than unit length
        # (keeps incomplete-manifold means away from the cut locus), and
        # warm-start from the last accepted step so a too-stiff mu is not
        # re-probed every iteration
        gmax = np.sqrt(np.maximum(iy, np.max(ix, axis=1)))
        t = np.minimum(np.minimum(tnat, 1.0 / np.maximum(gmax, 1e-30)),
                       2.0 * tprev[al])
        accepted = np.zeros(al.size, dtype=bool)
        floored = np.zeros(al.size, dtype=bool)
        yb, xb = ya.copy(), xa.copy()
        for _ in range(_MAX_HALVINGS):
            rem = np.flatnonzero(~accepted & ~floored)
            if rem.size == 0:
                break
            tr = t[rem]
            yt = man.exp(ya[rem], -tr[:, None] * gy[rem])
            xt = man.exp(xa[rem], -tr[:, None, None] * gx[rem])
            mt = intrinsic_mean(man, np.swapaxes(xt, 0, 1), wa[:, rem],
                                init=ma[rem], tol_scale=tol_scale[al[rem]])
            gt, dt = _joint_value(man, yt, xt, y0a[rem], x0a[rem], mu,
                                  lam_eff, q, mt)
            need = _ARMIJO_C * tr * gn2[rem]
            ok = gt <= gva[rem] - need
            # required decrease below objective resolution: converged,
            # and taking the uncertified step would only wander
            fl = ~ok & (need <= fres[al[rem]])
            hit = rem[ok]
            ya[hit], xa[hit], ma[hit] = yt[ok], xt[ok], mt[ok]
            gva[hit], da[hit] = gt[ok], dt[ok]
            accepted[hit] = True
            floored[rem[fl]] = True
            t[rem[~ok & ~fl]] *= 0.5
        moved = np.maximum(man.dist(ya, yb), np.max(man.dist(xa, xb), axis=1))
        y[al], x[al], m[al] = ya, xa, ma
        gval[al], d[al] = gva, da
        tprev[al[accepted]] = t[accepted]
        fin = (moved <= tolm[al]) | ~accepted  # floored or no decrease left
        if q == 1.0:
            fin |= da <= EPS_DETAIL
        # near the q = 1 decision boundary the ill-conditioning grows like
        # mu lam |t|^2 / d and plain descent inches along; once the value
        # decrements contract geometrically, the remaining gain projects to
        # dg r/(1-r), and an atom whose projection is negligible is kept
        # as is (the annihilation candidate still competes against it)
        dg1 = gp1[al] - gva
        dg0 = gp2[al] - gp1[al]
        tail = (dg0 > 0.0) & (dg1 > 0.0) & (dg1 < dg0)
        r = dg1 / np.where(dg0 > 0.0, dg0, 1.0)
        fin |= tail & (dg1 * r <= _TAIL_TOL * (1.0 - r) * (1.0 + gva))
        gp2[al] = gp1[al]
        gp1[al] = gva
        done[al[fin]] = True
    stalled = ~done
    return y, x, gval, stalled


def _annihilate(man, y0, x0, wT, mu, m0, tol_scale):
    """Detail-annihilation candidate: y = mean(x), detail exactly zero.

    Minimizes (1/(2 mu)) (sum_k dist(x_k, x0_k)^2 + dist(mean(x), y0)^2)
    over the stencil points.  Returns (x, mean, value, stalled_count).
    """
    x = x0.copy()
    m = m0.copy()
    natoms = x0.shape[0]

    def value(xc, mc):
        return (np.sum(man.dist(xc, x0) ** 2, axis=1)
                + man.dist(mc, y0) ** 2) / (2.0 * mu)

    vval = value(x, m)
    fres = 16.0 * np.finfo(float).eps * (vval + man.dist(m0, y0) ** 2 / (2.0 * mu))
    # quadratic objective: curvature spans 1/mu .. (1 + sum w^2)/mu
    tnat = 2.0 * mu / (1.0 + 1.0 + np.sum(wT * wT, axis=0))
    tolm = _MOVE_TOL * (1.0 + tol_scale)
    done = np.zeros(natoms, dtype=bool)
    tprev = np.full(natoms, np.inf)
    for _ in range(_INNER_CAP):
        al = np.flatnonzero(~done)
        if al.size == 0:
            break
        xa, ma, va = x[al], m[al], vval[al]
        x0a, y0a, wa = x0[al], y0[al], wT[:, al]
        v = -man.log(ma, y0a, resolve_cut=True) / mu
        gchain = grad_through_mean(man, np.swapaxes(xa, 0, 1), wa, v, mean=ma)
        gx = -man.log(xa, x0a, resolve_cut=True) / mu \
            + np.swapaxes(gchain, 0, 1)
        ix = man.inner(xa, gx, gx)
        gn2 = np.sum(ix, axis=1)

        gmax = np.sqrt(np.max(ix, axis=1))
        t = np.minimum(np.minimum(tnat[al], 1.0 / np.maximum(gmax, 1e-30)),
                       2.0 * tprev[al])
        accepted = np.zeros(al.size, dtype=bool)
        floored = np.zeros(al.size, dtype=bool)
        xb = xa.copy()
        for _ in range(_MAX_HALVINGS):
            rem = np.flatnonzero(~accepted & ~floored)
            if rem.size == 0:
                break
            tr = t[rem]
            xt = man.exp(xa[rem], -tr[:, None, None] * gx[rem])
            mt = intrinsic_mean(man, np.swapaxes(xt, 0, 1), wa[:, rem],
                                init=ma[rem], tol_scale=tol_scale[al[rem]])
            vt = (np.sum(man.dist(xt, x0a[rem]) ** 2, axis=1)
                  + man.dist(mt, y0a[rem]) ** 2) / (2.0 * mu)
            need = _ARMIJO_C * tr * gn2[rem]
            ok = vt <= va[rem] - need
            fl = ~ok & (need <= fres[al[rem]])
            hit = rem[ok]
            xa[hit], ma[hit], va[hit] = xt[ok], mt[ok], vt[ok]
            accepted[hit] = True
            floored[rem[fl]] = True
            t[rem[~ok & ~fl]] *= 0.5
        moved = np.max(man.dist(xa, xb), axis=1)
        x[al], m[al], vval[al] = xa, ma, va
        tprev[al[accepted]] = t[accepted]
        done[al[(moved <= tolm[al]) | ~accepted]] = True
    nstall = int(np.count_nonzero(~done))
    return x, m, vval, nstall
