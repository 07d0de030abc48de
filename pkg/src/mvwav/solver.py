"""Iterative solvers: forward-backward and cyclic proximal schemes.

Both schemes minimize a data term plus the multiscale penalty, atom by
atom, with a diminishing step sequence mu_n.  The forward-backward
scheme keeps one block of atoms smooth (the data atoms when p > 1,
otherwise the penalty atoms, which requires q > 1): each outer
iteration sweeps trajectory gradient steps over the smooth atoms in
Gauss-Seidel fashion, so every atom sees the updates of the atoms
before it, then applies proximal maps of the other block.  The cyclic
scheme applies proximal maps of every atom in a fixed cyclic order and
therefore needs a prox for each atom, which restricts the data
operator to the identity.

A trajectory step follows a polygonal descent path: sub-steps of
-tau*mu*grad with tau predicted by line search, terminating once the
accumulated tau reaches 1; the last sub-step is clipped so the total
is exactly one nominal step.

Sweeps process atoms in conflict-free batches (atoms of a batch touch
disjoint sites), so batched and one-atom-at-a-time execution of the
same enumeration agree; runs are deterministic.  Solvers abort only on
a non-finite objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from time import perf_counter

import numpy as np

from .errors import (ConfigError, GeometryError, NoConvergenceError,
                     NumericalAbortError)
from .regularizer import AtomFamily, _split_singletons

_MAX_SUBSTEPS = 16
_ATOM_ERRORS = (GeometryError, NoConvergenceError)
_PROBES = 12
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0

SCHEMES = ("auto", "gfb", "cppa")
COOLINGS = ("power", "stagewise")
SWEEP_ORDERS = ("batched", "lex")


@dataclass(frozen=True)
class SolverConfig:
    """Scheme selection, step-size cooling, and sweep layout.

    ``scheme="auto"`` picks the cyclic scheme for p = 1 with q in
    {0, 1} and forward-backward otherwise.  ``cooling="power"`` uses
    mu0 * k^-tau; ``"stagewise"`` holds mu0 for 50 iterations, then
    decays with exponent 0.35 to iteration 100 and 0.55 beyond, joined
    continuously.  ``sweep_order`` fixes the atom enumeration;
    ``parallel_batches`` executes conflict-free batches as single
    vectorized updates instead of atom by atom.
    """

    scheme: str = "auto"
    iterations: int = 200
    mu0: float = 1.0
    cooling: str = "power"
    tau: float = 1.0
    sweep_order: str = "batched"
    parallel_batches: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.cooling not in COOLINGS:
            raise ConfigError(f"unknown cooling {self.cooling!r}")
        if self.sweep_order not in SWEEP_ORDERS:
            raise ConfigError(f"unknown sweep order {self.sweep_order!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if not self.mu0 > 0.0:
            raise ConfigError("mu0 must be positive")
        if not self.tau > 0.0:
            raise ConfigError("tau must be positive")


def mu_schedule(config, k):
    """Step size of outer iteration k (1-based)."""
    if config.cooling == "power":
        return config.mu0 * float(k) ** -config.tau
    if k <= 50:
        return config.mu0
    if k <= 100:
        return config.mu0 * (k / 50.0) ** -0.35
    return config.mu0 * 2.0 ** -0.35 * (k / 100.0) ** -0.55


@dataclass
class Problem:
    """A data term and a penalty bound to the same grid."""

    data: object
    reg: object

    def __post_init__(self):
        if self.data.manifold is not self.reg.manifold:
            raise ValueError("data term and penalty use different manifolds")
        if tuple(self.data.shape) != tuple(self.reg.plan.shape):
            raise ValueError("data term and penalty grids disagree")

    @property
    def manifold(self):
        return self.data.manifold

    def objective(self, values):
        return self.data.value(values), self.reg.value(values)


@dataclass
class RunReport:
    """Outcome of one solver run.

    ``trace`` has one row per outer iteration, starting at the initial
    point: (iteration, data term, penalty, total).
    """

    scheme: str
    values: np.ndarray
    trace: np.ndarray
    flags: dict
    wall_time: float


# -- trajectory step -------------------------------------------------------
def _line_search(phi, f0):
    """Bracketed per-atom minimization of step objectives on [0, 2].

    Golden-section probes followed by one parabolic probe through the
    surviving triple (exact on quadratic objectives); ``phi`` maps a
    step vector (m,) to objective values (m,).  Returns the best probed
    step and its value; a step of 0 keeps the start value f0.
    """
    m = f0.shape[0]
    a = np.zeros(m)
    b = np.full(m, 2.0)
    x1 = a + (1.0 - _INVPHI) * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1 = phi(x1)
    f2 = phi(x2)
    bestc = np.where(f1 <= f2, x1, x2)
    bestf = np.minimum(f1, f2)
    # most recently discarded interior point, for the final parabola
    xd = a.copy()
    fd = f0.copy()
    for _ in range(_PROBES - 3):
        left = f1 < f2
        xd = np.where(left, x2, x1)
        fd = np.where(left, f2, f1)
        a = np.where(left, a, x1)
        b = np.where(left, x2, b)
        xkeep = np.where(left, x1, x2)
        fkeep = np.where(left, f1, f2)
        xnew = np.where(left, a + (1.0 - _INVPHI) * (b - a),
                        a + _INVPHI * (b - a))
        fnew = phi(xnew)
        x1 = np.where(left, xnew, xkeep)
        f1 = np.where(left, fnew, fkeep)
        x2 = np.where(left, xkeep, xnew)
        f2 = np.where(left, fkeep, fnew)
        bestc = np.where(fnew < bestf, xnew, bestc)
        bestf = np.minimum(bestf, fnew)
    vu = x1 - xd
    vw = x1 - x2
    t1 = vu * (f1 - f2)
    t2 = vw * (f1 - fd)
    den = 2.0 * (t1 - t2)
    num = vu * t1 - vw * t2
    vertex = x1 - num / np.where(den == 0.0, 1.0, den)
    vertex = np.where(np.isfinite(vertex) & (den != 0.0),
                      np.clip(vertex, 0.0, 2.0), bestc)
    fv = phi(vertex)
    bestc = np.where(fv < bestf, vertex, bestc)
    bestf = np.minimum(bestf, fv)
    return bestc, bestf


def _batch_values(family, block, idx):
    """Per-atom values; atoms whose evaluation breaks down become +inf."""
    try:
        return np.asarray(family.value(block, idx), dtype=float)
    except _ATOM_ERRORS:
        pass
    vals = np.empty(idx.size)
    for j in range(idx.size):
        try:
            vals[j] = float(family.value(block[j:j + 1], idx[j:j + 1])[0])
        except _ATOM_ERRORS:
            vals[j] = np.inf
    return vals


def _batch_gradient(family, block, idx):
    """Per-atom gradients; broken atoms get zero rows and a bad flag."""
    try:
        return family.gradient(block, idx), np.zeros(idx.size, dtype=bool)
    except _ATOM_ERRORS:
        pass
    g = np.zeros_like(block)
    bad = np.zeros(idx.size, dtype=bool)
    for j in range(idx.size):
        try:
            g[j] = family.gradient(block[j:j + 1], idx[j:j + 1])[0]
        except _ATOM_ERRORS:
            bad[j] = True
    return g, bad


def _trajectory_batch(man, family, flat, idx, mu):
    """Trajectory steps for one conflict-free batch of smooth atoms.

    Mutates ``flat`` at the batch's live sites; returns the number of
    failed line searches (atoms that fell back to one nominal step) and
    of skipped atoms (evaluation broke down, atom left untouched for
    this sweep).
    """
    sites = family.sites[idx]
    live = family.live[idx]
    block = flat[sites]
    fcur = _batch_values(family, block, idx)
    done = ~np.isfinite(fcur)
    skipped = int(np.count_nonzero(done))
    tacc = np.zeros(idx.size)
    failures = 0
    for _ in range(_MAX_SUBSTEPS):
        al = np.flatnonzero(~done)
        if al.size == 0:
            break
        ba = block[al]
        ia = idx[al]
        g, badg = _batch_gradient(family, ba, ia)
        skipped += int(np.count_nonzero(badg))
        moving = ~badg & (np.sum(man.inner(ba, g, g), axis=1) > 0.0)
        done[al[~moving]] = True
        al = al[moving]
        if al.size == 0:
            break
        ba = ba[moving]
        ia = ia[moving]
        g = g[moving]
        f0 = fcur[al]

        def phi(c):
            trial = man.exp(ba, (-mu * c)[:, None, None] * g)
            v = _batch_values(family, trial, ia)
            return np.where(np.isfinite(v), v, np.inf)

        c, fc = _line_search(phi, f0)
        rem = 1.0 - tacc[al]
        # a failed search (no decrease along the ray) spends the whole
        # remaining budget at once; on a fresh path that is the plain
        # single step of mu times the gradient
        fail = ~(fc < f0)
        final = fail | (c >= rem)
        cstep = np.where(final, rem, c)
        failures += int(np.count_nonzero(fail))
        trial = man.exp(ba, (-mu * cstep)[:, None, None] * g)
        fin = np.flatnonzero(final)
        if fin.size:
            # the clipped landing was never probed; an atom it breaks
            # keeps the progress of its earlier sub-steps instead
            tv = _batch_values(family, trial[fin], ia[fin])
            broke = fin[~np.isfinite(tv)]
            skipped += broke.size
            trial[broke] = ba[broke]
        block[al] = trial
        tacc[al] += cstep
        fcur[al] = np.where(final, fcur[al], fc)
        done[al[final]] = True
    flat[sites[live]] = block[live]
    return failures, skipped


def trajectory_step(manifold, value_fn, gradient_fn, x0, mu):
    """Apply the trajectory operator to a single smooth atom.

    ``value_fn``/``gradient_fn`` act on the flattened (n, point_dim)
    point table.  Returns (endpoint, line_search_failed).
    """
    flat = np.array(x0, dtype=float).reshape(-1, manifold.point_dim)
    n = flat.shape[0]
    family = AtomFamily(
        np.arange(n)[None, :], np.ones((1, n), dtype=bool),
        [np.array([0])],
        lambda block, idx: np.array([value_fn(block[0])], dtype=float),
        lambda block, idx: np.asarray(gradient_fn(block[0]), dtype=float)[None])
    fails, _ = _trajectory_batch(manifold, family, flat, np.array([0]), mu)
    return flat.reshape(np.shape(x0)), bool(fails)


# -- scheme runners ---------------------------------------------------------
def resolve_scheme(problem, config):
    """Scheme named by the config, or the default rule on "auto"."""
    if config.scheme != "auto":
        return config.scheme
    if problem.data.p == 1.0 and problem.reg.params.q in (0.0, 1.0):
        return "cppa"
    return "gfb"


def solve(problem, config, init=None):
    """Run the configured scheme; returns a RunReport."""
    if resolve_scheme(problem, config) == "cppa":
        return run_cppa(problem, config, init=init)
    return run_gfb(problem, config, init=init)


def _initial_grid(problem, init):
    man = problem.manifold
    shape = tuple(problem.data.shape) + (man.point_dim,)
    if init is None:
        if problem.data.operator.kind == "inpaint":
            raise ValueError("inpainting needs an explicit initial grid")
        return problem.data.f.reshape(shape).copy()
    values = np.array(init, dtype=float)
    if values.shape != shape:
        raise ValueError(f"initial grid must have shape {shape}")
    return values


def _groups(colors, config):
    if config.sweep_order == "lex":
        return [np.array([i]) for i in range(sum(c.size for c in colors))]
    if config.parallel_batches:
        return colors
    return _split_singletons(colors)


def _prox_order(config):
    if config.sweep_order == "lex":
        return "lex"
    return "batched" if config.parallel_batches else "serial"


def _trace_row(problem, values, k):
    dval, rval = problem.objective(values)
    total = dval + rval
    if not np.isfinite(total):
        raise NumericalAbortError(
            f"non-finite objective at iteration {k}")
    return [float(k), dval, rval, total]


def _data_family(data):
    return AtomFamily(data.sites, data.live, data.colors,
                      data.block_value, data.block_gradient)


def run_gfb(problem, config, init=None):
    """Forward-backward scheme with Gauss-Seidel trajectory sweeps."""
    t0 = perf_counter()
    man = problem.manifold
    smooth_data = problem.data.p > 1.0
    if not smooth_data:
        if not problem.reg.params.q > 1.0:
            raise ConfigError(
                "forward-backward needs a smooth block: p > 1 or q > 1")
        if problem.data.operator.kind != "identity":
            raise ConfigError(
                "p = 1 data atoms have proximal steps only for the"
                " identity operator")
    if smooth_data:
        families = [_data_family(problem.data)]
    else:
        families = problem.reg.atom_families()
    order = _prox_order(config)
    flags = {"skipped_atoms": 0, "stalled_prox": 0, "line_search_failures": 0}

    values = _initial_grid(problem, init)
    rows = [_trace_row(problem, values, 0)]
    for n in range(1, config.iterations + 1):
        mu = mu_schedule(config, n)
        flat = values.reshape(-1, man.point_dim)
        for family in families:
            for group in _groups(family.colors, config):
                fails, skips = _trajectory_batch(man, family, flat, group, mu)
                flags["line_search_failures"] += fails
                flags["skipped_atoms"] += skips
        if smooth_data:
            values, stalled = problem.reg.prox_sweep(values, mu, order=order)
            flags["stalled_prox"] += stalled
        else:
            values = problem.data.prox_sweep(values, mu)
        rows.append(_trace_row(problem, values, n))
    return RunReport("gfb", values, np.array(rows), flags,
                     perf_counter() - t0)


def run_cppa(problem, config, init=None):
    """Cyclic proximal sweeps: data atoms first, then penalty atoms."""
    t0 = perf_counter()
    if problem.data.operator.kind != "identity":
        raise ConfigError(
            "the cyclic scheme needs a prox for every atom; only the"
            " identity operator has one")
    if config.cooling == "power" and not 0.5 < config.tau <= 1.0:
        raise ConfigError(
            "the cyclic scheme needs power cooling with tau in (1/2, 1]")
    order = _prox_order(config)
    flags = {"skipped_atoms": 0, "stalled_prox": 0, "line_search_failures": 0}

    values = _initial_grid(problem, init)
    rows = [_trace_row(problem, values, 0)]
    for n in range(1, config.iterations + 1):
        mu = mu_schedule(config, n)
        values = problem.data.prox_sweep(values, mu)
        values, stalled = problem.reg.prox_sweep(values, mu, order=order)
        flags["stalled_prox"] += stalled
        rows.append(_trace_row(problem, values, n))
    return RunReport("cppa", values, np.array(rows), flags,
                     perf_counter() - t0)
