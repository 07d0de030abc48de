"""Job configuration: TOML files in, built problem objects out.

A job file has flat sections per concern.  ``[grid]`` names the
manifold and either an input CSV path or a phantom recipe; optional
``[noise]`` describes the observation model; ``[transform]`` the
multiscale layout; ``[regularizer]``, ``[data]`` and ``[solver]`` the
problem and scheme; ``[output]`` the destination directory.  The
``metrics`` command reads a ``[metrics]`` section of grid paths
instead.  Unknown sections or keys are rejected, so typos fail loudly
rather than silently running defaults.

``dump_config`` writes the resolved document back out; the echoed file
is itself a valid job file, so any run can be reproduced from its
``config_used.toml`` alone.
"""

import copy

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

import numpy as np

from .dataterm import DataTerm, Identity, MeanKernel, gaussian_kernel
from .errors import ConfigError
from .manifolds import get_manifold
from .multiscale import make_plan
from .regularizer import RegParams, WaveletRegularizer
from .solver import SolverConfig
from .synth import NOISE_MODELS, PHANTOM_KINDS, make_phantom

_LEVEL_KEYS = {"vonmises": "kappa", "tangent-gaussian": "sigma", "rician": "eta"}

_KNOWN_KEYS = {
    "grid": {"manifold", "input", "phantom", "dims", "truth"},
    "noise": {"model", "kappa", "sigma", "eta", "seed"},
    "transform": {"mask", "levels", "boundary"},
    "regularizer": {"lam1", "lam2", "q", "alpha"},
    "data": {"p", "operator", "sigma", "window", "kernel_boundary"},
    "solver": {"scheme", "iterations", "mu0", "cooling", "tau",
               "sweep_order", "parallel_batches", "threads"},
    "metrics": {"truth", "observed", "restored"},
    "output": {"dir"},
}


def load_config(path):
    """Parse a job file; returns the raw document dict."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: not valid TOML: {exc}") from None
    for section, table in doc.items():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        extra = set(table) - _KNOWN_KEYS[section]
        if extra:
            raise ConfigError(
                f"{path}: unknown key(s) {sorted(extra)} in [{section}]")
    return doc


def _fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def dump_config(doc, path):
    """Write a document dict as a TOML job file (the config echo)."""
    lines = []
    for section, table in doc.items():
        lines.append(f"[{section}]")
        for key, val in table.items():
            lines.append(f"{key} = {_fmt_value(val)}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def _require(doc, section):
    if section not in doc:
        raise ConfigError(f"missing required section [{section}]")
    return doc[section]


def _get(table, section, key, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"[{section}] needs key {key!r}")
        return default
    return table[key]


def build_manifold(doc):
    grid = _require(doc, "grid")
    tag = _get(grid, "grid", "manifold", required=True)
    try:
        return get_manifold(tag)
    except Exception as exc:
        raise ConfigError(f"[grid] manifold: {exc}") from None


def build_input_grid(doc, manifold):
    """Load or synthesize the clean input grid.

    Returns (values, synthetic) where synthetic says the grid came from
    a phantom recipe, in which case it is also the ground truth.
    """
    from .gridio import load_grid

    grid = _require(doc, "grid")
    has_input = "input" in grid
    has_phantom = "phantom" in grid
    if has_input == has_phantom:
        raise ConfigError("[grid] needs exactly one of 'input' or 'phantom'")
    if has_input:
        man, values = load_grid(grid["input"])
        if man.name != manifold.name:
            raise ConfigError(
                f"[grid] input file is on {man.name}, config says {manifold.name}")
        return values, False
    kind = grid["phantom"]
    if kind not in PHANTOM_KINDS:
        raise ConfigError(
            f"[grid] unknown phantom {kind!r}, choose from {PHANTOM_KINDS}")
    dims = _get(grid, "grid", "dims", required=True)
    if isinstance(dims, int):
        dims = [dims]
    if (not isinstance(dims, list) or not dims
            or not all(isinstance(d, int) and d > 0 for d in dims)):
        raise ConfigError(f"[grid] dims must be positive integers, got {dims!r}")
    try:
        return make_phantom(kind, tuple(dims), manifold), True
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None


def build_noise(doc):
    """Noise spec from the [noise] section, or None when absent."""
    if "noise" not in doc:
        return None
    table = doc["noise"]
    model = _get(table, "noise", "model", required=True)
    if model not in NOISE_MODELS:
        raise ConfigError(
            f"[noise] unknown model {model!r}, choose from {sorted(NOISE_MODELS)}")
    key = _LEVEL_KEYS[model]
    level = _get(table, "noise", key, required=True)
    seed = _get(table, "noise", "seed", default=0)
    try:
        return NOISE_MODELS[model](float(level), seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[noise] {exc}") from None


def build_plan(doc, shape):
    table = _require(doc, "transform")
    levels = _get(table, "transform", "levels", required=True)
    mask = _get(table, "transform", "mask", default="dd3")
    boundary = _get(table, "transform", "boundary", default=None)
    try:
        return make_plan(shape, levels, mask, boundary)
    except ValueError as exc:
        raise ConfigError(f"[transform] {exc}") from None


def build_regularizer(doc, manifold, plan):
    table = _require(doc, "regularizer")
    try:
        params = RegParams(
            lam1=float(_get(table, "regularizer", "lam1", required=True)),
            lam2=float(_get(table, "regularizer", "lam2", default=0.0)),
            q=float(_get(table, "regularizer", "q", default=1.0)),
            alpha=float(_get(table, "regularizer", "alpha", default=1.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[regularizer] {exc}") from None
    return WaveletRegularizer(manifold, plan, params)


def build_operator(doc):
    """Imaging operator from the [data] section; Identity when absent."""
    table = doc.get("data", {})
    kind = _get(table, "data", "operator", default="identity")
    if kind == "identity":
        return Identity()
    if kind == "kernel":
        sigma = float(_get(table, "data", "sigma", default=2.0))
        window = int(_get(table, "data", "window", default=13))
        boundary = _get(table, "data", "kernel_boundary", default="truncate")
        try:
            return MeanKernel(gaussian_kernel(sigma, window), boundary)
        except ValueError as exc:
            raise ConfigError(f"[data] {exc}") from None
    if kind == "inpaint":
        raise ConfigError(
            "[data] inpainting masks are not wired to the command line; "
            "build an InpaintMask DataTerm through the library instead")
    raise ConfigError(f"[data] unknown operator {kind!r}")


def build_dataterm(doc, manifold, operator, observed):
    table = doc.get("data", {})
    p = float(_get(table, "data", "p", default=2.0))
    try:
        return DataTerm(manifold, operator, observed, p=p)
    except ValueError as exc:
        raise ConfigError(f"[data] {exc}") from None


def build_solver_config(doc):
    table = doc.get("solver", {})
    kwargs = {}
    for key in ("scheme", "iterations", "mu0", "cooling", "tau",
                "sweep_order", "parallel_batches"):
        if key in table:
            kwargs[key] = table[key]
    for key in ("mu0", "tau"):
        if key in kwargs:
            kwargs[key] = float(kwargs[key])
    return SolverConfig(**kwargs)


def apply_overrides(doc, seed=None, out=None, threads=None):
    """Fold command-line overrides into a copy of the document.

    Returns the resolved copy; this is what the config echo records.
    """
    doc = copy.deepcopy(doc)
    if seed is not None:
        if "noise" in doc:
            doc["noise"]["seed"] = int(seed)
        # without a noise section there is nothing to seed; the caller
        # warns so a rerun script does not silently diverge
    if out is not None:
        doc.setdefault("output", {})["dir"] = str(out)
    if threads is not None:
        doc.setdefault("solver", {})["threads"] = int(threads)
    return doc
