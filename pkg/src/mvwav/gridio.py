"""Reading and writing grids, pyramids, and solver traces.

Grid files are UTF-8 CSV: a header comment ``# manifold=<tag>
dims=<d1,d2,...>`` followed by one site per row in row-major order.
Values are printed with %.17g, so a save/load cycle is bit-exact.
Column counts follow the manifold: one angle for s1, three unit-vector
components for s2, six upper-triangle entries (xx,xy,xz,yy,yz,zz) for
spd3, and n components for euclidean<n>.

Pyramids are stored as JSON (shortest round-trip float repr), traces
as CSV with a column-naming header comment.
"""

import json

import numpy as np

from .errors import GridFormatError, InvalidPointError
from .manifolds import get_manifold
from .multiscale import Pyramid

_FMT = "%.17g"


def save_grid(path, manifold, values):
    """Write a grid of manifold values as headered CSV."""
    values = manifold.check_point(np.asarray(values, dtype=float))
    dims = ",".join(str(n) for n in values.shape[:-1])
    flat = values.reshape(-1, manifold.point_dim)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# manifold={manifold.name} dims={dims}\n")
        np.savetxt(fh, flat, fmt=_FMT, delimiter=",")


def _parse_header(line, path):
    parts = line[1:].split()
    fields = {}
    for part in parts:
        if "=" not in part:
            raise GridFormatError(f"{path}: malformed header field {part!r}")
        key, _, val = part.partition("=")
        fields[key] = val
    if "manifold" not in fields or "dims" not in fields:
        raise GridFormatError(
            f"{path}: header must carry manifold=<tag> and dims=<d1,d2,...>, "
            f"got {line.strip()!r}")
    try:
        dims = tuple(int(d) for d in fields["dims"].split(","))
    except ValueError:
        raise GridFormatError(
            f"{path}: dims must be comma-separated integers, "
            f"got {fields['dims']!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise GridFormatError(f"{path}: bad grid extents {dims}")
    return fields["manifold"], dims


def load_grid(path):
    """Read a headered grid CSV; returns (manifold, values).

    Raises
    ------
    GridFormatError
        On a missing or malformed header, a wrong column count or a
        non-numeric field (naming the file line), a row count that does
        not match the header dims, or rows that are not valid points of
        the declared manifold (naming the first bad row).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines or not lines[0].startswith("#"):
        raise GridFormatError(f"{path}: missing '# manifold=... dims=...' header")
    tag, dims = _parse_header(lines[0], path)
    try:
        manifold = get_manifold(tag)
    except InvalidPointError as exc:
        raise GridFormatError(f"{path}: {exc}") from None

    cd = manifold.point_dim
    rows = []
    row_lines = []
    for lineno, line in enumerate(lines[1:], start=2):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split(",")
        if len(parts) != cd:
            raise GridFormatError(
                f"{path}, line {lineno}: expected {cd} columns for "
                f"{manifold.name}, got {len(parts)}")
        try:
            rows.append([float(x) for x in parts])
        except ValueError:
            raise GridFormatError(
                f"{path}, line {lineno}: non-numeric field in {text!r}") from None
        row_lines.append(lineno)

    expected = int(np.prod(dims))
    if len(rows) != expected:
        raise GridFormatError(
            f"{path}: header dims {dims} promise {expected} rows, found {len(rows)}")
    values = np.asarray(rows, dtype=float)
    try:
        manifold.check_point(values)
    except InvalidPointError as exc:
        # locate the first offending row for the diagnostic
        for k in range(values.shape[0]):
            try:
                manifold.check_point(values[k])
            except InvalidPointError:
                raise GridFormatError(
                    f"{path}, line {row_lines[k]} (site {k}): {exc}") from None
        raise GridFormatError(f"{path}: {exc}") from None
    return manifold, values.reshape(dims + (cd,))


def save_pyramid(path, pyramid):
    """Write a multiscale decomposition as JSON."""
    doc = {
        "manifold": pyramid.manifold,
        "shape": list(pyramid.shape),
        "levels": pyramid.levels,
        "mask": pyramid.mask,
        "boundary": pyramid.boundary,
        "base": np.asarray(pyramid.base, dtype=float).tolist(),
        "details": [np.asarray(d, dtype=float).tolist() for d in pyramid.details],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_pyramid(path):
    """Read a pyramid JSON written by :func:`save_pyramid`."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GridFormatError(f"{path}: not valid JSON ({exc})") from None
    needed = ("manifold", "shape", "levels", "mask", "boundary", "base", "details")
    missing = [k for k in needed if k not in doc]
    if missing:
        raise GridFormatError(f"{path}: pyramid JSON lacks fields {missing}")
    details = [np.asarray(d, dtype=float) for d in doc["details"]]
    if len(details) != int(doc["levels"]):
        raise GridFormatError(
            f"{path}: levels={doc['levels']} but {len(details)} detail blocks")
    return Pyramid(str(doc["manifold"]), tuple(int(n) for n in doc["shape"]),
                   int(doc["levels"]), str(doc["mask"]), str(doc["boundary"]),
                   np.asarray(doc["base"], dtype=float), details)


def save_trace(path, trace):
    """Write the objective trace as CSV (iteration, data, penalty, total)."""
    trace = np.asarray(trace, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# columns=iteration,data,penalty,total\n")
        np.savetxt(fh, trace, fmt=_FMT, delimiter=",")


def save_magnitudes(path, level, mags):
    """Write one level's detail-coefficient magnitudes as headered CSV."""
    mags = np.asarray(mags, dtype=float)
    dims = ",".join(str(n) for n in mags.shape)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# level={int(level)} dims={dims}\n")
        np.savetxt(fh, mags.reshape(-1, 1), fmt=_FMT, delimiter=",")
