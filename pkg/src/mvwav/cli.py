"""Command-line front end: transforms, restoration jobs, noise, metrics.

Every command reads one TOML job file (see :mod:`mvwav.config`) and
writes its outputs into the configured directory, together with a
``config_used.toml`` echo of the fully resolved configuration, so any
run can be reproduced exactly from its output directory alone.

Exit codes: 0 on success, 2 for configuration and input errors, 3 when
the solver aborts on non-finite values.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import (apply_overrides, build_dataterm, build_input_grid,
                     build_manifold, build_noise, build_operator, build_plan,
                     build_regularizer, build_solver_config, dump_config,
                     load_config)
from .dataterm import apply_operator
from .errors import ConfigError, GeometryError
from .gridio import (load_grid, load_pyramid, save_grid, save_magnitudes,
                     save_pyramid, save_trace)
from .manifolds import get_manifold
from .multiscale import forward_transform, inverse_transform
from .solver import Problem, solve
from .synth import apply_noise, delta_snr


def _outdir(doc):
    out = Path(doc.get("output", {}).get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(doc, out):
    dump_config(doc, out / "config_used.toml")


def _write_metrics(out, pairs):
    with open(out / "metrics.txt", "w", encoding="utf-8") as fh:
        for key, val in pairs:
            fh.write(f"{key} = {val!r}\n" if isinstance(val, str)
                     else f"{key} = {val}\n")
    for key, val in pairs:
        print(f"{key} = {val}")


def cmd_transform(doc):
    man = build_manifold(doc)
    values, _ = build_input_grid(doc, man)
    plan = build_plan(doc, values.shape[:-1])
    pyramid = forward_transform(man, values, plan=plan)
    out = _outdir(doc)
    save_grid(out / "input.csv", man, values)
    save_pyramid(out / "pyramid.json", pyramid)
    for level, mags in enumerate(pyramid.detail_norms(), start=1):
        save_magnitudes(out / f"details_l{level}.csv", level, mags)
    _echo(doc, out)
    print(f"wrote pyramid.json and {pyramid.levels} magnitude file(s) to {out}")
    return 0


def cmd_reconstruct(doc):
    grid = doc.get("grid", {})
    if "input" not in grid:
        raise ConfigError("reconstruct needs [grid] input = <pyramid.json path>")
    pyramid = load_pyramid(grid["input"])
    man = get_manifold(pyramid.manifold)
    values = inverse_transform(man, pyramid)
    out = _outdir(doc)
    save_grid(out / "reconstruction.csv", man, values)
    _echo(doc, out)
    print(f"wrote reconstruction.csv ({man.name}, dims "
          f"{'x'.join(str(n) for n in pyramid.shape)}) to {out}")
    return 0


def cmd_noise(doc):
    man = build_manifold(doc)
    truth, synthetic = build_input_grid(doc, man)
    spec = build_noise(doc)
    if spec is None:
        raise ConfigError("the noise command needs a [noise] section")
    observed = apply_noise(man, truth, spec)
    out = _outdir(doc)
    if synthetic:
        save_grid(out / "truth.csv", man, truth)
    save_grid(out / "observed.csv", man, observed)
    _echo(doc, out)
    print(f"wrote observed.csv ({spec.kind}, seed {spec.seed}) to {out}")
    return 0


def _run_restore(doc, command):
    man = build_manifold(doc)
    truth, synthetic = build_input_grid(doc, man)
    operator = build_operator(doc)
    if command == "denoise" and operator.kind != "identity":
        raise ConfigError("denoise uses the identity operator; "
                          "the deconvolve command handles kernels")
    if command == "deconvolve" and operator.kind != "kernel":
        raise ConfigError('deconvolve needs [data] operator = "kernel"')

    clean = apply_operator(man, operator, truth) if operator.kind == "kernel" \
        else truth
    spec = build_noise(doc)
    observed = apply_noise(man, clean, spec) if spec is not None else clean

    plan = build_plan(doc, truth.shape[:-1])
    reg = build_regularizer(doc, man, plan)
    data = build_dataterm(doc, man, operator, observed)
    problem = Problem(data, reg)
    report = solve(problem, build_solver_config(doc), init=observed)

    out = _outdir(doc)
    if synthetic:
        save_grid(out / "truth.csv", man, truth)
    save_grid(out / "observed.csv", man, observed)
    save_grid(out / "result.csv", man, report.values)
    save_trace(out / "trace.csv", report.trace)
    pairs = [("scheme", report.scheme),
             ("iterations", int(report.trace[-1, 0])),
             ("objective_initial", float(report.trace[0, 3])),
             ("objective_final", float(report.trace[-1, 3]))]
    if synthetic:
        gain = delta_snr(man, truth, observed, report.values)
        pairs.append(("delta_snr_db", float(gain)))
    for key, val in sorted(report.flags.items()):
        pairs.append((key, val))
    _write_metrics(out, pairs)
    _echo(doc, out)
    print(f"wall time {report.wall_time:.2f} s; outputs in {out}")
    return 0


def cmd_metrics(doc):
    if "metrics" not in doc:
        raise ConfigError("the metrics command needs a [metrics] section "
                          "with truth, observed, and restored paths")
    table = doc["metrics"]
    grids = {}
    man = None
    for key in ("truth", "observed", "restored"):
        if key not in table:
            raise ConfigError(f"[metrics] needs key {key!r}")
        m, values = load_grid(table[key])
        if man is None:
            man = m
        elif m.name != man.name:
            raise ConfigError(
                f"[metrics] {key} is on {m.name}, expected {man.name}")
        grids[key] = values
    gain = delta_snr(man, grids["truth"], grids["observed"], grids["restored"])
    out = _outdir(doc)
    dev_obs = float(np.mean(man.dist(grids["truth"], grids["observed"])))
    dev_res = float(np.mean(man.dist(grids["truth"], grids["restored"])))
    _write_metrics(out, [("delta_snr_db", float(gain)),
                         ("mean_dist_observed", dev_obs),
                         ("mean_dist_restored", dev_res)])
    _echo(doc, out)
    return 0


_COMMANDS = {
    "transform": cmd_transform,
    "reconstruct": cmd_reconstruct,
    "denoise": lambda doc: _run_restore(doc, "denoise"),
    "deconvolve": lambda doc: _run_restore(doc, "deconvolve"),
    "noise": cmd_noise,
    "metrics": cmd_metrics,
}


def _parser():
    parser = argparse.ArgumentParser(
        prog="mvwav",
        description="Sparse multiscale regularization of manifold-valued "
                    "signals and images.")
    subs = parser.add_subparsers(dest="command", required=True)
    help_lines = {
        "transform": "decompose a grid into a detail pyramid",
        "reconstruct": "rebuild a grid from a pyramid JSON",
        "denoise": "restore a noisy grid (identity data term)",
        "deconvolve": "restore a blurred and noisy grid (kernel data term)",
        "noise": "corrupt a grid with a seeded observation model",
        "metrics": "compare restored grids against a ground truth",
    }
    for name, text in help_lines.items():
        sub = subs.add_parser(name, help=text)
        sub.add_argument("--config", required=True, metavar="PATH",
                         help="TOML job file")
        sub.add_argument("--seed", type=int, default=None,
                         help="override the noise seed")
        sub.add_argument("--out", default=None, metavar="DIR",
                         help="override the output directory")
        sub.add_argument("--threads", type=int, default=None,
                         help="cap worker threads (never changes results)")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError(f"--threads must be >= 1, got {args.threads}")
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                        "MKL_NUM_THREADS"):
                os.environ[var] = str(args.threads)
        doc = load_config(args.config)
        if args.seed is not None and "noise" not in doc:
            print("note: --seed ignored, the job has no [noise] section",
                  file=sys.stderr)
        doc = apply_overrides(doc, seed=args.seed, out=args.out,
                              threads=args.threads)
        return _COMMANDS[args.command](doc)
    except (ConfigError, GeometryError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
