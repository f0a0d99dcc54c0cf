"""Command-line front end: config in, deterministic CSV/JSON artifacts out.

Subcommands cover the full pipeline: bulk density, support, outlier
roots, eigenvector alignments, Monte Carlo simulation, and the
prediction-vs-simulation comparison, plus design validation and the
large-signal expansion table.  Every command writes a manifest listing
each emitted file with its checksum; outputs carry no timestamps, so a
rerun with the same config and seed is byte-identical.

Exit codes: 0 success, 2 config error, 3 solver non-convergence,
4 internal inconsistency.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (
    bias_expansion,
    check_alias,
    check_bias,
    check_eigenvector_bias,
    compute_c,
    eigenvector_bias_expansion,
)
from .configio import load_config
from .errors import (
    ConfigError,
    InconsistencyError,
    ManovaSpecError,
    MultiplicityError,
    NonConvergenceError,
    SingularSystemError,
)
from .fixed_point import ContinuationTrack, build_problem
from .eigenvectors import predict_alignment
from .model import validate_manova
from .montecarlo import SimulationConfig, run_experiment
from .outliers import predict_outliers
from .spectrum import default_density_grid, density_on_grid, detect_support

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INTERNAL = 4


# ---------------------------------------------------------------------------
# deterministic file emission


def _fmt(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, schema, header, rows):
    with Path(path).open("w", newline="\n") as fh:
        fh.write(f"# schema: manovaspec.{schema}.v1\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path, schema, payload):
    body = {"schema": f"manovaspec.{schema}.v1", **payload}
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


class Emitter:
    """Collects output files and finishes with a checksummed manifest."""

    def __init__(self, out_dir, command, config, flags, dry_run):
        self.out = Path(out_dir)
        self.command = command
        self.config = config
        self.flags = flags
        self.dry_run = dry_run
        self.files = []
        self.planned = []

    def path(self, name):
        return self.out / name

    def csv(self, name, schema, header, rows):
        self.planned.append(name)
        if self.dry_run:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        _write_csv(self.path(name), schema, header, rows)
        self.files.append(name)

    def json(self, name, schema, payload):
        self.planned.append(name)
        if self.dry_run:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        _write_json(self.path(name), schema, _jsonable(payload))
        self.files.append(name)

    def finish(self):
        manifest = {
            "package_version": __version__,
            "command": self.command,
            "resolved_config": _jsonable(self.config.raw),
            "flags": _jsonable(self.flags),
            "outputs": [],
        }
        if self.dry_run:
            manifest["planned_outputs"] = self.planned + ["manifest.json"]
            print(json.dumps({"schema": "manovaspec.manifest.v1", **manifest},
                             indent=2, sort_keys=True))
            return
        for name in self.files:
            blob = self.path(name).read_bytes()
            manifest["outputs"].append({
                "path": name,
                "sha256": hashlib.sha256(blob).hexdigest(),
                "bytes": len(blob),
            })
        manifest["outputs"].append({"path": "manifest.json"})
        _write_json(self.path("manifest.json"), "manifest", manifest)
        self.files.append("manifest.json")


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _density_grid(problem, args):
    if args.grid_min is not None and args.grid_max is not None:
        return np.arange(args.grid_min, args.grid_max + args.grid_step, args.grid_step)
    return default_density_grid(problem, step=args.grid_step)


def _flags(args):
    keep = ("grid_min", "grid_max", "grid_step", "epsilon", "delta", "seed",
            "reps", "format", "threads")
    return {k: getattr(args, k) for k in keep if hasattr(args, k)}


def _predictions(cfg, args):
    problem = build_problem(cfg.design, cfg.noise)
    grid = _density_grid(problem, args)
    sd = density_on_grid(problem, grid, epsilon=args.epsilon)
    support = detect_support(sd, delta=args.delta)
    return problem, grid, sd, support


def _roots_and_alignments(cfg, args, problem, support):
    roots, scan = predict_outliers(problem, cfg.signal, support, delta=args.delta)
    track = ContinuationTrack(
        grid=np.array([v.lam for v in scan if v is not None]),
        states=[v.state for v in scan if v is not None],
        epsilon=0.0, lipschitz=float("nan"),
    )
    alignments = [
        predict_alignment(r, problem, cfg.signal, track, other_roots=roots.roots,
                          delta=args.delta, support=support)
        for r in roots.simple_roots()
    ]
    return roots, scan, alignments


def _support_rows(support):
    return [(lo, hi) for lo, hi in support.intervals]


# ---------------------------------------------------------------------------
# subcommands


def cmd_density(cfg, args, em):
    problem, grid, sd, support = _predictions(cfg, args)
    if em.dry_run:
        em.csv("density.csv", "density", ("lambda", "density"), [])
        em.csv("support.csv", "support", ("lo", "hi"), [])
        return EXIT_OK
    em.csv("density.csv", "density", ("lambda", "density"),
           [(lam, None if miss else d)
            for lam, d, miss in zip(sd.grid, sd.density, sd.missing)])
    em.csv("support.csv", "support", ("lo", "hi"), _support_rows(support))
    em.json("density_meta.json", "density_meta", {
        "epsilon": sd.epsilon,
        "mass_estimate": sd.mass_estimate,
        "mass_deficit": sd.mass_deficit,
        "max_clamp": sd.max_clamp,
        "missing_points": int(np.count_nonzero(sd.missing)),
        "support_threshold": 1e-5,
        "support_min_gap": 3,
        "delta": args.delta,
    })
    if np.any(sd.missing):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_outliers(cfg, args, em):
    if em.dry_run:
        em.csv("det_scan.csv", "det_scan", ("lambda", "detT", "smallest_singular"), [])
        em.csv("roots.csv", "roots", ("lambda", "multiplicity", "flag"), [])
        return EXIT_OK
    problem, grid, sd, support = _predictions(cfg, args)
    roots, scan, _ = _roots_and_alignments(cfg, args, problem, support)
    em.csv("det_scan.csv", "det_scan", ("lambda", "detT", "smallest_singular"),
           [(v.lam, v.det, v.smallest_singular) for v in scan if v is not None])
    em.csv("roots.csv", "roots", ("lambda", "multiplicity", "flag"),
           [(r.lam, r.multiplicity, r.flag) for r in roots.roots])
    em.csv("support.csv", "support", ("lo", "hi"), _support_rows(support))
    return EXIT_OK


def cmd_align(cfg, args, em):
    if em.dry_run:
        em.csv("alignments.csv", "alignments",
               ("lambda", "alpha", "u", "projection", "separation_warning"), [])
        em.json("alignments.json", "alignments", {"alignments": []})
        return EXIT_OK
    problem, grid, sd, support = _predictions(cfg, args)
    roots, scan, alignments = _roots_and_alignments(cfg, args, problem, support)
    em.csv("alignments.csv", "alignments",
           ("lambda", "alpha", "u", "projection", "separation_warning"),
           [(al.lam, al.alpha,
             " ".join(repr(float(v)) for v in al.u),
             " ".join(repr(float(v)) for v in al.predicted_projection),
             int(al.separation_warning))
            for al in alignments])
    em.json("alignments.json", "alignments", {
        "row_index": [list(rc) for rc in cfg.signal.row_index],
        "alignments": [{
            "lambda": al.lam,
            "alpha": al.alpha,
            "u": al.u,
            "projection": al.predicted_projection,
            "separation_warning": al.separation_warning,
        } for al in alignments],
    })
    return EXIT_OK


def _run_mc(cfg, args):
    problem, grid, sd, support = _predictions(cfg, args)
    roots, scan, alignments = _roots_and_alignments(cfg, args, problem, support)
    sim = SimulationConfig(
        design=cfg.design, noise=cfg.noise, signal=cfg.signal,
        replicates=args.reps or cfg.replicates,
        seed=args.seed if args.seed is not None else cfg.seed,
        xi=cfg.xi, delta=args.delta,
    )
    summary, report = run_experiment(
        sim, support=support, roots=roots, alignments=alignments, threads=args.threads
    )
    return problem, grid, sd, support, roots, alignments, sim, summary, report


def _emit_simulation(em, grid, summary):
    rows = []
    for rep, arr in enumerate(summary.outliers):
        for rank, lam in enumerate(arr, start=1):
            rows.append((rep, rank, lam))
    em.csv("empirical_outliers.csv", "empirical_outliers",
           ("replicate", "rank", "lambda"), rows)
    lo, hi = float(grid[0]), float(grid[-1])
    width = max((hi - lo) / 200.0, 1e-6)
    edges = np.arange(lo, hi + width, width)
    counts, edges = np.histogram(summary.eigenvalues.ravel(), bins=edges)
    em.csv("histogram.csv", "histogram", ("bin_lo", "bin_hi", "count"),
           [(edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts)])


def cmd_simulate(cfg, args, em):
    if em.dry_run:
        em.csv("empirical_outliers.csv", "empirical_outliers",
               ("replicate", "rank", "lambda"), [])
        em.csv("histogram.csv", "histogram", ("bin_lo", "bin_hi", "count"), [])
        em.json("summary.json", "summary", {})
        return EXIT_OK
    problem, grid, sd, support, roots, alignments, sim, summary, report = _run_mc(cfg, args)
    _emit_simulation(em, grid, summary)
    em.json("summary.json", "summary", {
        "replicates": sim.replicates,
        "seed": sim.seed,
        "delta": sim.delta,
        "outlier_count_mean": float(np.mean(summary.outlier_counts)),
        "matched_mean": summary.matched_mean,
        "matched_se": summary.matched_se,
        "predicted": [r.lam for r in roots.roots],
    })
    return EXIT_OK


def cmd_compare(cfg, args, em):
    if em.dry_run:
        em.csv("empirical_outliers.csv", "empirical_outliers",
               ("replicate", "rank", "lambda"), [])
        em.csv("histogram.csv", "histogram", ("bin_lo", "bin_hi", "count"), [])
        em.csv("density.csv", "density", ("lambda", "density"), [])
        em.json("comparison.json", "comparison", {})
        return EXIT_OK
    problem, grid, sd, support, roots, alignments, sim, summary, report = _run_mc(cfg, args)
    _emit_simulation(em, grid, summary)
    em.csv("density.csv", "density", ("lambda", "density"),
           [(lam, None if miss else d)
            for lam, d, miss in zip(sd.grid, sd.density, sd.missing)])
    em.csv("support.csv", "support", ("lo", "hi"), _support_rows(support))
    em.json("comparison.json", "comparison", {
        "replicates": report.replicates,
        "predicted": report.predicted,
        "empirical_mean": report.empirical_mean,
        "empirical_se": report.empirical_se,
        "rel_gap": report.rel_gap,
        "predicted_projections": report.predicted_projections,
        "projection_mean": report.projection_mean,
        "projection_se": report.projection_se,
        "mean_ordered_dist": report.mean_ordered_dist,
        "mean_ordered_dist_matched": report.mean_ordered_dist_matched,
        "ordered_dist_of_means": report.ordered_dist_of_means,
        "match_fraction": report.match_fraction,
        "root_match_rate": report.root_match_rate,
        "excess_outlier_fraction": report.excess_outlier_fraction,
    })
    return EXIT_OK


def cmd_validate(cfg, args, em):
    report = validate_manova(cfg.design, cfg.target)
    payload = {
        "target": report.target,
        "values": report.values,
        "passed_per_component": [bool(v) for v in report.passed_per_component],
        "bx_residual": report.bx_residual,
        "tolerance": report.tol,
        "passed": report.passed,
    }
    em.json("validation.json", "validation", payload)
    if not em.dry_run:
        status = "PASS" if report.passed else "FAIL"
        print(f"validate: {status}  values={np.array2string(report.values, precision=12)}"
              + (f"  bx_residual={report.bx_residual:.3e}" if report.bx_residual is not None else ""))
    return EXIT_OK


def cmd_expand(cfg, args, em):
    if em.dry_run:
        em.csv("expansion_check.csv", "expansion_check",
               ("quantity", "expansion", "exact", "rel_gap"), [])
        return EXIT_OK
    c = compute_c(cfg.design, cfg.noise)
    strengths = cfg.signal.spike_strengths
    comps = [rc[0] for rc in cfg.signal.row_index]
    try:
        i1 = comps.index(1)
        i2 = comps.index(2)
    except ValueError as exc:
        raise ConfigError(
            "expand needs at least one spike in each of components 1 and 2"
        ) from exc
    G = cfg.signal.stacked
    mu1, mu2 = float(strengths[i1]), float(strengths[i2])
    v1 = G[i1] / np.sqrt(mu1) if mu1 > 0 else np.zeros(cfg.design.p)
    v2 = G[i2] / np.sqrt(mu2)
    rho = float(v1 @ v2)
    rows = [("c1", c[0], c[0], 0.0), ("c2", c[1], c[1], 0.0)]
    if mu1 > 0:
        chk = check_bias(cfg.design, cfg.noise, v1, v2, mu1, mu2, delta=args.delta)
        rows.append(("largest_root", chk.expansion, chk.exact, chk.rel_gap))
        chk = check_eigenvector_bias(cfg.design, cfg.noise, v1, v2, mu1, mu2, delta=args.delta)
        rows.append(("eigenvector_bias", chk.expansion, chk.exact, chk.rel_gap))
    else:
        chk = check_alias(cfg.design, cfg.noise, v2, mu2, delta=args.delta)
        rows.append(("alias_magnitude", chk.expansion, chk.exact, chk.rel_gap))
    em.csv("expansion_check.csv", "expansion_check",
           ("quantity", "expansion", "exact", "rel_gap"), rows)
    return EXIT_OK


COMMANDS = {
    "density": cmd_density,
    "outliers": cmd_outliers,
    "align": cmd_align,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "validate": cmd_validate,
    "expand": cmd_expand,
}


def _parser():
    ap = argparse.ArgumentParser(
        prog="manovaspec",
        description="Spectral predictions and Monte Carlo checks for MANOVA "
                    "variance-component estimators.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default="out", help="output directory (default: ./out)")
        sp.add_argument("--grid-min", type=float, default=None, dest="grid_min")
        sp.add_argument("--grid-max", type=float, default=None, dest="grid_max")
        sp.add_argument("--grid-step", type=float, default=0.01, dest="grid_step")
        sp.add_argument("--epsilon", type=float, default=1e-8,
                        help="imaginary offset for the density (default 1e-8)")
        sp.add_argument("--delta", type=float, default=0.1,
                        help="support padding for outlier decisions (default 0.1)")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--reps", type=int, default=None, help="override replicate count")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--dry-run", action="store_true", dest="dry_run",
                        help="print the resolved plan without computing")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    em = Emitter(args.out, args.command, cfg, _flags(args), args.dry_run)
    try:
        code = COMMANDS[args.command](cfg, args, em)
        em.finish()
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, SingularSystemError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InconsistencyError, MultiplicityError) as exc:
        print(f"internal inconsistency: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ManovaSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
