"""Command-line pipeline: load a connection, build the chart, verify, write reports.

Exit status 0 when every check passes, 1 when a check fails, 2 when the
input cannot be loaded or the construction breaks down.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fixtures
from .connection import ConnectionField, connection_from_spec
from .errors import PresemiError, SpecError
from .geodesic import (DEFAULT_LABEL_COUNT, DEFAULT_TAU, HypersurfaceSeed, TransformGrid,
                       default_label_box, label_axes, shoot_congruence, uniform_tau)
from .rectify import PicardConfig, contraction_ratios, picard_solve
from .verify import (Tolerances, dof_report, equiaffine_check, route_agreement, verify_grid)

ROUTES = ("shoot", "picard", "both")


@dataclass
class RunConfig:
    input: str
    seed: Optional[str] = None
    route: str = "shoot"
    tau_span: tuple = (DEFAULT_TAU[0], DEFAULT_TAU[1])
    tau_count: int = DEFAULT_TAU[2]
    label_span: Optional[tuple] = None
    label_count: int = DEFAULT_LABEL_COUNT
    tolerances: Tolerances = field(default_factory=Tolerances)
    out: Optional[str] = None
    emit_plots: bool = False

    def __post_init__(self):
        if self.route not in ROUTES:
            raise SpecError(f"route must be one of {', '.join(ROUTES)}", route=self.route)


@dataclass
class RunResult:
    status: int
    report: dict
    grids: dict = field(default_factory=dict)
    transformed: dict = field(default_factory=dict)


# ---------------------------------------------------------------- loading

def load_connection(source: str) -> ConnectionField:
    """A fixture name or a path to a JSON connection document."""
    if source in fixtures.NAMES:
        return fixtures.builtin(source).connection
    path = Path(source)
    if not path.is_file():
        raise SpecError(f"{source!r} is neither a fixture name nor a readable file",
                        fixtures=list(fixtures.NAMES))
    return connection_from_spec(path.read_text())


def load_seed(source: Optional[str], conn: ConnectionField, tilde_lo, tilde_hi) -> HypersurfaceSeed:
    """Seed from inline JSON or a JSON file; None means the default seed."""
    if source is None:
        seed = HypersurfaceSeed.default(conn)
        return HypersurfaceSeed(seed.n, seed.phi, seed.Lambda, np.asarray(tilde_lo, float),
                                np.asarray(tilde_hi, float), seed.description)
    text = source
    if not source.lstrip().startswith("{"):
        path = Path(source)
        if not path.is_file():
            raise SpecError(f"seed {source!r} is neither inline JSON nor a readable file")
        text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"seed is not valid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict) or "phi" not in doc or "Lambda" not in doc:
        raise SpecError('seed needs "phi" and "Lambda" entries')
    lam = doc["Lambda"]
    if not isinstance(lam, list) or not all(isinstance(s, str) for s in lam) \
            or not isinstance(doc["phi"], str):
        raise SpecError('seed "phi" must be a string and "Lambda" a list of strings')
    return HypersurfaceSeed.from_expressions(conn.n, doc["phi"], lam, tilde_lo, tilde_hi)


def build_grids(conn: ConnectionField, config: RunConfig):
    tau = uniform_tau(config.tau_span[0], config.tau_span[1], config.tau_count)
    if config.label_span is None:
        lo, hi = default_label_box(conn)
    else:
        lo = np.full(conn.n - 1, float(config.label_span[0]))
        hi = np.full(conn.n - 1, float(config.label_span[1]))
    return tau, label_axes(lo, hi, config.label_count), lo, hi


# -------------------------------------------------------------- pipeline

def _error_entry(exc: PresemiError) -> dict:
    return {"module": exc.module, "type": type(exc).__name__, "message": str(exc),
            "context": _plain(exc.context)}


def _plain(obj):
    """Convert numpy scalars/arrays inside ``obj`` into plain Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj if obj is None or isinstance(obj, str) else str(obj)


def _structure(conn: ConnectionField) -> dict:
    symmetric = bool(conn.declared_symmetric)
    entry = {"symmetric": symmetric}
    if symmetric:
        flag, residual = equiaffine_check(conn)
        entry["equiaffine"] = {"flag": flag, "residual": residual}
    else:
        entry["equiaffine"] = None
    dof = dof_report(conn.n, torsion_free=symmetric,
                     equiaffine=bool(symmetric and entry["equiaffine"]["flag"]))
    entry["dof"] = {
        "n": dof.n,
        "general": dof.general_count,
        "torsion_free": dof.torsion_free_count,
        "presemigeodesic_general": dof.presemigeodesic_general,
        "presemigeodesic_torsion_free": dof.presemigeodesic_torsion_free,
        "equiaffine_reduction": dof.equiaffine_reduction,
        "applicable": dof.applicable,
    }
    return entry


def run_pipeline(config: RunConfig) -> RunResult:
    """Load, construct, verify and (if ``config.out`` is set) write the outputs."""
    report = {
        "input": config.input,
        "route": config.route,
        "grid": {"tau_span": [float(x) for x in config.tau_span], "tau_count": int(config.tau_count),
                 "label_span": None if config.label_span is None else [float(x) for x in config.label_span],
                 "label_count": int(config.label_count)},
        "tolerances": {k: float(v) for k, v in vars(config.tolerances).items()},
    }
    grids, transformed = {}, {}
    try:
        conn = load_connection(config.input)
        report["n"] = conn.n
        tau, labels, lo, hi = build_grids(conn, config)
        seed = load_seed(config.seed, conn, lo, hi)
        report["seed"] = seed.description
        if config.route in ("shoot", "both"):
            grids["shoot"] = shoot_congruence(conn, seed, tau, labels)
        if config.route in ("picard", "both"):
            grids["picard"] = picard_solve(conn, PicardConfig.from_seed(seed, tau, labels))
        results = {}
        for name, grid in grids.items():
            results[name], transformed[name] = verify_grid(conn, grid, config.tolerances)
        if "picard" in grids:
            hist = grids["picard"].history
            results["picard"]["iteration"] = {
                "iterations": len(hist),
                "final_diff": hist[-1],
                "max_ratio_from_3": max((r for s, r in contraction_ratios(hist).items() if s >= 3),
                                        default=None),
            }
        report["routes"] = results
        passes = [c["pass"] for r in results.values() for c in r["checks"].values()]
        if config.route == "both":
            agreement = route_agreement(grids["shoot"], grids["picard"])
            limit = max(config.tolerances.route_agreement, 10 * PicardConfig.convergence_tol)
            report["route_agreement"] = {"value": agreement, "tolerance": limit,
                                         "pass": bool(agreement < limit)}
            passes.append(report["route_agreement"]["pass"])
        report["structure"] = _structure(conn)
        report["pass"] = bool(all(passes))
        status = 0 if report["pass"] else 1
    except (PresemiError, ValueError) as exc:
        if not isinstance(exc, PresemiError):
            exc = SpecError(str(exc))
        report["pass"] = False
        report["error"] = _error_entry(exc)
        status = 2
    report["exit_status"] = status
    result = RunResult(status, report, grids, transformed)
    if config.out is not None:
        write_outputs(result, Path(config.out), config.emit_plots)
    return result


# ---------------------------------------------------------------- output

def _num(x) -> str:
    """17 significant digits; bare nan/inf tokens for CSV."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def dumps(obj, indent: int = 0) -> str:
    """Deterministic JSON: insertion order, floats at 17 digits, non-finite as null."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return "%.17g" % obj if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = ",\n".join(f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items())
        return "{\n" + body + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(dumps(v, indent + 1) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _node_rows(grid: TransformGrid):
    """(multi-index, tau value, label values) for every node in C order."""
    for idx in np.ndindex(grid.node_shape):
        yield idx, grid.tau[idx[0]], [grid.labels[a][idx[a + 1]] for a in range(grid.n - 1)]


def _label_names(n):
    return [f"label{a}" for a in range(2, n + 1)]


def write_transform_csv(path: Path, grid: TransformGrid):
    n = grid.n
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", *_label_names(n), *[f"f{h}" for h in range(1, n + 1)], "det_jac", "regular"])
        for idx, t, lab in _node_rows(grid):
            w.writerow([_num(t), *map(_num, lab), *map(_num, grid.f[idx]), _num(grid.det[idx]),
                        int(grid.regular[idx])])


def write_gamma_csv(path: Path, grid: TransformGrid, tc):
    n = grid.n
    comps = [(h, i, j) for h in range(n) for i in range(n) for j in range(n)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "tau", *_label_names(n),
                    *[f"g{h + 1}_{i + 1}{j + 1}" for h, i, j in comps], "residual"])
        for node, (idx, t, lab) in enumerate(_node_rows(grid)):
            g = tc.gamma_prime[idx]
            w.writerow([node, _num(t), *map(_num, lab), *[_num(g[c]) for c in comps],
                        _num(tc.residual_gamma11[idx])])


def write_history_csv(path: Path, history):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "sup_diff"])
        for s, d in enumerate(history, start=1):
            w.writerow([s, _num(d)])


def write_plot_data(out: Path, result: RunResult):
    with (out / "geodesics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        first = next(iter(result.grids.values()))
        n = first.n
        w.writerow(["route", "line", *_label_names(n), "tau", *[f"x{h}" for h in range(1, n + 1)]])
        for name, grid in result.grids.items():
            for line, lidx in enumerate(np.ndindex(grid.node_shape[1:])):
                lab = [grid.labels[a][lidx[a]] for a in range(n - 1)]
                for k, t in enumerate(grid.tau):
                    if grid.regular[(k,) + lidx]:
                        w.writerow([name, line, *map(_num, lab), _num(t),
                                    *map(_num, grid.f[(k,) + lidx])])
    with (out / "residual_heatmap.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        first = next(iter(result.grids.values()))
        w.writerow(["route", "tau", *_label_names(first.n), "residual_gamma11"])
        for name, grid in result.grids.items():
            tc = result.transformed[name]
            for idx, t, lab in _node_rows(grid):
                w.writerow([name, _num(t), *map(_num, lab), _num(tc.residual_gamma11[idx])])


def write_outputs(result: RunResult, out: Path, emit_plots: bool = False):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps(result.report) + "\n")
    if not result.transformed:
        return
    primary = "shoot" if "shoot" in result.grids else "picard"
    write_transform_csv(out / "transform_grid.csv", result.grids[primary])
    if primary == "shoot" and "picard" in result.grids:
        write_transform_csv(out / "transform_grid_picard.csv", result.grids["picard"])
    write_gamma_csv(out / "gamma_prime.csv", result.grids[primary], result.transformed[primary])
    if "picard" in result.grids:
        write_history_csv(out / "picard_history.csv", result.grids["picard"].history)
    if emit_plots:
        write_plot_data(out, result)


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="presemi",
        description="Construct pre-semigeodesic coordinates for an affine connection and verify them.")
    p.add_argument("--input", required=True,
                   help=f"fixture name ({', '.join(fixtures.NAMES)}) or path to a JSON connection document")
    p.add_argument("--seed", help='seed as inline JSON or a file: {"phi": "...", "Lambda": ["...", ...]}')
    p.add_argument("--route", choices=ROUTES, default="shoot")
    p.add_argument("--tau-span", nargs=2, type=float, metavar=("A", "B"),
                   default=[DEFAULT_TAU[0], DEFAULT_TAU[1]])
    p.add_argument("--tau-count", type=int, default=DEFAULT_TAU[2])
    p.add_argument("--label-span", nargs=2, type=float, metavar=("A", "B"),
                   help="label range for every label axis (default: domain shrunk by 10%% per side)")
    p.add_argument("--label-count", type=int, default=DEFAULT_LABEL_COUNT)
    p.add_argument("--tol-gamma11", type=float, default=Tolerances.gamma11_max,
                   help="pass bound on max |Gamma'^h_11|")
    p.add_argument("--out", help="output directory (default: no files, summary only)")
    p.add_argument("--emit-plots", action="store_true",
                   help="also write geodesics.csv and residual_heatmap.csv")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    tol = Tolerances(gamma11_max=args.tol_gamma11)
    try:
        config = RunConfig(args.input, args.seed, args.route, tuple(args.tau_span), args.tau_count,
                           None if args.label_span is None else tuple(args.label_span),
                           args.label_count, tol, args.out, args.emit_plots)
    except PresemiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_pipeline(config)
    rep = result.report
    if result.status == 2:
        err = rep["error"]
        print(f"error [{err['module']}] {err['message']}", file=sys.stderr)
        return 2
    for name, r in rep["routes"].items():
        for check, c in r["checks"].items():
            mark = "ok" if c["pass"] else "FAIL"
            print(f"{name:7s} {check:22s} {c['value']:.3e} < {c['tolerance']:.1e}  {mark}")
    if "route_agreement" in rep:
        c = rep["route_agreement"]
        print(f"both    route_agreement        {c['value']:.3e} < {c['tolerance']:.1e}  "
              f"{'ok' if c['pass'] else 'FAIL'}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
