"""Run configuration, result files and the ``scfem`` command line.

Usage::

    scfem run --problem cookie --family leja --tol 5e-2 --out runs/cookie
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import _validation as v
from .adaptive import IterationRecord, RunResult, run
from .mesh import SimplexMesh, write_mesh
from .problems import PROBLEMS, get_problem

log = logging.getLogger(__name__)

DEFAULTS = {"cookie": {"M": 8, "tol": 2e-2}, "fourier": {"M": 4, "tol": 2e-3}}

CSV_COLUMNS = ("iter", "type", "dof", "dof_total_vertices", "mu_bar", "tau_bar", "mu", "tau", "eta",
               "n_colpts", "n_triangles", "wall_ms")
_INT_COLUMNS = {"iter", "dof", "dof_total_vertices", "n_colpts", "n_triangles"}
_RECORD_FIELDS = {"iter": "iteration", "type": "refinement"}


class ConfigError(ValueError):
    """Invalid run configuration; ``violations`` lists every problem found."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class RunConfig:
    problem: str
    family: str
    M: int
    tol: float
    theta_x: float = 0.3
    theta_y: float = 0.3
    vartheta: float = 1.0
    estimate_period: int = 1
    max_iter: int = 200
    out: Optional[str] = None

    def run_kwargs(self) -> dict:
        return dict(family=self.family, tol=self.tol, theta_x=self.theta_x, theta_y=self.theta_y,
                    vartheta=self.vartheta, estimate_period=self.estimate_period, max_iter=self.max_iter)


_KEY_ALIASES = {"m": "M", "theta-x": "theta_x", "theta-y": "theta_y", "estimate-period": "estimate_period",
                "max-iter": "max_iter", "max_iterations": "max_iter", "tolerance": "tol"}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _read_pairs(text: str) -> dict:
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {n}: expected key=value, got {line!r}"])
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[_KEY_ALIASES.get(key, key)] = value
    return pairs


def parse_config(source=None, **overrides) -> RunConfig:
    """Build a validated :class:`RunConfig`.

    ``source`` is a path to (or the text of) a flat ``key=value`` file;
    keyword ``overrides`` take precedence, ``None`` values are ignored.
    ``M`` and ``tol`` default per problem; ``family`` must always be given.
    """
    raw = {}
    if source is not None:
        is_file = isinstance(source, Path) or ("\n" not in source and "=" not in source and Path(source).is_file())
        text = Path(source).read_text() if is_file else str(source)
        raw.update(_read_pairs(text))
    raw.update({_KEY_ALIASES.get(k, k): val for k, val in overrides.items() if val is not None})

    errors = []
    unknown = sorted(set(raw) - set(_TYPES))
    if unknown:
        errors.append(f"unknown keys: {', '.join(unknown)}")
    problem = raw.get("problem")
    if problem not in PROBLEMS:
        errors.append(f"problem must be one of {sorted(PROBLEMS)}, got {problem!r}")
    if "family" not in raw:
        errors.append("family must be given explicitly (leja or cc)")
    elif raw["family"] not in v.FAMILIES:
        errors.append(f"family must be one of {list(v.FAMILIES)}, got {raw['family']!r}")

    values = dict(DEFAULTS.get(problem, {}))
    for key, val in raw.items():
        if key not in _TYPES or key in ("problem", "family"):
            continue
        kind = {"int": int, "float": float}.get(_TYPES[key])
        if kind is None:
            values[key] = val
            continue
        try:
            values[key] = kind(val)
        except (TypeError, ValueError):
            errors.append(f"{key} must be {'an integer' if kind is int else 'a number'}, got {val!r}")
    checks = [("theta_x", v.check_fraction), ("theta_y", v.check_fraction), ("tol", v.check_positive),
              ("vartheta", v.check_positive), ("estimate_period", v.check_positive_int),
              ("max_iter", v.check_positive_int), ("M", v.check_positive_int)]
    for key, check in checks:
        if key in values:
            try:
                check(values[key], key)
            except ValueError as exc:
                errors.append(str(exc))
    if "M" not in values or "tol" not in values:
        errors.append("M and tol need a value")
    if errors:
        raise ConfigError(errors)
    return RunConfig(problem=problem, family=raw["family"], **values)


def _row(record: IterationRecord) -> list:
    out = []
    for col in CSV_COLUMNS:
        val = getattr(record, _RECORD_FIELDS.get(col, col))
        out.append(str(int(val)) if col in _INT_COLUMNS else val if col == "type" else "%.12e" % val)
    return out


def write_csv(records: Iterable[IterationRecord], path) -> Path:
    """One row per iteration; floats are written as ``%.12e``."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(_row(r) for r in records)
    return path


def read_csv(path) -> List[IterationRecord]:
    records = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {_RECORD_FIELDS.get(c, c): (int(row[c]) if c in _INT_COLUMNS else
                                             row[c] if c == "type" else float(row[c]))
                  for c in CSV_COLUMNS}
            records.append(IterationRecord(**kw))
    return records


def _jsonable(obj):
    if isinstance(obj, dict):
        return {(",".join(map(str, k)) if isinstance(k, tuple) else str(k)): _jsonable(v_) for k, v_ in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def record_dict(record: IterationRecord) -> dict:
    d = {f.name: getattr(record, f.name) for f in fields(record) if f.name != "details"}
    d["tau_indicators"] = {",".join(map(str, k)): val for k, val in sorted(record.tau_indicators.items())}
    return _jsonable(d)


def build_manifest(config: RunConfig, result: RunResult, wall_s: float, config_text: str | None = None) -> dict:
    state = result.state
    return {
        "config": asdict(config),
        "config_text": config_text,
        "status": "converged" if result.converged else "max_iter_reached",
        "n_records": len(result.history),
        "records": [record_dict(r) for r in result.history],
        "final": {
            "index_set": [list(nu) for nu in state.index_set],
            "n_vertices": state.mesh.n_vertices,
            "n_triangles": state.mesh.n_triangles,
        },
        # empirical constant in mu <~ sum_z mu_z ||L_z||, and the margin growth
        "diagnostics": {
            "mu_over_mu_bar": [_jsonable(r.mu / r.mu_bar) if r.mu_bar > 0 else None for r in result.history],
            "margin_size": [r.margin_size for r in result.history],
        },
        "totals": {
            "wall_s": wall_s,
            "current_mesh_solves": int(state.solve_counts["current"]),
            "refined_mesh_solves": int(state.solve_counts["fine"]),
            "initial_mesh_solves": int(sum(state.coarse_solve_counts.values())),
        },
    }


def _log_ticks(lo: float, hi: float) -> list:
    return list(range(math.floor(math.log10(lo)), math.ceil(math.log10(hi)) + 1))


def emit_svg_plot(records: Sequence[IterationRecord], path, weighted: bool = True,
                  width: int = 640, height: int = 440) -> Path:
    """Log-log plot of the estimates against dof as a standalone SVG file."""
    records = list(records)
    if len(records) < 2:
        raise ValueError("need at least two records to plot")
    series = [("eta", "#000000", ""), ("mu", "#1f77b4", ""), ("tau", "#d62728", "")]
    if weighted:
        series += [("mu_bar", "#1f77b4", "6,4"), ("tau_bar", "#d62728", "6,4")]
    dof = np.array([r.dof for r in records], dtype=float)
    data = {name: np.array([getattr(r, name) for r in records], dtype=float) for name, _, _ in series}
    ys = np.concatenate([d[np.isfinite(d) & (d > 0)] for d in data.values()])
    if ys.size == 0 or not np.all(dof > 0):
        raise ValueError("nothing positive to plot")
    xt = _log_ticks(dof.min(), dof.max())
    yt = _log_ticks(ys.min(), ys.max())
    left, right, top, bottom = 70, 120, 20, 50
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + pw * (math.log10(x) - xt[0]) / max(xt[-1] - xt[0], 1)

    def sy(y):
        return top + ph * (yt[-1] - math.log10(y)) / max(yt[-1] - yt[0], 1)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for e in xt:
        x = sx(10.0 ** e)
        out.append(f'<line x1="{x:.2f}" y1="{top}" x2="{x:.2f}" y2="{top + ph}" stroke="#ddd"/>')
        out.append(f'<text class="xtick" data-exp="{e}" x="{x:.2f}" y="{top + ph + 18}" '
                   f'text-anchor="middle">10<tspan dy="-6" font-size="9">{e}</tspan></text>')
    for e in yt:
        y = sy(10.0 ** e)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text class="ytick" data-exp="{e}" x="{left - 8}" y="{y + 4:.2f}" '
                   f'text-anchor="end">10<tspan dy="-6" font-size="9">{e}</tspan></text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">degrees of freedom</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">error estimate</text>')
    for k, (name, colour, dash) in enumerate(series):
        ok = np.isfinite(data[name]) & (data[name] > 0)
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(dof[ok], data[name][ok]))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<polyline class="series" data-name="{escape(name)}" points="{pts}" fill="none" '
                   f'stroke="{colour}" stroke-width="1.5"{dash_attr}/>')
        ly = top + 16 * (k + 1)
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 34}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="1.5"{dash_attr}/>')
        out.append(f'<text x="{left + pw + 40}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def snapshot_mesh(state_or_mesh, path) -> Path:
    """Write the current mesh (of a state, estimator or mesh) as text."""
    mesh = state_or_mesh
    for attr in ("mesh_", "mesh"):
        if not isinstance(mesh, SimplexMesh) and hasattr(mesh, attr):
            mesh = getattr(mesh, attr)
    if not isinstance(mesh, SimplexMesh):
        raise TypeError("expected a mesh or an object holding one")
    path = Path(path)
    write_mesh(mesh, path)
    return path


def execute(config: RunConfig, out_dir=None, config_text: str | None = None) -> RunResult:
    """Run one configuration and write all result files into ``out_dir``."""
    out = Path(out_dir or config.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    problem = get_problem(config.problem, config.M)
    t0 = time.perf_counter()
    try:
        result = run(problem, **config.run_kwargs())
    finally:
        wall = time.perf_counter() - t0
    write_csv(result.history, out / "run.csv")
    (out / "manifest.json").write_text(
        json.dumps(build_manifest(config, result, wall, config_text), indent=2, sort_keys=True) + "\n")
    if len(result.history) >= 2:
        emit_svg_plot(result.history, out / "convergence.svg")
    snapshot_mesh(result.state, out / "mesh_final.txt")
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scfem", description="Adaptive SC-FEM runs")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the adaptive loop on a test problem")
    p.add_argument("--config", help="flat key=value file; flags override its entries")
    p.add_argument("--problem", choices=sorted(PROBLEMS))
    p.add_argument("--family", choices=list(v.FAMILIES))
    p.add_argument("--tol", type=float)
    p.add_argument("--m", dest="M", type=int, help="number of parameters")
    p.add_argument("--theta-x", type=float)
    p.add_argument("--theta-y", type=float)
    p.add_argument("--vartheta", type=float)
    p.add_argument("--estimate-period", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = {k: getattr(args, k) for k in ("problem", "family", "tol", "M", "theta_x", "theta_y",
                                          "vartheta", "estimate_period", "max_iter", "out")}
    config_text = Path(args.config).read_text() if args.config else None
    try:
        config = parse_config(config_text, **opts)
    except ConfigError as exc:
        parser.error(str(exc))
    result = execute(config, args.out, config_text)
    last = result.history[-1]
    print(f"{'converged' if result.converged else 'stopped'} after {len(result.history)} records: "
          f"eta={last.eta:.4e} dof={last.dof} -> {args.out}")
    return 0 if result.converged else 1


if __name__ == "__main__":
    sys.exit(main())
