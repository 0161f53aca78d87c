"""Command line experiment runner.

``abem run --config FILE`` executes one adaptive or uniform run and writes
``<out>/<name>.csv`` plus ``<out>/<name>-summary.json``. ``abem compare``
runs two or more configs of the same problem and prints an aligned table.
``--config`` also accepts the name of a bundled config (``circle-smooth``,
``circle-fourier``, ``lshape-singular``, ``square-lame``).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from abem.adaptivity import (
    AdaptiveLoopError,
    MarkingParams,
    StopRule,
    adaptive_loop,
    axiom_diagnostics,
    closure_constants,
    fit_rate,
    inverse_inequality_check,
    linear_convergence_fit,
)
from abem.config import ConfigError, ExperimentConfig, bundled_config_dir, load_config
from abem.geometry import GeometryError
from abem.mesh import mesh_diagnostics

CSV_COLUMNS = ("level", "n_elements", "n_dofs", "eta", "faermann", "energy_error", "marked",
               "wall_ms")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _resolve_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    bundled = bundled_config_dir() / f"{arg}.yaml"
    if bundled.exists():
        return bundled
    return p


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_to_csv(run) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in run.levels:
        w.writerow([_fmt(r.level), _fmt(r.n_elements), _fmt(r.n_dofs), _fmt(r.eta),
                    _fmt(r.faermann), _fmt(r.energy_error), _fmt(r.marked),
                    f"{r.wall_ms:.1f}"])
    return buf.getvalue()


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _rate(run, q):
    if len(run.levels) < 2 or np.all(np.isnan(run.series(q))):
        return None
    return _finite(fit_rate(run, q))


def summarize(cfg: ExperimentConfig, run, problem) -> dict:
    eta = run.series("eta")
    err = run.series("energy_error")
    out = {
        "name": cfg.output.name or cfg.name,
        "levels": len(run.levels),
        "stop_reason": run.stop_reason,
        "final_n_elements": run.levels[-1].n_elements,
        "final_n_dofs": run.levels[-1].n_dofs,
        "final_eta": _finite(eta[-1]),
        "final_energy_error": _finite(err[-1]),
        "rates": {q: _rate(run, q) for q in ("eta", "faermann", "energy_error")},
    }
    if np.all(np.isfinite(err)) and np.all(eta > 0):
        ratio = err / eta
        out["reliability_ratio"] = {"min": float(ratio.min()), "max": float(ratio.max())}
    if len(eta) >= 2 and np.all(eta > 0):
        lf = linear_convergence_fit(eta)
        out["linear_convergence"] = {"q": lf.q, "c_lin": lf.c_lin,
                                     "max_violation": lf.max_violation}
    cc = closure_constants(run)
    out["closure_constants"] = [float(c) for c in cc]
    md = mesh_diagnostics(run.meshes[-1])
    out["mesh"] = {"c_patch": md.c_patch, "c_locuni": md.c_locuni, "c_shape": md.c_shape,
                   "c_cent": md.c_cent, "rho_son": md.rho_son_observed,
                   "max_level_jump": md.max_level_jump}
    if cfg.diagnostics.axioms:
        rep = axiom_diagnostics(run, exact_energy=problem.exact_energy())
        out["axioms"] = {
            "e1": [_finite(v) for v in rep.e1_constants],
            "e2_rho": rep.e2_rho, "e2_c_red": _finite(rep.e2_c_red),
            "e3_partial_sums": rep.e3_partial_sums,
            "e3_telescoping_error": rep.e3_telescoping_error,
            "e4": [_finite(v) for v in rep.e4_ratios],
            "s1": rep.s1_constant,
        }
    if cfg.diagnostics.inverse and run.systems:
        last = run.systems[-1]
        inv = inverse_inequality_check(last.space, last.matrix, last.pde)
        out["inverse"] = {"s1": inv.s1_constant, "derivative": inv.derivative_constant}
    return out


def execute(cfg: ExperimentConfig, base_dir: Path | None = None, seed_mesh: int | None = None,
            max_dofs: int | None = None):
    geometry = cfg.build_geometry(base_dir)
    pde = cfg.build_pde()
    base = cfg.build_mesh(geometry, seed_mesh)
    problem = cfg.build_problem(pde, geometry, base)
    st = cfg.stop
    stop = StopRule(max_dofs if max_dofs is not None else st.max_dofs, st.max_levels,
                    st.eta_tol)
    run = adaptive_loop(problem, base, cfg.degree, MarkingParams(cfg.theta), stop,
                        mode=cfg.mode, driver=cfg.estimator,
                        compute_faermann=cfg.diagnostics.faermann,
                        retain_systems=cfg.diagnostics.axioms or cfg.diagnostics.inverse,
                        quad=cfg.build_quad(), config=cfg.resolved())
    return run, problem


def _load(arg: str) -> tuple[ExperimentConfig, Path]:
    path = _resolve_path(arg)
    return load_config(path), path.parent


def cmd_run(args) -> int:
    cfg, base_dir = _load(args.config)
    if args.dry_run:
        print(yaml.safe_dump(cfg.resolved(), sort_keys=False), end="")
        return 0
    run, problem = execute(cfg, base_dir, args.seed_mesh, args.max_dofs)
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.output.name or cfg.name
    (out / f"{name}.csv").write_text(run_to_csv(run))
    summ = summarize(cfg, run, problem)
    (out / f"{name}-summary.json").write_text(json.dumps(summ, indent=2, sort_keys=True) + "\n")
    print(f"{name}: {summ['levels']} levels, stop: {summ['stop_reason']}")
    print(f"  final elements {summ['final_n_elements']}, eta {summ['final_eta']:.4e}")
    for q, s in summ["rates"].items():
        if s is not None:
            print(f"  rate {q}: {s:.3f}")
    print(f"  wrote {out / (name + '.csv')}")
    return 0


def _problem_key(cfg: ExperimentConfig) -> dict:
    d = cfg.resolved()
    return {k: d[k] for k in ("geometry", "mesh", "pde", "rhs")}


def cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise ConfigError("compare needs at least two --config paths")
    loaded = [_load(c) for c in args.config]
    keys = [_problem_key(cfg) for cfg, _ in loaded]
    if any(k != keys[0] for k in keys[1:]):
        raise ConfigError("configs describe different problems "
                          "(geometry, mesh, pde and rhs must agree)")
    runs = []
    for cfg, base_dir in loaded:
        run, _ = execute(cfg, base_dir, args.seed_mesh, args.max_dofs)
        runs.append((cfg, run))
    labels = [f"{i}:{cfg.name}:{cfg.mode}" for i, (cfg, _) in enumerate(runs)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["level"]
    for lab in labels:
        header += [f"{lab}:n_dofs", f"{lab}:eta", f"{lab}:energy_error"]
    w.writerow(header)
    depth = max(len(r.levels) for _, r in runs)
    for lv in range(depth):
        row = [str(lv)]
        for _, r in runs:
            if lv < len(r.levels):
                rec = r.levels[lv]
                row += [_fmt(rec.n_dofs), _fmt(rec.eta), _fmt(rec.energy_error)]
            else:
                row += ["", "", ""]
        w.writerow(row)
    w.writerow([])
    w.writerow(["rate", *sum(([lab, _fmt(_rate(r, "eta")), _fmt(_rate(r, "energy_error"))]
                              for lab, (_, r) in zip(labels, runs)), [])])
    text = buf.getvalue()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(text)
    print(text, end="")
    for lab, (_, r) in zip(labels, runs):
        se, sr = _rate(r, "eta"), _rate(r, "energy_error")
        print(f"{lab}: eta rate {_fmt(se) or 'n/a'}, energy rate {_fmt(sr) or 'n/a'}")
    return 0


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abem", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed-mesh", type=int, default=None, metavar="N",
                       help="elements per patch of the initial mesh")
        p.add_argument("--max-dofs", type=int, default=None, metavar="N",
                       help="stop before exceeding N degrees of freedom")
        p.add_argument("--out", default=None, metavar="DIR", help="output directory")

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--dry-run", action="store_true", help="validate and print the config")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several configs and tabulate them")
    p.add_argument("--config", action="append", required=True, metavar="PATH")
    common(p)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    for flag in ("seed_mesh", "max_dofs"):
        v = getattr(args, flag, None)
        if v is not None and v < 1:
            print(f"abem: error: --{flag.replace('_', '-')} must be positive", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, GeometryError) as exc:
        print(f"abem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdaptiveLoopError as exc:
        print(f"abem: numerical failure at {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"abem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
