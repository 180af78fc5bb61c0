"""Command-line driver: momentoc <command> <problem> [options].

<problem> is a problem file or the name of a shipped example.
Exit codes: 0 ok, 2 input error, 3 solver failure, 4 unbounded diagnosis.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .certify import CertifyError, describe, extract, verify
from .compactify import CompactifyError, compactify
from .conic import Settings, Status, solve
from .poly import PolynomialError, monomials_upto
from .problem import BUILTINS, ProblemError, builtin, load, serialize
from .reconstruct import (ReconstructError, default_bounds, gnuplot_script, grid, marginal_moments, recover,
                          to_physical, trajectory)
from .reconstruct import write_csv as write_trajectory_csv
from .relax import RelaxError, RelaxOptions, assemble, write_sparse
from .simulate import SimulateError, candidate, loads_policy, simulate
from .simulate import write_csv as write_simulation_csv

log = logging.getLogger("momentoc")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_UNBOUNDED = 0, 2, 3, 4
SCHEMA = 1
INPUT_ERRORS = (ProblemError, PolynomialError, CompactifyError, RelaxError, SimulateError, ReconstructError,
                CertifyError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError)


class InputError(ValueError):
    pass


def load_problem(arg: str):
    if os.path.exists(arg):
        return load(arg)
    if arg in BUILTINS:
        return builtin(arg)
    raise InputError(f"{arg!r} is neither a file nor a builtin ({', '.join(BUILTINS)})")


def problem_hash(P) -> str:
    return hashlib.sha256(serialize(P).encode()).hexdigest()


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return str(v)
        # 17 significant digits round-trip every double
        return float(f"{v:.17g}")
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True)


def settings_from(args) -> Settings:
    return Settings(tol=args.tol, max_iter=args.max_iter, verbose=args.verbose)


def _out_path(args, name):
    if not args.out_dir:
        return None
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def write_iterate_log(trace, fh):
    keys = ["iter", "mu", "primal", "dual", "pres", "dres", "gap", "mass", "step"]
    w = csv.writer(fh)
    w.writerow(keys)
    for rec in trace:
        w.writerow([repr(rec.get(k, "")) if isinstance(rec.get(k), float) else rec.get(k, "") for k in keys])


def first_moments(rel, x, count=6) -> dict:
    V = rel.cp.variables
    out = {}
    kmax = min(count - 1, 2 * rel.order)
    for i, v in enumerate(V):
        row = []
        for k in range(kmax + 1):
            alpha = [0] * len(V)
            alpha[i] = k
            row.append(rel.moment(x, tuple(alpha)))
        out[v] = row
    return out


def run_solve(P, order, settings, mass_bound=None, free_terminal=False):
    cp = compactify(P)
    t0 = time.perf_counter()
    rel = assemble(cp, order, RelaxOptions(mass_bound=mass_bound, free_terminal=free_terminal))
    t1 = time.perf_counter()
    sol = solve(rel.program, settings)
    return cp, rel, sol, dict(assemble=t1 - t0, solve=sol.solve_time)


def exit_code_for(sol) -> int:
    if sol.status == Status.UNBOUNDED_MASS:
        return EXIT_UNBOUNDED
    if sol.status in (Status.OPTIMAL, Status.INACCURATE):
        return EXIT_OK
    return EXIT_SOLVER


def _print(args, text, payload):
    if args.json:
        print(dump_json(dict(schema=SCHEMA, **payload)))
    else:
        print(text)


# ---------------------------------------------------------------------------
# commands


def cmd_compactify(args):
    P = load_problem(args.problem)
    cp = compactify(P)
    payload = dict(command="compactify", variables=list(cp.variables), mode=cp.mode, p=cp.p,
                   scaling=cp.scaling.to_dict(), text=cp.to_text())
    _print(args, cp.to_text(), payload)
    return EXIT_OK


def cmd_relax(args):
    P = load_problem(args.problem)
    cp = compactify(P)
    rel = assemble(cp, args.order, RelaxOptions(mass_bound=args.mass_bound, free_terminal=args.free_terminal))
    path = _out_path(args, f"relax_order{args.order}.txt")
    if path:
        with open(path, "w") as fh:
            write_sparse(rel, fh)
    else:
        buf = io.StringIO()
        write_sparse(rel, buf)
        if not args.json:
            sys.stdout.write(buf.getvalue())
    if args.json or path:
        s = rel.summary()
        s["blocks"] = [list(b) for b in s["blocks"]]
        _print(args, f"wrote {path}", dict(command="relax", summary=s, path=path))
    return EXIT_OK


def manifest_for(args, P, rel, sol, timing, extra=None) -> dict:
    m = dict(
        schema=SCHEMA,
        version=__version__,
        problem=P.name,
        problem_hash=problem_hash(P),
        order=rel.order,
        settings=dict(tol=args.tol, max_iter=args.max_iter, seed=args.seed,
                      mass_bound=getattr(args, "mass_bound", None),
                      free_terminal=bool(getattr(args, "free_terminal", False))),
        status=sol.status.value,
        iterations=sol.iterations,
        primal_objective=sol.primal_objective,
        dual_objective=sol.dual_objective,
        relative_gap=sol.relative_gap,
        residuals=sol.residuals,
        mass=rel.mass(sol.x),
        diagnosis=sol.diagnosis,
        variables=list(rel.cp.variables),
        moments=first_moments(rel, sol.x),
        sizes=dict(moments=rel.program.n, rows=int(rel.program.A.shape[0]),
                   blocks=[b.size for b in rel.program.blocks]),
        timing=timing,
        files={},
    )
    if extra:
        m.update(extra)
    return m


def format_report(m: dict) -> str:
    if not m or "status" not in m:
        raise InputError("nothing to report")
    lines = [
        f"problem   {m.get('problem')} (order {m.get('order')})",
        f"status    {m['status']} after {m.get('iterations')} iterations",
        f"primal    {m['primal_objective']:.10g}",
        f"dual      {m['dual_objective']:.10g}",
        f"rel. gap  {m['relative_gap']:.3e}",
        f"mass      {m['mass']:.6f}",
    ]
    diag = m.get("diagnosis") or {}
    if diag.get("unbounded"):
        lines.append(f"diagnosis unbounded-mass ({diag.get('reason')})")
    lines.append("moments (k = 0, 1, ...)")
    moments = m.get("moments", {})
    for v in m.get("variables") or sorted(moments):
        row = moments[v]
        lines.append(f"  {v:<4s} " + ", ".join(f"{float(x):.4f}" for x in row))
    cert = m.get("certificate")
    if cert:
        lines.append("certificate")
        lines.append(f"  bound              {cert['bound']:.10g}")
        lines.append(f"  identity residual  {cert['identity_residual']:.3e} (tolerance {cert['identity_tolerance']:.3e})")
        lines.append(f"  HJB minimum        {cert['hjb_min']:.3e} over {cert['samples']} samples (ok: {cert['hjb_ok']})")
    for e in m.get("reconstruction") or []:
        lines.append(f"reconstruction {e['coord']}: mismatch {e['mismatch']:.3e}, {e['atoms']} atoms")
        for j in e.get("jumps", []):
            lines.append(f"  jump at t = {j['t']:.4f}: {j['before']:.4f} -> {j['after']:.4f}")
    for k, v in sorted((m.get("files") or {}).items()):
        lines.append(f"file {k}: {v}")
    return "\n".join(lines)


def write_manifest(args, m):
    """Write (or merge into) manifest_order<d>.json under --out-dir."""
    mpath = _out_path(args, f"manifest_order{m['order']}.json")
    if mpath is None:
        return None
    if os.path.exists(mpath):
        with open(mpath) as fh:
            try:
                old = json.load(fh)
            except json.JSONDecodeError:
                old = {}
        if old.get("problem_hash") == m.get("problem_hash"):
            files = dict(old.get("files") or {}, **m["files"])
            for key in ("certificate", "reconstruction"):
                if key in old and key not in m:
                    m[key] = old[key]
            m["files"] = files
    m["files"]["manifest"] = mpath
    with open(mpath, "w") as fh:
        fh.write(dump_json(m) + "\n")
    return mpath


def cmd_solve(args):
    P = load_problem(args.problem)
    cp, rel, sol, timing = run_solve(P, args.order, settings_from(args), args.mass_bound, args.free_terminal)
    m = manifest_for(args, P, rel, sol, timing)
    path = _out_path(args, f"iterates_order{args.order}.csv")
    if path:
        with open(path, "w", newline="") as fh:
            write_iterate_log(sol.trace, fh)
        m["files"]["iterates"] = path
        write_manifest(args, m)
    if args.json:
        print(dump_json(m))
    else:
        print(format_report(m))
    return exit_code_for(sol)


def _hierarchy_row(job):
    problem, d, tol, max_iter, mass_bound = job
    P = load_problem(problem)
    try:
        _, rel, sol, timing = run_solve(P, d, Settings(tol=tol, max_iter=max_iter), mass_bound)
    except (RelaxError, ValueError) as exc:
        return dict(order=d, status="failed", error=str(exc))
    return dict(order=d, status=sol.status.value, primal=sol.primal_objective, dual=sol.dual_objective,
                gap=sol.relative_gap, mass=rel.mass(sol.x), time=timing["solve"] + timing["assemble"],
                unbounded=bool(sol.diagnosis and sol.diagnosis["unbounded"]))


def run_hierarchy(problem, d_min, d_max, tol=1e-8, max_iter=300, mass_bound=None, parallel=False) -> list:
    jobs = [(problem, d, tol, max_iter, mass_bound) for d in range(d_min, d_max + 1)]
    if parallel and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor() as ex:
            rows = list(ex.map(_hierarchy_row, jobs))
    else:
        rows = [_hierarchy_row(j) for j in jobs]
    prev = None
    for r in rows:
        r["monotone"] = True
        if r["status"] in ("optimal", "inaccurate"):
            if prev is not None and r["primal"] < prev - 1e-6:
                r["monotone"] = False
                log.warning("order %d: value %.9g below the previous order's %.9g", r["order"], r["primal"], prev)
            prev = r["primal"]
    return rows


def cmd_hierarchy(args):
    P = load_problem(args.problem)
    d_max = args.to if args.to is not None else args.order
    rows = run_hierarchy(args.problem, args.order, d_max, args.tol, args.max_iter, args.mass_bound, args.parallel)
    lines = [f"{'d':>3s}  {'status':<16s} {'p*_d':>16s} {'gap':>10s} {'mass':>12s} {'time':>8s}"]
    for r in rows:
        if "primal" in r:
            lines.append(f"{r['order']:>3d}  {r['status']:<16s} {r['primal']:>16.9g} {r['gap']:>10.2e} "
                         f"{r['mass']:>12.6g} {r['time']:>7.1f}s" + ("" if r["monotone"] else "  (not monotone)"))
        else:
            lines.append(f"{r['order']:>3d}  {r['status']:<16s} {r.get('error', '')}")
    _print(args, "\n".join(lines), dict(command="hierarchy", problem=P.name, rows=rows))
    if any(r.get("unbounded") or r["status"] == "unbounded-mass" for r in rows):
        return EXIT_UNBOUNDED
    if any(r["status"] not in ("optimal", "inaccurate") for r in rows):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_certify(args):
    P = load_problem(args.problem)
    cp, rel, sol, timing = run_solve(P, args.order, settings_from(args), args.mass_bound, args.free_terminal)
    code = exit_code_for(sol)
    if code != EXIT_OK:
        _print(args, f"solver status {sol.status.value}: no certificate", dict(command="certify", status=sol.status.value))
        return code
    if sol.status != Status.OPTIMAL:
        log.warning("solver status %s: certificate from an inaccurate solve", sol.status.value)
    cert = extract(sol, rel, allow_inaccurate=True)
    rep = verify(cert, rel, sol.x, samples=args.samples, seed=args.seed)
    desc = describe(cert)
    lines = [f"v(t, y) = {desc['v_physical']}", f"bound = {cert.bound:.10g}  (status {cert.status})", "blocks:"]
    for b in desc["blocks"]:
        lines.append(f"  {b['measure']}:{b['label']:<14s} size {b['size']:>4d}  min eig {b['min_eigenvalue']: .3e}")
    lines.append(f"identity residual {rep['identity_residual']:.3e} (tolerance {rep['identity_tolerance']:.3e})")
    lines.append(f"HJB minimum {rep['hjb_min']:.3e} at {rep['samples']} samples (ok: {rep['hjb_ok']})")
    if "complementarity" in rep:
        lines.append(f"complementarity {rep['complementarity']:.3e}, primal - dual {rep['primal_minus_dual']:.3e}")
    m = manifest_for(args, P, rel, sol, timing, dict(certificate=rep))
    write_manifest(args, m)
    _print(args, "\n".join(lines), dict(command="certify", certificate=desc, report=rep))
    return EXIT_OK


def cmd_reconstruct(args):
    P = load_problem(args.problem)
    cp, rel, sol, timing = run_solve(P, args.order, settings_from(args), args.mass_bound, args.free_terminal)
    code = exit_code_for(sol)
    if code != EXIT_OK:
        print(f"solver status {sol.status.value}: nothing to reconstruct", file=sys.stderr)
        return code
    coords = [args.coord] if args.coord else list(cp.states)
    results = []
    for coord in coords:
        g = grid(default_bounds(rel, coord), args.eps, args.cap)
        meas = recover(marginal_moments(rel, sol.x, coord), g)
        traj = to_physical(trajectory(meas, g.axes[0], args.jump_threshold, coord, resolution=1.0 / rel.order), rel)
        entry = dict(coord=coord, mismatch=meas.mismatch, lp_optimum=meas.lp_optimum, atoms=len(meas.weights),
                     mass=meas.mass, jumps=traj.jumps)
        path = _out_path(args, f"trajectory_{coord}.csv")
        if path:
            with open(path, "w") as fh:
                write_trajectory_csv(traj, fh)
            gp = _out_path(args, f"trajectory_{coord}.gp")
            with open(gp, "w") as fh:
                fh.write(gnuplot_script(os.path.basename(path), coord))
            entry["files"] = dict(csv=path, gnuplot=gp)
        elif not args.json:
            write_trajectory_csv(traj, sys.stdout)
        results.append(entry)
    lines = []
    for e in results:
        lines.append(f"{e['coord']}: mismatch {e['mismatch']:.3e}, {e['atoms']} atoms, mass {e['mass']:.6f}")
        for j in e["jumps"]:
            lines.append(f"  jump at t = {j['t']:.4f}: {j['before']:.4f} -> {j['after']:.4f}")
    m = manifest_for(args, P, rel, sol, timing, dict(reconstruction=[
        {k: v for k, v in e.items() if k != "files"} for e in results]))
    for e in results:
        for kind, p in (e.get("files") or {}).items():
            m["files"][f"{kind}_{e['coord']}"] = p
    write_manifest(args, m)
    _print(args, "\n".join(lines), dict(command="reconstruct", results=results))
    return EXIT_OK


def cmd_simulate(args):
    P = load_problem(args.problem)
    if args.policy:
        with open(args.policy) as fh:
            pol = loads_policy(fh.read(), P)
    else:
        pol = candidate(P.name, P)
    res = simulate(P, pol, step=args.step)
    path = _out_path(args, "simulation.csv")
    if path:
        with open(path, "w") as fh:
            write_simulation_csv(res, P, fh)
    lines = [f"cost {res.cost:.10g}", f"endpoint {', '.join(f'{v:.6g}' for v in res.endpoint)}"]
    if res.endpoint_error is not None:
        lines.append(f"endpoint error {res.endpoint_error:.3e}")
    for k, v in res.violations.items():
        lines.append(f"violation {k}: {v:.3e}")
    lines += [f"warning: {w}" for w in res.warnings]
    _print(args, "\n".join(lines), dict(command="simulate", cost=res.cost, endpoint=res.endpoint,
                                         endpoint_error=res.endpoint_error, violations=res.violations,
                                         warnings=res.warnings, file=path))
    return EXIT_OK


def cmd_report(args):
    with open(args.manifest) as fh:
        text = fh.read()
    m = json.loads(text) if text.strip() else {}
    if not m:
        raise InputError("nothing to report")
    if args.json:
        keep = {k: v for k, v in m.items() if k not in ("timing",)}
        print(dump_json(keep))
    else:
        print(format_report(m))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=1e-8, help="solver tolerance (default 1e-8)")
    common.add_argument("--max-iter", type=int, default=300, help="solver iteration limit")
    common.add_argument("--seed", type=int, default=0, help="seed for sampling checks")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--out-dir", default=None, help="directory for output files")
    common.add_argument("--verbose", action="store_true", help="log solver iterations")

    relax_opts = argparse.ArgumentParser(add_help=False)
    relax_opts.add_argument("--order", type=int, required=True, help="relaxation order d")
    relax_opts.add_argument("--mass-bound", type=float, default=None, help="bound on the integral of |u|^p")
    relax_opts.add_argument("--free-terminal", action="store_true", help="leave the terminal state free")

    ap = argparse.ArgumentParser(prog="momentoc", description="Moment relaxations for optimal control with impulses.")
    ap.add_argument("--version", action="version", version=f"momentoc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compactify", parents=[common], help="print the compactified problem")
    p.add_argument("problem")
    p.set_defaults(func=cmd_compactify)

    p = sub.add_parser("relax", parents=[common, relax_opts], help="write the conic program")
    p.add_argument("problem")
    p.set_defaults(func=cmd_relax)

    p = sub.add_parser("solve", parents=[common, relax_opts], help="solve one relaxation")
    p.add_argument("problem")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("hierarchy", parents=[common], help="solve a range of orders")
    p.add_argument("problem")
    p.add_argument("--order", type=int, required=True, help="first order")
    p.add_argument("--to", type=int, default=None, help="last order (default: first)")
    p.add_argument("--mass-bound", type=float, default=None)
    p.add_argument("--parallel", action="store_true", help="solve the orders concurrently")
    p.set_defaults(func=cmd_hierarchy)

    p = sub.add_parser("certify", parents=[common, relax_opts], help="extract and check the dual certificate")
    p.add_argument("problem")
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("reconstruct", parents=[common, relax_opts], help="recover trajectories from moments")
    p.add_argument("problem")
    p.add_argument("--eps", type=float, default=0.02, help="grid spacing in internal units")
    p.add_argument("--coord", default=None, help="coordinate, e.g. y1 (default: every state)")
    p.add_argument("--cap", type=int, default=200_000, help="grid size limit")
    p.add_argument("--jump-threshold", type=float, default=0.25)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("simulate", parents=[common], help="simulate a policy and evaluate its cost")
    p.add_argument("problem")
    p.add_argument("--policy", default=None, help="policy file (default: the shipped candidate)")
    p.add_argument("--step", type=float, default=1e-4, help="RK4 step relative to the horizon")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="summarize a run manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
