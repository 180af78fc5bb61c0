"""Acceptance criteria, one test per criterion at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""
import time

import numpy as np
import pytest

import test_compactify
import test_conic
import test_poly
import test_reconstruct
import test_relax
from conftest import record, solved
from momentoc.certify import extract, verify
from momentoc.compactify import compactify
from momentoc.conic import Settings, Status, solve
from momentoc.problem import builtin
from momentoc.reconstruct import default_bounds, grid, marginal_moments, recover, to_physical, trajectory
from momentoc.relax import assemble
from momentoc.simulate import candidate, simulate

OK = (Status.OPTIMAL, Status.INACCURATE)

HIERARCHY = {
    "impulse": range(2, 6),
    "smeared": range(3, 5),
    # order 5 is checked in the rendezvous criterion
    "rendezvous": range(2, 5),
    "weierstrass-regularized": range(2, 5),
}


def moments_of(rel, sol, var, count=6):
    i = rel.cp.variables.index(var)
    out = []
    for k in range(count):
        alpha = [0] * len(rel.cp.variables)
        alpha[i] = k
        out.append(rel.moment(sol.x, tuple(alpha)))
    return np.array(out)


def recovered_path(rel, sol, coord, eps=0.05):
    g = grid(default_bounds(rel, coord), eps)
    meas = recover(marginal_moments(rel, sol.x, coord), g)
    traj = trajectory(meas, g.axes[0], coord=coord, resolution=1.0 / rel.order)
    return to_physical(traj, rel)


def test_impulse_moments_at_order_5():
    t0 = time.perf_counter()
    rel = assemble(compactify(builtin("impulse")), 5)
    sol = solve(rel.program, Settings())
    elapsed = time.perf_counter() - t0
    k = np.arange(6)
    t_listed = np.array([2.0000, 1.0000, 0.5833, 0.3750, 0.2625, 0.1979])
    t_truth = 1.0 / (k + 1) + 0.5**k
    w_listed = np.array([2.0000, 1.0101, 1.0000, 0.9943, 0.9903, 0.9873])
    tm, wm = moments_of(rel, sol, "t"), moments_of(rel, sol, "w1")
    errs = (np.max(np.abs(tm - t_listed)), np.max(np.abs(tm - t_truth)), np.max(np.abs(wm - w_listed)))
    ok = (sol.status in OK and errs[0] <= 2e-2 and errs[1] <= 2e-2 and errs[2] <= 3e-2
          and sol.primal_objective <= 1e-3 and elapsed < 120)
    record("1", ok, f"impulse d=5 {sol.status.value}: t err {errs[0]:.1e} (truth {errs[1]:.1e}), "
                    f"w err {errs[2]:.1e}, objective {sol.primal_objective:.1e}, {elapsed:.1f}s")
    assert ok


def test_impulse_reconstruction():
    rel, sol = solved("impulse", 5)
    traj = recovered_path(rel, sol, "y1")
    jumps = traj.jumps
    ok = (len(jumps) == 1 and abs(jumps[0]["t"] - 0.5) <= 0.05
          and abs(jumps[0]["before"]) <= 0.1 and abs(jumps[0]["after"] - 1.0) <= 0.1)
    detail = ", ".join(f"jump at {j['t']:.3f}: {j['before']:.3f} -> {j['after']:.3f}" for j in jumps) or "no jump"
    record("2", ok, detail)
    assert ok


def test_smeared_moments_and_path():
    rel, sol = solved("smeared", 4)
    tm = moments_of(rel, sol, "t")
    k = np.arange(6)
    e_listed = np.max(np.abs(tm - np.array([2.0026, 1.0026, 0.6692, 0.5026, 0.4026, 0.3359])))
    e_exact = np.max(np.abs(tm - 2.0 / (k + 1)))
    traj = recovered_path(rel, sol, "y1")
    fin = np.isfinite(traj.values)
    sup = float(np.max(np.abs(traj.values[fin] - traj.t[fin])))
    ok = sol.status in OK and e_listed <= 2e-2 and e_exact <= 2e-2 and sup <= 0.1
    record("3", ok, f"smeared d=4 {sol.status.value}: t err {e_listed:.1e} (exact {e_exact:.1e}), "
                    f"sup |y - t| {sup:.3f}")
    assert ok


def test_rendezvous_bound_and_monotone():
    vals = {}
    statuses = {}
    for d in (4, 5):
        rel, sol = solved("rendezvous", d)
        statuses[d] = sol.status
        vals[d] = sol.primal_objective
    ok = (all(s in OK for s in statuses.values()) and all(v <= 0.846 + 1e-3 for v in vals.values())
          and vals[4] <= vals[5] + 1e-6)
    record("4a", ok, "; ".join(f"d={d} {statuses[d].value} {vals[d]:.6f}" for d in vals))
    assert ok


@pytest.mark.stretch
def test_rendezvous_order_6():
    rel = assemble(compactify(builtin("rendezvous")), 6)
    sol = solve(rel.program, Settings())
    ok = sol.status in OK and abs(sol.primal_objective - 0.824) <= 0.02
    record("4b", ok, f"rendezvous d=6 {sol.status.value} {sol.primal_objective:.6f}, {sol.solve_time:.0f}s")
    assert ok


def test_rendezvous_candidate_policy():
    P = builtin("rendezvous")
    res = simulate(P, candidate("rendezvous", P))
    ok = abs(res.cost - 0.846) <= 0.01 and res.endpoint_error <= 1e-2 and res.max_violation <= 1e-3
    record("4c", ok, f"candidate cost {res.cost:.4f}, endpoint error {res.endpoint_error:.1e}, "
                     f"violation {res.max_violation:.1e}")
    assert ok


def test_weierstrass():
    rows = []
    ok = True
    for d in (2, 3, 4):
        rel, sol = solved("weierstrass", d)
        growth = sol.diagnosis.get("growth", float("nan")) if sol.diagnosis else float("nan")
        ok &= sol.status == Status.UNBOUNDED_MASS
        rows.append(f"d={d} {sol.status.value} (growth {growth:.0f})")
    rel, sol = solved("weierstrass-regularized", 3)
    mass = rel.mass(sol.x)
    ok &= sol.status == Status.OPTIMAL and np.isfinite(mass) and mass < 10
    rows.append(f"regularized d=3 {sol.status.value} mass {mass:.3f}")
    record("5", ok, "; ".join(rows))
    assert ok


def test_hierarchy_monotone():
    worst = np.inf
    bad = []
    for name, orders in HIERARCHY.items():
        prev = None
        for d in orders:
            _, sol = solved(name, d)
            if sol.status not in OK:
                bad.append(f"{name} d={d} {sol.status.value}")
                continue
            if prev is not None:
                worst = min(worst, sol.primal_objective - prev + 1e-6)
            prev = sol.primal_objective
    ok = worst >= 0 and not bad
    record("6", ok, f"min p*_(d+1) - p*_d + 1e-6 = {worst:.2e}" + (f"; unsolved: {', '.join(bad)}" if bad else ""))
    assert ok


def test_duality_and_certificates():
    worst_gap = worst_ident = 0.0
    worst_hjb = np.inf
    checked = 0
    ok = True
    for name, orders in HIERARCHY.items():
        for d in orders:
            rel, sol = solved(name, d)
            if sol.status not in OK:
                continue
            checked += 1
            gap = abs(sol.primal_objective - sol.dual_objective) / (1 + abs(sol.primal_objective))
            rep = verify(extract(sol, rel, allow_inaccurate=True), rel, sol.x)
            worst_gap = max(worst_gap, gap)
            worst_ident = max(worst_ident, rep["identity_residual"] / rep["objective_norm"])
            worst_hjb = min(worst_hjb, rep["hjb_min"] / rep["hjb_scale"])
            ok &= gap <= 1e-6 and rep["identity_residual"] <= rep["identity_tolerance"] and rep["hjb_ok"]
    record("7", ok, f"{checked} solves: gap {worst_gap:.1e}, identity/|c| {worst_ident:.1e}, "
                    f"HJB min/scale {worst_hjb:.1e}")
    assert ok


def test_solver_oracle():
    worst = 0.0
    for prog, x0 in test_conic.oracle_cases():
        ref, _ = test_conic.BarrierOracle(prog).solve(x0)
        sol = solve(prog)
        worst = max(worst, abs(sol.primal_objective - ref) / max(1.0, abs(ref)))
    ok = worst <= 1e-6
    record("8", ok, f"20 programs, worst relative difference {worst:.1e}")
    assert ok


def test_property_suites():
    suites = [
        ("ring axioms", test_poly.test_ring_axioms_at_random_points, [()]),
        ("homogenization", test_compactify.test_homogenization_identity,
         [(n,) for n in ("impulse", "smeared", "rendezvous", "weierstrass", "weierstrass-regularized")]),
        ("round trip", test_compactify.test_round_trip, [(p, m) for p in (1, 2, 3, 4) for m in (1, 2, 3)]),
        ("moment PSD", test_relax.test_sampled_measures_give_psd_blocks,
         [(n,) for n in ("impulse", "smeared", "rendezvous")]),
        ("single Dirac", test_reconstruct.test_single_dirac_is_recovered_exactly, [()]),
    ]
    failed = []
    for label, fn, cases in suites:
        for args in cases:
            try:
                fn(*args)
            except AssertionError:
                failed.append(f"{label}{args}")
    ok = not failed
    record("9", ok, "all property suites hold" if ok else "failed: " + ", ".join(failed))
    assert ok
