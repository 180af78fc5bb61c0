import math

import numpy as np
import pytest

from momentoc.compactify import compactify
from momentoc.poly import Polynomial, monomials_upto, parse
from momentoc.problem import BUILTINS, builtin
from momentoc.relax import (MomentIndexing, RelaxError, RelaxOptions, assemble, min_order, moment_matrix_map)
from momentoc import relax


def test_hankel_examples():
    idx = MomentIndexing.build(("x",), 1)
    M = moment_matrix_map(Polynomial.constant(("x",), 1.0), idx, 1)
    assert M([1.0, 2.0, 5.0]).tolist() == [[1.0, 2.0], [2.0, 5.0]]
    L = moment_matrix_map(parse("1 - x^2", ("x",)), idx, 0)
    assert L([1.0, 2.0, 5.0]).tolist() == [[-4.0]]
    idx3 = MomentIndexing.build(("x",), 3)
    D = moment_matrix_map(Polynomial.constant(("x",), 1.0), idx3, 3)(np.ones(7))
    assert np.all(D == 1.0) and np.linalg.matrix_rank(D) == 1
    with pytest.raises(RelaxError):
        moment_matrix_map(parse("x^4", ("x",)), idx, 1)


def test_constant_test_function_is_dropped():
    cp = compactify(builtin("impulse"))
    zero = (0,) * (1 + cp.n)
    rows = relax.test_constraints(cp, 3)
    assert all(r.generator.is_zero() for r in rows if r.alpha == zero)
    rel = assemble(cp, 3)
    assert zero not in [r.alpha for kind, r in rel.row_origin if kind == "test"]


def test_impulse_sizes():
    cp = compactify(builtin("impulse"))
    assert len(cp.variables) == 4
    assert len(monomials_upto(4, 5)) == math.comb(9, 4) == 126
    rel = assemble(cp, 5)
    moment = next(b for b in rel.block_info if b.label == "moment")
    # the sphere equation removes every monomial divisible by w0^2
    assert len(moment.basis) == sum(1 for a in monomials_upto(4, 5) if a[2] < 2)
    assert len(moment.basis) < 126


def test_order_below_minimum():
    cp = compactify(builtin("rendezvous"))
    with pytest.raises(RelaxError):
        assemble(cp, min_order(cp) - 1)


def empirical_moments(rel, gamma_pts, gamma_w, boundary=None):
    x = np.zeros(rel.ncols)
    for name, (pts, w) in dict(gamma=(gamma_pts, gamma_w), **(boundary or {})).items():
        meas = rel.measures[name]
        for a, i in meas.position.items():
            x[meas.offset + i] = w @ np.prod(pts ** np.array(a, dtype=float), axis=1)
    return x


@pytest.mark.parametrize("name", BUILTINS)
def test_sampled_measures_give_psd_blocks(name):
    rng = np.random.default_rng(11)
    cp = compactify(builtin(name))
    d = min_order(cp) + 1
    rel = assemble(cp, d)
    for trial in range(3):
        pts = cp.sample(rng, 40)
        w = rng.random(40)
        boundary = {}
        for mname in ("mu_f", "mu_0"):
            if mname in rel.measures:
                mv = rel.measures[mname].variables
                # points inside the box [-1, 1]^k that also satisfy the state set
                bp = []
                while len(bp) < 10:
                    full = cp.sample(rng, 1)[0]
                    bp.append([full[cp.variables.index(v)] for v in mv])
                boundary[mname] = (np.array(bp), rng.random(10))
        x = empirical_moments(rel, pts, w, boundary)
        for blk in rel.program.blocks:
            M = blk.matrix(x)
            lam = np.linalg.eigvalsh(0.5 * (M + M.T))
            assert lam[0] >= -1e-8 * max(1.0, lam[-1]), (blk.label, lam[0])


def test_truth_measure_is_feasible():
    # dt with y = step at 1/2 and u = 0, plus the jump of unit mass at t = 1/2
    # traversed in fictitious time with the control at +infinity
    cp = compactify(builtin("impulse"))
    rel = assemble(cp, 5)
    g, wg = np.polynomial.legendre.leggauss(40)
    pts, wts = [], []
    for lo, hi, y in ((0.0, 0.5, -1.0), (0.5, 1.0, 1.0)):
        for ti, wi in zip(lo + (hi - lo) * (g + 1) / 2, (hi - lo) / 2 * wg):
            pts.append([ti, y, 1.0, 0.0])
            wts.append(wi)
    for si, wi in zip((g + 1) / 2, wg / 2):
        pts.append([0.5, -1.0 + 2.0 * si, 0.0, 1.0])
        wts.append(wi)
    x = empirical_moments(rel, np.array(pts), np.array(wts))
    prog = rel.program
    assert np.max(np.abs(prog.A @ x - prog.b)) <= 1e-9
    for blk in prog.blocks:
        assert np.linalg.eigvalsh(blk.matrix(x))[0] >= -1e-9
    assert abs(prog.c @ x) <= 1e-12
    # t-moments 1/(k+1) + 2^-k
    for k in range(6):
        alpha = (k, 0, 0, 0)
        assert abs(rel.moment(x, alpha) - (1 / (k + 1) + 2.0**-k)) <= 1e-12


def test_mass_bound_row():
    cp = compactify(builtin("weierstrass"))
    rel = assemble(cp, 2, RelaxOptions(mass_bound=5.0))
    assert rel.lp_info == ["mass_bound"]
    assert rel.program.lp_h.tolist() == [5.0]


def test_free_terminal_option():
    cp = compactify(builtin("impulse"))
    rel = assemble(cp, 3, RelaxOptions(free_terminal=True))
    assert "mu_f" in rel.measures
