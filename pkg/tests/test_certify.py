from dataclasses import replace

import numpy as np
import pytest

from conftest import solved
from momentoc.certify import CertifyError, describe, extract, verify, zero_certificate
from momentoc.compactify import compactify
from momentoc.conic import Settings, solve
from momentoc.problem import builtin
from momentoc.relax import assemble


@pytest.fixture(scope="module")
def rendezvous():
    rel, sol = solved("rendezvous", 3)
    return rel, sol, extract(sol, rel)


def test_identity_and_hjb(rendezvous):
    rel, sol, cert = rendezvous
    rep = verify(cert, rel, sol.x)
    assert rep["identity_residual"] <= rep["identity_tolerance"]
    assert rep["hjb_ok"] and rep["samples"] == 1000
    assert rep["gram_ok"]
    assert abs(cert.bound - sol.dual_objective) == 0.0
    assert cert.bound <= sol.primal_objective + 1e-6


def test_gram_expansion(rendezvous):
    rng = np.random.default_rng(8)
    _, _, cert = rendezvous
    for m in cert.multipliers:
        pts = rng.uniform(-1, 1, size=(100, len(m.variables)))
        direct = m.polynomial().evaluate_many(pts)
        gram = m.evaluate_many(pts)
        assert np.max(np.abs(direct - gram)) <= 1e-9 * max(1.0, np.max(np.abs(gram)))


def test_scaled_certificate_is_caught(rendezvous):
    rel, sol, cert = rendezvous
    bad = replace(cert, v=cert.v * 2.0)
    rep = verify(bad, rel, sol.x)
    assert rep["identity_residual"] > 1e3 * rep["identity_tolerance"]


def test_zero_certificate():
    cp = compactify(builtin("impulse"))
    rel = assemble(cp, 3)
    rep = verify(zero_certificate(rel), rel)
    assert rep["identity_residual"] == cp.l_hat.max_abs_coefficient() == 1.0
    assert rep["hjb_ok"]
    assert rep["bound"] == 0.0


def test_non_optimal_input_rejected():
    cp = compactify(builtin("rendezvous"))
    rel = assemble(cp, 3)
    sol = solve(rel.program, Settings(max_iter=3))
    with pytest.raises(CertifyError):
        extract(sol, rel)


def test_physical_test_function(rendezvous):
    rel, _, cert = rendezvous
    sc = rel.cp.scaling
    rng = np.random.default_rng(9)
    for _ in range(20):
        t, y = rng.random(), rng.uniform(-1, 1, size=2)
        internal = np.concatenate([[t], y])
        physical = np.concatenate([[sc.t_physical(t)], sc.y_physical(y)])
        assert abs(cert.v(internal) - cert.v_physical(physical)) <= 1e-9 * max(1.0, abs(cert.v(internal)))
    d = describe(cert)
    assert d["order"] == 3 and len(d["blocks"]) == len(cert.multipliers)


def test_regularized_weierstrass_certificate():
    rel, sol = solved("weierstrass-regularized", 3)
    cert = extract(sol, rel)
    rep = verify(cert, rel, sol.x, seed=3)
    assert rep["identity_residual"] <= rep["identity_tolerance"]
    assert rep["hjb_ok"]
    assert abs(rep["complementarity"] - rep["primal_minus_dual"]) <= 1e-6
