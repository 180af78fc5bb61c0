import numpy as np
import pytest

from momentoc.poly import Polynomial, PolynomialError, differentiate, evaluate, homogenize_control, parse

V = ("t", "y1", "u1")


def random_poly(rng, variables, nterms=6, maxdeg=4):
    terms = {}
    for _ in range(nterms):
        a = tuple(int(v) for v in rng.integers(0, maxdeg + 1, size=len(variables)))
        terms[a] = float(rng.normal())
    return Polynomial(variables, terms)


def test_parse_cost_of_impulse_problem():
    p = parse("(t-1/2)^2*u1", V)
    assert p.terms == {(2, 0, 1): 1.0, (1, 0, 1): -1.0, (0, 0, 1): 0.25}


def test_parse_zero_and_ball():
    assert parse("0", ("t",)).terms == {}
    q = parse("y1^2+y2^2-2", ("t", "y1", "y2"))
    assert len(q) == 3 and q.degree == 2


@pytest.mark.parametrize("expr", ["t^-1", "t^1.5", "z + 1", "t +* 2", "(t"])
def test_parse_errors(expr):
    with pytest.raises(PolynomialError):
        parse(expr, V)


def test_evaluate_examples():
    assert evaluate(parse("t^2 - t + 1/4", ("t",)), [0.5]) == 0.0
    assert evaluate(Polynomial.monomial(V, (3, 1, 2)), [1, 1, 1]) == 1.0
    assert evaluate(parse("2 - y1^2 - y2^2", ("y1", "y2")), [1, 1]) == 0.0
    with pytest.raises(PolynomialError):
        evaluate(parse("t", V), [1.0])


def test_differentiate_examples():
    T = ("t", "y1", "y2")
    assert differentiate(parse("t^3", T), "t") == parse("3*t^2", T)
    assert differentiate(parse("t^2", T), "y1").is_zero()
    assert differentiate(parse("y1*y2^2", T), "y2") == parse("2*y1*y2", T)
    with pytest.raises(PolynomialError):
        differentiate(parse("t", T), "q")


def test_homogenize_examples():
    W = ("t", "w0", "w1")
    assert homogenize_control(parse("w1^2", W), ["w1"], "w0", 2) == parse("w1^2", W)
    assert homogenize_control(parse("1", W), ["w1"], "w0", 2) == parse("w0^2", W)
    assert homogenize_control(parse("t*w1 + 1", W), ["w1"], "w0", 2) == parse("t*w0*w1 + w0^2", W)
    with pytest.raises(PolynomialError):
        homogenize_control(parse("w1^3", W), ["w1"], "w0", 2)


def test_ring_axioms_at_random_points():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p, q = random_poly(rng, V), random_poly(rng, V)
        pts = rng.uniform(-1.5, 1.5, size=(100, 3))
        pv, qv = p.evaluate_many(pts), q.evaluate_many(pts)
        s = (p + q).evaluate_many(pts)
        m = (p * q).evaluate_many(pts)
        assert np.allclose(s, pv + qv, rtol=1e-12, atol=1e-12 * np.abs(pv).max())
        assert np.allclose(m, pv * qv, rtol=1e-12, atol=1e-12 * np.abs(pv * qv).max())
        assert (p - p).is_zero()
        assert p * q == q * p


def test_product_rule():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p, q = random_poly(rng, V), random_poly(rng, V)
        for v in V:
            lhs = differentiate(p * q, v)
            rhs = differentiate(p, v) * q + p * differentiate(q, v)
            assert (lhs - rhs).max_abs_coefficient() <= 1e-12 * max(1.0, lhs.max_abs_coefficient())


@pytest.mark.parametrize("p", [1, 2, 3])
def test_homogenization_identity(p):
    # evaluating at w = q(u) with w0 = (1 - |w|^p)^(1/p) gives poly(u) / (1 + |u|^p)
    rng = np.random.default_rng(3 + p)
    W = ("t", "w0", "w1")
    for _ in range(10):
        terms = {}
        for _ in range(4):
            k = int(rng.integers(0, p + 1))
            terms[(int(rng.integers(0, 3)), 0, k)] = float(rng.normal())
        poly = Polynomial(W, terms)
        hom = homogenize_control(poly, ["w1"], "w0", p)
        for _ in range(10):
            t, u = rng.uniform(0, 1), abs(rng.normal()) * 10 ** rng.uniform(-2, 2)
            s = (1 + u**p) ** (1.0 / p)
            w1 = u / s
            w0 = (1 - w1**p) ** (1.0 / p)
            lhs = hom([t, w0, w1])
            rhs = poly([t, 0.0, u]) / (1 + u**p)
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))
