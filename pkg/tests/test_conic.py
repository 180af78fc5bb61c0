import numpy as np
import pytest
import scipy.sparse as sp

from barrier_oracle import BarrierOracle, random_program
from momentoc.conic import ConicProgram, PSDBlock, Settings, Status, detect_unbounded, solve


def test_two_by_two_eigenvalue_problem():
    # min z  s.t. [[1, z], [z, 1]] >= 0
    F = sp.csc_matrix(np.array([[0.0], [1.0], [1.0], [0.0]]))
    prog = ConicProgram(c=np.array([1.0]), A=sp.csr_matrix((0, 1)), b=np.zeros(0),
                        blocks=[PSDBlock(2, F, np.eye(2).ravel())])
    sol = solve(prog)
    assert sol.status == Status.OPTIMAL
    assert abs(sol.x[0] + 1.0) < 1e-7
    lam = np.linalg.eigvalsh(sol.Z[0])
    assert lam[0] < 1e-6 * lam[1]  # rank one


def test_simplex_lp():
    c = np.array([3.0, -1.0, 2.0, 0.5])
    prog = ConicProgram(c=c, A=sp.csr_matrix(np.ones((1, 4))), b=np.ones(1),
                        lp_F=sp.identity(4, format="csr"), lp_h=np.zeros(4))
    sol = solve(prog)
    assert sol.status == Status.OPTIMAL
    assert abs(sol.primal_objective - c.min()) < 1e-7


def oracle_cases():
    rng = np.random.default_rng(2024)
    cases = []
    for k in range(20):
        n = int(rng.integers(3, 7))
        m_eq = int(rng.integers(0, 3))
        n_lp = int(rng.integers(0, 4))
        sizes = tuple(int(s) for s in rng.integers(2, 5, size=int(rng.integers(1, 3))))
        cases.append(random_program(rng, n, m_eq, n_lp, sizes))
    return cases


def test_matches_barrier_oracle():
    worst = 0.0
    for prog, x0 in oracle_cases():
        ref, _ = BarrierOracle(prog).solve(x0)
        sol = solve(prog)
        assert sol.status == Status.OPTIMAL
        rel = abs(sol.primal_objective - ref) / max(1.0, abs(ref))
        worst = max(worst, rel)
    assert worst <= 1e-6


def test_oracle_agrees_on_known_answers():
    # the reference itself on the 2x2 problem
    F = sp.csc_matrix(np.array([[0.0], [1.0], [1.0], [0.0]]))
    prog = ConicProgram(c=np.array([1.0]), A=sp.csr_matrix((0, 1)), b=np.zeros(0),
                        blocks=[PSDBlock(2, F, np.eye(2).ravel())])
    val, _ = BarrierOracle(prog).solve(np.array([0.0]))
    assert abs(val + 1.0) < 1e-8


def _svec_map(k):
    """Columns of F map upper-triangle coordinates to vec(X)."""
    cols = []
    for i in range(k):
        for j in range(i, k):
            E = np.zeros((k, k))
            E[i, j] = E[j, i] = 1.0
            cols.append(E.ravel())
    return np.array(cols).T


def test_self_duality():
    # min <C, X> s.t. <A_i, X> = b_i, X >= 0   versus   max b'y s.t. C - sum y_i A_i >= 0
    rng = np.random.default_rng(5)
    for _ in range(5):
        k, m = 4, 3
        X0 = rng.normal(size=(k, k))
        X0 = X0 @ X0.T + np.eye(k)
        As = []
        for _ in range(m):
            M = rng.normal(size=(k, k))
            As.append(M + M.T)
        b = np.array([np.sum(Ai * X0) for Ai in As])
        G = rng.normal(size=(k, k))
        C = G @ G.T + np.eye(k) + sum(rng.normal() * Ai for Ai in As)
        S = _svec_map(k)
        primal = ConicProgram(c=S.T @ C.ravel(), A=sp.csr_matrix(np.array([S.T @ Ai.ravel() for Ai in As])), b=b,
                              blocks=[PSDBlock(k, sp.csc_matrix(S), np.zeros(k * k))])
        dual = ConicProgram(c=-b, A=sp.csr_matrix((0, m)), b=np.zeros(0),
                            blocks=[PSDBlock(k, sp.csc_matrix(-np.array([Ai.ravel() for Ai in As]).T), C.ravel())])
        sp_, sd = solve(primal), solve(dual)
        assert sp_.status == sd.status == Status.OPTIMAL
        assert abs(sp_.primal_objective + sd.primal_objective) <= 1e-7 * max(1.0, abs(sp_.primal_objective))


def test_deterministic():
    prog, _ = oracle_cases()[3]
    a, b = solve(prog), solve(prog)
    assert a.iterations == b.iterations
    assert np.array_equal(a.x, b.x)


def test_weak_duality_on_random_programs():
    for prog, _ in oracle_cases()[:10]:
        sol = solve(prog)
        assert sol.dual_objective <= sol.primal_objective + 1e-7 * (1 + abs(sol.primal_objective))


def test_iteration_limit_reports_status():
    prog, _ = oracle_cases()[0]
    sol = solve(prog, Settings(max_iter=2))
    assert sol.status in (Status.MAX_ITER, Status.INACCURATE)
    assert sol.iterations == 2


def test_detect_unbounded_on_synthetic_traces():
    grow = [dict(pres=1e-9, primal=1.0 - 0.01 * i, mass=2.0 * 1.5**i) for i in range(20)]
    assert detect_unbounded(grow)["unbounded"]
    flat = [dict(pres=1e-9, primal=1.0 - 0.01 * i, mass=2.0) for i in range(20)]
    assert not detect_unbounded(flat)["unbounded"]
    assert not detect_unbounded(grow[:3])["unbounded"]


def test_bad_dimensions():
    with pytest.raises(ValueError):
        PSDBlock(2, sp.csc_matrix(np.zeros((3, 1))), np.zeros(4))
