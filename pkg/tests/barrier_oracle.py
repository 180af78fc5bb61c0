"""Reference solver for small conic programs: primal log-barrier with exact line search.

Deliberately shares nothing with the package solver apart from the problem
container. It needs a strictly feasible starting point and is only meant for
tiny dense instances.
"""

import numpy as np
import scipy.sparse as sp
from scipy.linalg import null_space

from momentoc.conic import ConicProgram, PSDBlock


def random_program(rng, n=6, m_eq=2, n_lp=3, sizes=(3, 4)):
    """Random program that is strictly feasible on both sides.

    Returns the program and a strictly feasible primal point.
    """
    x0 = rng.normal(size=n)
    A = rng.normal(size=(m_eq, n))
    b = A @ x0
    blocks = []
    c = A.T @ rng.normal(size=m_eq)
    for k in sizes:
        F = np.zeros((k * k, n))
        for j in range(n):
            M = rng.normal(size=(k, k))
            F[:, j] = (M + M.T).ravel()
        h = np.eye(k).ravel() - F @ x0
        blocks.append(PSDBlock(k, sp.csc_matrix(F), h, label=f"b{k}"))
        G = rng.normal(size=(k, k))
        Z0 = G @ G.T + 0.5 * np.eye(k)
        c = c + F.T @ Z0.ravel()
    Fl = rng.normal(size=(n_lp, n))
    hl = 1.0 + rng.random(n_lp) - Fl @ x0
    c = c + Fl.T @ (0.5 + rng.random(n_lp))
    prog = ConicProgram(c=c, A=sp.csr_matrix(A), b=b, lp_F=sp.csr_matrix(Fl), lp_h=hl, blocks=blocks)
    return prog, x0


class BarrierOracle:
    def __init__(self, prog: ConicProgram):
        self.p = prog
        self.Fl = prog.lp_F.toarray()
        self.Fb = [blk.F.toarray() for blk in prog.blocks]
        self.A = prog.A.toarray()

    def _slacks(self, x):
        sl = self.Fl @ x + self.p.lp_h
        Ss = [(F @ x + blk.h).reshape(blk.size, blk.size) for F, blk in zip(self.Fb, self.p.blocks)]
        return sl, Ss

    def _grad_hess(self, x, t):
        g = t * self.p.c.copy()
        n = x.size
        Hm = np.zeros((n, n))
        sl, Ss = self._slacks(x)
        if sl.size:
            g -= self.Fl.T @ (1.0 / sl)
            Hm += self.Fl.T @ (self.Fl / sl[:, None] ** 2)
        for F, S, blk in zip(self.Fb, Ss, self.p.blocks):
            k = blk.size
            Si = np.linalg.inv(S)
            Fk = F.T.reshape(n, k, k)
            P = np.einsum("ab,jbc->jac", Si, Fk)  # S^{-1} F_j
            g -= np.einsum("jaa->j", P)
            Hm += np.einsum("iab,jba->ij", P, P)
        return g, Hm

    def _line_search(self, x, d, t):
        sl, Ss = self._slacks(x)
        dl = self.Fl @ d
        eigs = []
        for F, S, blk in zip(self.Fb, Ss, self.p.blocks):
            k = blk.size
            D = (F @ d).reshape(k, k)
            L = np.linalg.cholesky(S)
            Li = np.linalg.inv(L)
            eigs.append(np.linalg.eigvalsh(Li @ D @ Li.T))
        e = np.concatenate([dl / sl] + eigs)
        neg = e[e < 0]
        amax = np.inf if neg.size == 0 else -1.0 / neg.min()
        cd = t * float(self.p.c @ d)

        def dphi(a):
            return cd - np.sum(e / (1.0 + a * e))

        hi = min(amax * (1 - 1e-6), 1e6)
        if dphi(hi) < 0:
            return hi
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if dphi(mid) < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * max(1.0, hi):
                break
        return 0.5 * (lo + hi)

    def solve(self, x0, t0=1.0, mu=10.0, eps=1e-10):
        # equalities are eliminated once: x = x0 + N xi with N an orthonormal null-space basis
        N = null_space(self.A) if self.A.shape[0] else np.eye(x0.size)
        x = x0.copy()
        nu = self.p.degree
        t = t0
        while True:
            for _ in range(200):
                g, Hm = self._grad_hess(x, t)
                gr = N.T @ g
                Hr = N.T @ Hm @ N
                d = N @ np.linalg.lstsq(Hr, -gr, rcond=None)[0]
                dec = float(-g @ d)
                if dec / 2 <= 1e-14:
                    break
                a = self._line_search(x, d, t)
                x = x + a * d
            if nu / t < eps * (1.0 + abs(float(self.p.c @ x))):
                return float(self.p.c @ x), x
            t *= mu
