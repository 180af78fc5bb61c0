"""Truncated moment relaxations of the compactified problem.

The relaxation of order d has one moment vector per measure:

* ``gamma``: the occupation measure on G (time, state, compactified control, lifts),
* ``mu_f`` / ``mu_0``: terminal / initial measures when the boundary is free.

Each inequality g >= 0 of G gives a localizing block of order
d - ceil(deg g / 2); g = 1 gives the moment matrix. The weak dynamics give one
linear row per test monomial v(t, y).

Equality constraints h = 0 on G are handled in the quotient ring when their
leading monomials are pairwise coprime (then they are a Groebner basis for a
degree-compatible order): moments are indexed by standard monomials only and
every other monomial is rewritten through its normal form. This is the same
relaxation as imposing the rows l(h x^a) = 0, but the PSD blocks lose the
null directions those rows would create. Otherwise the rows are added
explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

from .compactify import CompactifiedProblem
from .conic import ConicProgram, PSDBlock
from .poly import Polynomial, differentiate, grlex_key, monomials_upto, to_expression


class RelaxError(ValueError):
    pass


@dataclass
class MomentIndexing:
    variables: tuple
    order: int
    basis: list
    position: dict

    @classmethod
    def build(cls, variables, order: int) -> "MomentIndexing":
        basis = monomials_upto(len(variables), 2 * order)
        return cls(tuple(variables), order, basis, {a: i for i, a in enumerate(basis)})

    def __len__(self):
        return len(self.basis)


class Reducer:
    """Normal forms modulo equalities with pairwise coprime leading monomials."""

    def __init__(self, variables, equalities, priority=None):
        self.variables = tuple(variables)
        nv = len(self.variables)
        order = list(priority) if priority is not None else list(range(nv))
        self.perm = order
        self.rules = []
        for h in equalities:
            if h.is_zero():
                continue
            h = h.embed(self.variables)
            lm = max(h.terms, key=self.key)
            c = h.coefficient(lm)
            tail = [(a, -v / c) for a, v in h.items() if a != lm]
            self.rules.append((lm, tail))
        self.exact = True
        for i in range(len(self.rules)):
            for j in range(i + 1, len(self.rules)):
                a, b = self.rules[i][0], self.rules[j][0]
                if any(x and y for x, y in zip(a, b)):
                    self.exact = False
        if not self.exact:
            self.rules = []
        self._cache = {}

    def key(self, alpha):
        return (sum(alpha), tuple(alpha[i] for i in self.perm))

    def is_standard(self, alpha) -> bool:
        return not any(all(x >= y for x, y in zip(alpha, lm)) for lm, _ in self.rules)

    def nf(self, alpha) -> dict:
        alpha = tuple(alpha)
        hit = self._cache.get(alpha)
        if hit is not None:
            return hit
        for lm, tail in self.rules:
            if all(x >= y for x, y in zip(alpha, lm)):
                beta = tuple(x - y for x, y in zip(alpha, lm))
                out: dict = {}
                for g, c in tail:
                    for k, v in self.nf(tuple(x + y for x, y in zip(beta, g))).items():
                        out[k] = out.get(k, 0.0) + c * v
                out = {k: v for k, v in out.items() if v != 0.0}
                break
        else:
            out = {alpha: 1.0}
        self._cache[alpha] = out
        return out

    def reduce(self, poly: Polynomial) -> dict:
        out: dict = {}
        for a, c in poly.items():
            for k, v in self.nf(a).items():
                out[k] = out.get(k, 0.0) + c * v
        return {k: v for k, v in out.items() if abs(v) > 0.0}


def _priority(variables) -> list:
    lifts = [i for i, v in enumerate(variables) if v[0] in "qr"]
    w0 = [i for i, v in enumerate(variables) if v == "w0"]
    rest = [i for i in range(len(variables)) if i not in lifts and i not in w0]
    return lifts + w0 + rest


@dataclass
class Measure:
    name: str
    variables: tuple
    reducer: Reducer
    standard: list
    position: dict
    offset: int = 0

    def __len__(self):
        return len(self.standard)

    def column(self, alpha) -> dict:
        """Reduced-moment coefficients of the monomial alpha: {global column: coef}."""
        return {self.offset + self.position[k]: v for k, v in self.reducer.nf(alpha).items()}

    def linear(self, poly: Polynomial) -> dict:
        out: dict = {}
        for a, c in poly.embed(self.variables).items():
            for k, v in self.column(a).items():
                out[k] = out.get(k, 0.0) + c * v
        return {k: v for k, v in out.items() if v != 0.0}


def _make_measure(name, variables, equalities, order) -> Measure:
    red = Reducer(variables, equalities, _priority(variables))
    std = [a for a in monomials_upto(len(variables), 2 * order) if red.is_standard(a)]
    return Measure(name, tuple(variables), red, std, {a: i for i, a in enumerate(std)})


class LocalizingMap:
    """Linear map from moments to the symmetric matrix [l(g x^(a+b))]_(a,b)."""

    def __init__(self, F: sp.csc_matrix, size: int, basis: list, g: Polynomial, label=""):
        self.F = F
        self.size = size
        self.basis = basis
        self.g = g
        self.label = label

    def __call__(self, z) -> np.ndarray:
        return (self.F @ np.asarray(z, dtype=float)).reshape(self.size, self.size)


def _localizing(g: Polynomial, measure: Measure, d_block: int, ncols: int, basis=None, label="") -> LocalizingMap:
    if basis is None:
        basis = [a for a in monomials_upto(len(measure.variables), d_block) if measure.reducer.is_standard(a)]
    nb = len(basis)
    gt = list(g.embed(measure.variables).items())
    rows, cols, vals = [], [], []
    for i in range(nb):
        bi = basis[i]
        for j in range(i, nb):
            bj = basis[j]
            base = tuple(x + y for x, y in zip(bi, bj))
            acc: dict = {}
            for gam, c in gt:
                for k, v in measure.column(tuple(x + y for x, y in zip(base, gam))).items():
                    acc[k] = acc.get(k, 0.0) + c * v
            for k, v in acc.items():
                if v == 0.0:
                    continue
                rows.append(i * nb + j)
                cols.append(k)
                vals.append(v)
                if i != j:
                    rows.append(j * nb + i)
                    cols.append(k)
                    vals.append(v)
    F = sp.csc_matrix((vals, (rows, cols)), shape=(nb * nb, ncols))
    F.sum_duplicates()
    return LocalizingMap(F, nb, basis, g, label)


def moment_matrix_map(g: Polynomial, indexing: MomentIndexing, d_block: int) -> LocalizingMap:
    """Localizing map of g over the full monomial basis (no quotient reduction)."""
    if g.degree + 2 * d_block > 2 * indexing.order:
        raise RelaxError(
            f"degree overflow: deg g = {g.degree} with block order {d_block} exceeds 2d = {2 * indexing.order}"
        )
    red = Reducer(indexing.variables, [])
    meas = Measure("full", indexing.variables, red, indexing.basis, indexing.position)
    return _localizing(g, meas, d_block, len(indexing.basis))


@dataclass
class TestRow:
    alpha: tuple  # exponent of v over (t, y)
    generator: Polynomial  # A'v over the compactified variables
    terminal: Polynomial | None  # v restricted to the terminal support, over mu_f variables
    initial: Polynomial | None  # v restricted to the initial support, over mu_0 variables
    rhs: float


def _boundary_variables(cp: CompactifiedProblem, which: str) -> tuple:
    B = cp.yf if which == "f" else cp.y0
    names = ()
    if which == "f" and cp.tf_min is not None:
        names += ("t",)
    if B.kind == "free":
        names += cp.states
    return names


def test_constraints(cp: CompactifiedProblem, d: int) -> list:
    """Weak-dynamics rows l(dv/dt * rho + dv/dy . f_hat) = boundary terms, one per test monomial."""
    V = cp.variables
    TY = ("t",) + cp.states
    Vf = _boundary_variables(cp, "f")
    V0 = _boundary_variables(cp, "0")
    rows = []
    maxdeg = 2 * d + 1
    for a in monomials_upto(len(TY), maxdeg):
        v = Polynomial.monomial(TY, a).embed(V)
        gen = differentiate(v, "t") * cp.time_density
        for i, s in enumerate(cp.states):
            dv = differentiate(v, s)
            if not dv.is_zero():
                gen = gen + dv * cp.f_hat[i]
        if gen.degree > 2 * d:
            continue
        vTY = Polynomial.monomial(TY, a)
        rhs = 0.0
        term = init = None
        # terminal side: + v(1, yf) or l_f(v)
        if Vf:
            if len(Vf) and sum(a) > 2 * d:
                continue
            sub = {}
            if "t" not in Vf:
                sub["t"] = 1.0
            if cp.yf.kind == "fixed":
                for i, s in enumerate(cp.states):
                    sub[s] = cp.yf.point[i]
            term = vTY.substitute(sub, Vf) if sub else vTY.embed(Vf)
        else:
            pt = np.concatenate([[1.0], cp.yf.point])
            rhs += vTY(pt)
        if cp.y0.kind == "fixed":
            pt = np.concatenate([[0.0], cp.y0.point])
            rhs -= vTY(pt)
        elif cp.y0.kind == "moments":
            mom = cp.y0.moment_map()
            v0 = vTY.substitute({"t": 0.0}, cp.states)
            for b, c in v0.items():
                if b not in mom:
                    raise RelaxError(
                        f"initial distribution needs the moment of {to_expression(Polynomial.monomial(cp.states, b))}"
                    )
                rhs -= c * mom[b]
        else:
            if sum(a) > 2 * d:
                continue
            init = vTY.substitute({"t": 0.0}, V0)
        if gen.is_zero() and (term is None or term.is_zero()) and (init is None or init.is_zero()) and rhs == 0.0:
            continue
        rows.append(TestRow(a, gen, term, init, rhs))
    return rows


def ideal_rows(cp: CompactifiedProblem, d: int) -> list:
    """Explicit rows l(h x^a) = 0 for every equality h, as polynomials."""
    out = []
    for lab, h in cp.equalities:
        for a in monomials_upto(len(cp.variables), 2 * d - h.degree):
            out.append((lab, a, h * Polynomial.monomial(cp.variables, a)))
    return out


def min_order(cp: CompactifiedProblem) -> int:
    """Smallest order whose moments cover every data polynomial."""
    deg = cp.degree()
    for rows_deg in [cp.time_density.degree] + [f.degree for f in cp.f_hat]:
        deg = max(deg, rows_deg)
    return max(1, math.ceil(deg / 2))


@dataclass
class RelaxOptions:
    mass_bound: float | None = None
    free_terminal: bool = False


@dataclass
class BlockInfo:
    label: str
    measure: str
    g: Polynomial
    basis: list
    lp: bool = False


@dataclass
class Relaxation:
    cp: CompactifiedProblem
    order: int
    measures: dict
    program: ConicProgram
    rows: list
    block_info: list
    lp_info: list
    mass_bound: float | None
    explicit_ideal: bool = False
    ncols: int = 0
    row_origin: list = field(default_factory=list)

    @property
    def gamma(self) -> Measure:
        return self.measures["gamma"]

    def moment(self, x, alpha, measure="gamma") -> float:
        meas = self.measures[measure]
        return float(sum(v * x[k] for k, v in meas.column(tuple(alpha)).items()))

    def expectation(self, x, poly: Polynomial, measure="gamma") -> float:
        meas = self.measures[measure]
        return float(sum(v * x[k] for k, v in meas.linear(poly).items()))

    def full_moments(self, x, measure="gamma") -> np.ndarray:
        """Moments of every monomial of degree <= 2d (graded lex order)."""
        meas = self.measures[measure]
        return np.array([self.moment(x, a, measure) for a in monomials_upto(len(meas.variables), 2 * self.order)])

    def mass(self, x) -> float:
        return self.moment(x, (0,) * len(self.cp.variables))

    def summary(self) -> dict:
        return dict(
            order=self.order,
            variables=list(self.cp.variables),
            moments=self.program.n,
            rows=self.program.A.shape[0],
            blocks=[(b.label, b.measure, len(b.basis)) for b in self.block_info],
            lp_rows=len(self.lp_info),
        )


def assemble(cp: CompactifiedProblem, d: int, options: RelaxOptions | None = None) -> Relaxation:
    opts = options or RelaxOptions()
    d0 = min_order(cp)
    if d < d0:
        raise RelaxError(f"order {d} is below the first admissible order {d0}")
    if opts.free_terminal and cp.yf.kind != "free":
        from dataclasses import replace

        from .problem import Boundary

        cp = replace(cp, yf=Boundary("free"))
    eqs = [h for _, h in cp.equalities]
    gamma = _make_measure("gamma", cp.variables, eqs, d)
    explicit = not gamma.reducer.exact
    measures = {"gamma": gamma}
    offset = len(gamma)
    Vf = _boundary_variables(cp, "f")
    V0 = _boundary_variables(cp, "0")
    for name, vars_ in (("mu_f", Vf), ("mu_0", V0)):
        if vars_:
            mm = _make_measure(name, vars_, [], d)
            mm.offset = offset
            offset += len(mm)
            measures[name] = mm
    N = offset

    # objective
    c = np.zeros(N)
    for k, v in gamma.linear(cp.l_hat).items():
        c[k] += v

    # equality rows
    rows = test_constraints(cp, d)
    A_rows, A_cols, A_vals, b = [], [], [], []
    origin = []  # what each equality row encodes, aligned with A
    r = 0
    for row in rows:
        acc = dict(gamma.linear(row.generator))
        if row.terminal is not None:
            for k, v in measures["mu_f"].linear(row.terminal).items():
                acc[k] = acc.get(k, 0.0) - v
        if row.initial is not None:
            for k, v in measures["mu_0"].linear(row.initial).items():
                acc[k] = acc.get(k, 0.0) + v
        acc = {k: v for k, v in acc.items() if v != 0.0}
        if not acc:
            if abs(row.rhs) > 1e-12:
                raise RelaxError(f"inconsistent boundary data for test monomial {row.alpha}")
            continue
        for k, v in acc.items():
            A_rows.append(r)
            A_cols.append(k)
            A_vals.append(v)
        b.append(row.rhs)
        origin.append(("test", row))
        r += 1
    if "mu_f" in measures and "mu_0" in measures:
        A_rows.append(r)
        A_cols.append(measures["mu_0"].offset)
        A_vals.append(1.0)
        b.append(1.0)
        origin.append(("normalization", None))
        r += 1
    if explicit:
        for lab, a, hx in ideal_rows(cp, d):
            acc = gamma.linear(hx)
            for k, v in acc.items():
                A_rows.append(r)
                A_cols.append(k)
                A_vals.append(v)
            b.append(0.0)
            origin.append(("ideal", hx))
            r += 1
    A = sp.csr_matrix((A_vals, (A_rows, A_cols)), shape=(r, N))

    # PSD blocks
    blocks, info = [], []
    for lab, g in cp.inequalities:
        db = d - math.ceil(g.degree / 2)
        if db < 0:
            raise RelaxError(f"constraint {lab} has degree above 2d")
        lm = _localizing(g, gamma, db, N, label=lab)
        if lm.size == 0:
            continue
        blocks.append(PSDBlock(lm.size, lm.F, np.zeros(lm.size * lm.size), label=f"gamma:{lab}"))
        info.append(BlockInfo(lab, "gamma", g, lm.basis))
    for name in ("mu_f", "mu_0"):
        if name not in measures:
            continue
        mm = measures[name]
        one = Polynomial.constant(mm.variables, 1.0)
        glist = [("moment", one)]
        if "t" in mm.variables:
            tv = Polynomial.variable(mm.variables, "t")
            glist.append(("time", (tv - cp.tf_min) * (1.0 - tv)))
        if any(s in mm.variables for s in cp.states):
            for lab, g in cp.state_inequalities:
                # state constraints involve only y, so the other variables can be dropped
                drop = {v: 0.0 for v in cp.variables if v not in mm.variables}
                glist.append((lab, g.substitute(drop, mm.variables)))
            ball = one * (len(mm.variables) * 1.1)
            for v in mm.variables:
                ball = ball - Polynomial.variable(mm.variables, v) ** 2
            glist.append(("ball", ball))
        for lab, g in glist:
            db = d - math.ceil(g.degree / 2)
            lm = _localizing(g, mm, db, N, label=lab)
            blocks.append(PSDBlock(lm.size, lm.F, np.zeros(lm.size * lm.size), label=f"{name}:{lab}"))
            info.append(BlockInfo(lab, name, g, lm.basis))

    # scalar inequalities
    mass_bound = opts.mass_bound if opts.mass_bound is not None else cp.mass_bound
    lp_rows, lp_h, lp_info = [], [], []
    if mass_bound is not None:
        row = {k: -cp.scaling.T * v for k, v in gamma.linear(cp.norm_poly).items()}
        lp_rows.append(row)
        lp_h.append(float(mass_bound))
        lp_info.append("mass_bound")
    if lp_rows:
        rr, cc, vv = [], [], []
        for i, row in enumerate(lp_rows):
            for k, v in row.items():
                rr.append(i)
                cc.append(k)
                vv.append(v)
        lp_F = sp.csr_matrix((vv, (rr, cc)), shape=(len(lp_rows), N))
    else:
        lp_F = None
    prog = ConicProgram(
        c=c, A=A, b=np.array(b), lp_F=lp_F, lp_h=np.array(lp_h) if lp_rows else None,
        blocks=blocks, lp_labels=lp_info, mass_index=gamma.offset + gamma.position[(0,) * len(cp.variables)],
        mass_start=3.0,  # unit internal horizon plus two units of jump mass
    )
    return Relaxation(cp, d, measures, prog, rows, info, lp_info, mass_bound, explicit, N, origin)


def write_sparse(rel: Relaxation, fh) -> None:
    """Plain-text dump: header lines start with '#', then one line per nonzero
    ``block row col moment-index coefficient``. Block 0 holds the objective
    (row 0) and the equality rows (row i+1, col 0, right-hand side in
    column -1); PSD blocks are numbered from 1; the scalar cone is block -1.
    """
    prog = rel.program
    fh.write(f"# moments {prog.n}\n# equality_rows {prog.A.shape[0]}\n")
    fh.write(f"# psd_blocks {len(prog.blocks)} sizes {' '.join(str(b.size) for b in prog.blocks)}\n")
    fh.write(f"# lp_rows {prog.lp_F.shape[0]}\n")
    for k in np.flatnonzero(prog.c):
        fh.write(f"0 0 0 {k} {prog.c[k]!r}\n")
    A = prog.A.tocoo()
    for i, k, v in sorted(zip(A.row, A.col, A.data)):
        fh.write(f"0 {i + 1} 0 {k} {v!r}\n")
    for i, v in enumerate(prog.b):
        if v != 0.0:
            fh.write(f"0 {i + 1} 0 -1 {v!r}\n")
    for bi, blk in enumerate(prog.blocks, 1):
        F = blk.F.tocoo()
        for rr, k, v in sorted(zip(F.row, F.col, F.data)):
            a, bb = divmod(int(rr), blk.size)
            if a <= bb:
                fh.write(f"{bi} {a} {bb} {k} {v!r}\n")
    F = prog.lp_F.tocoo()
    for rr, k, v in sorted(zip(F.row, F.col, F.data)):
        fh.write(f"-1 {rr} 0 {k} {v!r}\n")
    for rr, v in enumerate(prog.lp_h):
        fh.write(f"-1 {rr} 0 -1 {v!r}\n")
