"""Simulation of candidate policies with impulses, and their cost.

A policy has feedback segments u = num(t, y) / den(t, y) on subintervals of
[t0, tf] and a list of impulses (time, direction, magnitude). Between impulses
the ODE y' = f(t, y, u) is integrated with fixed-step RK4. An impulse of
magnitude a in direction d is resolved in fictitious time s in [0, a] with

    dy/ds = f_p(t, y, d / |d|_p),

where f_p is the part of f of degree p in the controls: the limit of
f / (1 + |u|^p) along u = lambda d, lambda -> infinity. The cost picks up the
same limit of l along the jump. Cost terms that grow faster than |u|^p make
any impulse infinitely expensive.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, PolynomialError, parse, to_expression
from .problem import ControlProblem, problem_variables


class SimulateError(RuntimeError):
    pass


@dataclass
class Law:
    """u = num / den, componentwise, over (t, y1..yn); den None means 1."""

    num: list
    den: list

    def __call__(self, t, y):
        pt = np.concatenate([[t], y])
        u = np.empty(len(self.num))
        for i, (a, b) in enumerate(zip(self.num, self.den)):
            val = a(pt)
            if b is not None:
                q = b(pt)
                if abs(q) < 1e-12:
                    raise ZeroDivisionError
                val /= q
            u[i] = val
        return u

    def describe(self) -> str:
        parts = []
        for a, b in zip(self.num, self.den):
            parts.append(to_expression(a) if b is None else f"({to_expression(a)})/({to_expression(b)})")
        return parts[0] if len(parts) == 1 else "(" + ", ".join(parts) + ")"


@dataclass
class Segment:
    start: float
    end: float
    law: Law


@dataclass
class Impulse:
    time: float
    direction: tuple
    magnitude: float


@dataclass
class RelaxedPolicy:
    segments: list = field(default_factory=list)
    impulses: list = field(default_factory=list)
    p: int = 1


def constant_law(values, n: int) -> Law:
    V = ("t",) + tuple(f"y{i + 1}" for i in range(n))
    return Law([Polynomial.constant(V, float(v)) for v in np.atleast_1d(values)], [None] * len(np.atleast_1d(values)))


def _value(text: str) -> float:
    try:
        poly = parse(text, ())
    except PolynomialError as exc:
        raise SimulateError(f"bad number {text!r}: {exc}") from None
    return float(poly(np.zeros(0)))


def _split_commas(text: str) -> list:
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    out.append(cur)
    return [s.strip() for s in out]


def _strip_outer(text: str) -> str:
    text = text.strip()
    while text.startswith("(") and text.endswith(")"):
        depth = 0
        for i, ch in enumerate(text):
            depth += ch == "("
            depth -= ch == ")"
            if depth == 0 and i < len(text) - 1:
                return text
        text = text[1:-1].strip()
    return text


def _law_component(text: str, V) -> tuple:
    # a single top-level '/' between two parenthesized groups makes a rational law
    depth = 0
    for i, ch in enumerate(text):
        depth += ch == "("
        depth -= ch == ")"
        if ch == "/" and depth == 0:
            left, right = text[:i].strip(), text[i + 1 :].strip()
            if right.startswith("("):
                try:
                    den = parse(_strip_outer(right), V)
                except PolynomialError:
                    break
                if den.degree > 0:
                    return parse(left, V), den
            break
    return parse(text, V), None


def parse_law(text: str, n: int, m: int) -> Law:
    V = ("t",) + tuple(f"y{i + 1}" for i in range(n))
    text = text.strip()
    comps = _split_commas(_strip_outer(text)) if m > 1 else [text]
    if len(comps) != m:
        raise SimulateError(f"control law has {len(comps)} components, expected {m}")
    try:
        pairs = [_law_component(c, V) for c in comps]
    except PolynomialError as exc:
        raise SimulateError(f"bad control law {text!r}: {exc}") from None
    return Law([a for a, _ in pairs], [b for _, b in pairs])


_SEG = re.compile(r"^\(\s*(?P<a>[^,]+),\s*(?P<b>[^)]+)\)\s*:\s*u\s*=\s*(?P<law>.+)$")
_IMP = re.compile(r"^t\s*=\s*(?P<t>\S+)\s+dir\s*=\s*\((?P<d>[^)]*)\)\s+mag\s*=\s*(?P<m>\S+)$")


def loads_policy(text: str, P: ControlProblem) -> RelaxedPolicy:
    """Parse ``[segments]`` lines ``(a, b): u = expr`` and ``[impulses]`` lines
    ``t=<real> dir=(...) mag=<real>``."""
    section = None
    pol = RelaxedPolicy(p=P.p)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("segments", "impulses"):
                raise SimulateError(f"line {lineno}: unknown section [{section}]")
            continue
        if section == "segments":
            mm = _SEG.match(line)
            if not mm:
                raise SimulateError(f"line {lineno}: expected '(a, b): u = expr'")
            pol.segments.append(Segment(_value(mm["a"]), _value(mm["b"]), parse_law(mm["law"], P.n, P.m)))
        elif section == "impulses":
            mm = _IMP.match(line)
            if not mm:
                raise SimulateError(f"line {lineno}: expected 't=<real> dir=(...) mag=<real>'")
            d = tuple(_value(s) for s in mm["d"].split(","))
            if len(d) != P.m:
                raise SimulateError(f"line {lineno}: direction has {len(d)} entries, expected {P.m}")
            pol.impulses.append(Impulse(_value(mm["t"]), d, _value(mm["m"])))
        else:
            raise SimulateError(f"line {lineno}: content outside a section")
    validate_policy(pol, P)
    return pol


def dumps_policy(pol: RelaxedPolicy) -> str:
    lines = ["[segments]"]
    for s in pol.segments:
        lines.append(f"({s.start!r}, {s.end!r}): u = {s.law.describe()}")
    lines.append("[impulses]")
    for imp in pol.impulses:
        d = ", ".join(repr(float(v)) for v in imp.direction)
        lines.append(f"t={imp.time!r} dir=({d}) mag={imp.magnitude!r}")
    return "\n".join(lines) + "\n"


def validate_policy(pol: RelaxedPolicy, P: ControlProblem) -> None:
    T = P.tf - P.t0
    tol = 1e-9 * T
    if pol.segments:
        segs = sorted(pol.segments, key=lambda s: s.start)
        if abs(segs[0].start - P.t0) > tol or abs(segs[-1].end - P.tf) > tol:
            raise SimulateError("segments must cover [t0, tf]")
        for a, b in zip(segs, segs[1:]):
            if abs(a.end - b.start) > tol:
                raise SimulateError(f"segments leave a gap or overlap at t = {a.end}")
        for s in segs:
            if not s.end > s.start:
                raise SimulateError(f"empty segment ({s.start}, {s.end})")
            if len(s.law.num) != P.m:
                raise SimulateError("segment law has the wrong number of controls")
        pol.segments = segs
    for imp in pol.impulses:
        if imp.magnitude < 0:
            raise SimulateError("impulse magnitudes must be nonnegative")
        if not P.t0 - tol <= imp.time <= P.tf + tol:
            raise SimulateError(f"impulse at t = {imp.time} outside the horizon")
        if len(imp.direction) != P.m or not any(imp.direction):
            raise SimulateError("impulse direction must be a nonzero vector of control length")
        for i, v in enumerate(imp.direction):
            if P.sign and P.sign[i] and v < 0:
                raise SimulateError(f"impulse direction violates sign u{i + 1} >= 0")


# ---------------------------------------------------------------------------
# vector fields


def _control_degree_part(poly: Polynomial, P: ControlProblem, degree: int) -> Polynomial:
    V = problem_variables(P.n, P.m)
    k = 1 + P.n
    return Polynomial(V, {a: c for a, c in poly.embed(V).items() if sum(a[k:]) == degree})


def _frac_growth(num: Polynomial, den: Polynomial, P: ControlProblem) -> int:
    V = problem_variables(P.n, P.m)
    ctrl = V[1 + P.n :]
    return num.degree_in(ctrl) - den.degree_in(ctrl)


class _Model:
    def __init__(self, P: ControlProblem):
        self.P = P
        V = problem_variables(P.n, P.m)
        self.V = V
        self.f = [fi.embed(V) for fi in P.f]
        self.l = P.l.embed(V)
        self.fracs = [(a.embed(V), b.embed(V)) for a, b in P.fracs]
        self.f_inf = [_control_degree_part(fi, P, P.p) for fi in P.f]
        self.l_inf = _control_degree_part(P.l, P, P.p)
        # frac terms at infinity: growth above p is infinite, equal to p keeps the leading ratio
        self.frac_inf = []
        self.superlinear = []
        for a, b in self.fracs:
            g = _frac_growth(a, b, P)
            ctrl = V[1 + P.n :]
            if g > P.p:
                self.superlinear.append(f"({to_expression(a)})/({to_expression(b)})")
            elif g == P.p:
                da, db = a.degree_in(ctrl), b.degree_in(ctrl)
                self.frac_inf.append((_control_degree_part(a, P, da), _control_degree_part(b, P, db)))

    def point(self, t, y, u):
        return np.concatenate([[t], y, u, np.abs(u)])

    def rhs(self, t, y, u):
        pt = self.point(t, y, u)
        dy = np.array([fi(pt) for fi in self.f])
        cost = self.l(pt) + sum(a(pt) / b(pt) for a, b in self.fracs)
        return dy, cost

    def rhs_jump(self, t, y, d):
        pt = self.point(t, y, d)
        dy = np.array([fi(pt) for fi in self.f_inf])
        cost = self.l_inf(pt) + sum(a(pt) / b(pt) for a, b in self.frac_inf)
        return dy, cost


@dataclass
class SimulationResult:
    samples: np.ndarray  # columns t, s (fictitious), y1..yn, u1..um
    cost: float
    violations: dict
    endpoint: np.ndarray
    endpoint_error: float | None
    warnings: list
    steps: int

    @property
    def max_violation(self) -> float:
        return max(self.violations.values(), default=0.0)


def _constraints(P: ControlProblem):
    V = problem_variables(P.n, P.m)
    out = []
    for i, g in enumerate(P.state_set):
        if P.auto_ball and i == len(P.state_set) - 1:
            continue
        out.append((f"g{i + 1}", g.embed(V)))
    return out


def simulate(P: ControlProblem, pol: RelaxedPolicy, step: float = 1e-4, record_every: int = 1) -> SimulationResult:
    """Integrate the policy; ``step`` is the RK4 step relative to tf - t0."""
    validate_policy(pol, P)
    model = _Model(P)
    T = P.tf - P.t0
    hmax = step * T
    y = np.array(P.y0.point, dtype=float) if P.y0.kind == "fixed" else None
    if y is None:
        raise SimulateError("simulation needs a fixed initial state")
    cons = _constraints(P)
    viol = {lab: 0.0 for lab, _ in cons}
    for s in P.states:
        if s in P.boxes:
            viol[f"box_{s}"] = 0.0
    warnings = []
    zero = constant_law(np.zeros(P.m), P.n)
    segs = pol.segments or [Segment(P.t0, P.tf, zero)]
    clipped = set()
    rows = []
    cost = 0.0
    nsteps = 0

    def check(t, yv, s, u):
        if not np.all(np.isfinite(yv)) or np.max(np.abs(yv)) > 1e9:
            raise SimulateError(f"state blew up at t = {t}")
        pt = model.point(t, yv, u)
        for lab, g in cons:
            viol[lab] = max(viol[lab], -g(pt))
        for i, st in enumerate(P.states):
            if st in P.boxes:
                lo, hi = P.boxes[st]
                viol[f"box_{st}"] = max(viol[f"box_{st}"], lo - yv[i], yv[i] - hi)

    def record(t, s, yv, u, force=False):
        if force or nsteps % record_every == 0:
            rows.append(np.concatenate([[t, s], yv, u]))

    def control(seg_idx, t, yv):
        seg = segs[seg_idx]
        if seg_idx in clipped:
            return np.zeros(P.m)
        try:
            return seg.law(t, yv)
        except ZeroDivisionError:
            clipped.add(seg_idx)
            warnings.append(f"feedback denominator vanished at t = {t!r}; segment clipped to zero control")
            return np.zeros(P.m)

    def jump(t, yv, imp):
        nonlocal cost, nsteps
        d = np.asarray(imp.direction, dtype=float)
        d = d / np.sum(np.abs(d) ** P.p) ** (1.0 / P.p)
        if imp.magnitude > 0 and model.superlinear:
            warnings.append("impulse under a cost growing faster than |u|^p: cost is infinite")
            cost = math.inf
        k = max(1, math.ceil(imp.magnitude / hmax - 1e-9))
        hs = imp.magnitude / k
        s = 0.0
        for _ in range(k):
            def F(yy):
                return model.rhs_jump(t, yy, d)
            k1, c1 = F(yv)
            k2, c2 = F(yv + 0.5 * hs * k1)
            k3, c3 = F(yv + 0.5 * hs * k2)
            k4, c4 = F(yv + hs * k3)
            yv = yv + hs / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if math.isfinite(cost):
                cost += hs / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4)
            s += hs
            nsteps += 1
            check(t, yv, s, d)
            record(t, s, yv, d)
        return yv

    # event times
    imps = sorted(pol.impulses, key=lambda im: im.time)
    breaks = sorted({P.t0, P.tf} | {s.start for s in segs} | {s.end for s in segs} | {im.time for im in imps})
    breaks = [b for b in breaks if P.t0 <= b <= P.tf]
    t = P.t0
    u0 = control(0, t, y)
    check(t, y, 0.0, u0)
    record(t, 0.0, y, u0, force=True)
    ii = 0
    for bi, tb in enumerate(breaks):
        if tb > t:
            seg_idx = next(i for i, s in enumerate(segs) if s.start <= 0.5 * (t + tb) <= s.end)
            k = max(1, math.ceil((tb - t) / hmax - 1e-9))
            h = (tb - t) / k
            ta = t
            def F(tt, yy):
                u = control(seg_idx, tt, yy)
                return model.rhs(tt, yy, u)

            def rk4(tt, yy, hh, depth=0):
                # halve steps where the field is steep (integrable feedback singularities)
                k1, c1 = F(tt, yy)
                if depth < 48 and hh * np.max(np.abs(k1), initial=0.0) > 1e-3 * (1.0 + np.max(np.abs(yy))):
                    y_mid, c_a = rk4(tt, yy, hh / 2, depth + 1)
                    y_end, c_b = rk4(tt + hh / 2, y_mid, hh / 2, depth + 1)
                    return y_end, c_a + c_b
                k2, c2 = F(tt + hh / 2, yy + 0.5 * hh * k1)
                k3, c3 = F(tt + hh / 2, yy + 0.5 * hh * k2)
                k4, c4 = F(tt + hh, yy + hh * k3)
                return yy + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), hh / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4)

            for j in range(k):
                tj = ta + j * h
                y, dc = rk4(tj, y, h)
                if math.isfinite(cost):
                    cost += dc
                nsteps += 1
                tn = ta + (j + 1) * h
                u = control(seg_idx, tn, y) if tn < segs[seg_idx].end else control(seg_idx, tn - 1e-15, y)
                check(tn, y, 0.0, u)
                record(tn, 0.0, y, u)
            t = tb
        while ii < len(imps) and imps[ii].time <= tb + 1e-12 * T:
            y = jump(t, y, imps[ii])
            ii += 1
    err = None
    if P.yf.kind == "fixed":
        err = float(np.max(np.abs(y - np.array(P.yf.point, dtype=float))))
    return SimulationResult(np.array(rows), float(cost), viol, y, err, warnings, nsteps)


def cost(P: ControlProblem, pol: RelaxedPolicy, step: float = 1e-4) -> float:
    return simulate(P, pol, step, record_every=10**9).cost


def write_csv(res: SimulationResult, P: ControlProblem, fh) -> None:
    cols = ["t_physical", "t_fictitious"] + list(P.states) + ["u_applied" if P.m == 1 else f"u{i + 1}_applied" for i in range(P.m)]
    fh.write(",".join(cols) + "\n")
    for row in res.samples:
        fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# candidate policies for the shipped problems


def candidate(name: str, P: ControlProblem) -> RelaxedPolicy:
    if name == "impulse":
        return RelaxedPolicy([], [Impulse(0.5, (1.0,), 1.0)], P.p)
    if name == "smeared":
        # many small impulses approach y = t with vanishing cost
        k = 200
        return RelaxedPolicy([], [Impulse((i + 0.5) / k, (1.0,), 1.0 / k) for i in range(k)], P.p)
    if name == "rendezvous":
        t1 = 1.0 / math.pi
        text = (
            "[segments]\n"
            f"(0, {t1!r}): u = 0\n"
            f"({t1!r}, 0.5): u = (pi*y1)/(2*y2+1)\n"
            "(0.5, 1): u = 0\n"
            "[impulses]\n"
            f"t=0 dir=(1) mag={0.5 * math.tan(0.5)!r}\n"
            f"t={t1!r} dir=(-1) mag=0.2269\n"
        )
        return loads_policy(text, P)
    if name == "weierstrass":
        # steep ramp of width 2*delta around t = 0: cost 2*delta/3
        delta = 0.01
        text = (
            "[segments]\n"
            f"(-1, {-delta!r}): u = 0\n"
            f"({-delta!r}, {delta!r}): u = {1.0 / delta!r}\n"
            f"({delta!r}, 1): u = 0\n"
        )
        return loads_policy(text, P)
    if name == "weierstrass-regularized":
        # stationary point of the regularized cost: u = c / (t^2 + eps)
        eps = _regularization(P)
        c = 2.0 / ((2.0 / math.sqrt(eps)) * math.atan(1.0 / math.sqrt(eps)))
        text = f"[segments]\n(-1, 1): u = ({c!r})/(t^2+{eps!r})\n"
        return loads_policy(text, P)
    raise SimulateError(f"no candidate policy for {name!r}")


def _regularization(P: ControlProblem) -> float:
    V = problem_variables(P.n, P.m)
    alpha = [0] * len(V)
    alpha[V.index("u1")] = 2
    return float(P.l.coefficient(tuple(alpha)))
