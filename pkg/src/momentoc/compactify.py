"""Compactification of the control space and the homogenized problem on a compact set.

Controls u in R^m are mapped to the unit p-ball through

    w = u / (1 + |u|_p^p)^(1/p),    w0 = 1 / (1 + |u|_p^p)^(1/p),

so that w0 = 0 represents controls at infinity. Cost and dynamics are
divided by 1 + |u|_p^p, which turns them into polynomials in (w0, w) that are
homogeneous of degree p in the control variables. Time is rescaled to [0, 1]
and each state coordinate to [-1, 1].

Control modes:

* ``square``  (p = 1, u >= 0): u_i = v_i^2, which gives w0^2 + sum w_i^2 = 1.
* ``affine``  (p = 1, u >= 0): w0 = 1 - sum w_i is eliminated.
* ``abs``     (p = 1, signed): r_i = |w_i| with r_i^2 = w_i^2, w0 = 1 - sum r_i.
* ``ball``    (p >= 2): w0 is kept with w0^p + sum |w_i|^p = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, PolynomialError, homogenize_control, to_expression
from .problem import Boundary, ControlProblem, ProblemError, state_bounds


class CompactifyError(ValueError):
    pass


@dataclass(frozen=True)
class AtInfinity:
    """Control point at infinity in the given direction."""

    direction: tuple

    def __post_init__(self):
        object.__setattr__(self, "direction", tuple(float(v) for v in np.ravel(self.direction)))


def _pnorm_p(u, p):
    return float(np.sum(np.abs(u) ** p))


def u_to_w(u, p: int):
    """Map a control (or :class:`AtInfinity`) to (w0, w) on the unit p-ball."""
    if isinstance(u, AtInfinity):
        d = np.asarray(u.direction, dtype=float)
        nrm = _pnorm_p(d, p) ** (1.0 / p)
        if nrm == 0:
            raise CompactifyError("direction at infinity must be nonzero")
        return 0.0, d / nrm
    u = np.atleast_1d(np.asarray(u, dtype=float))
    # scale-safe evaluation of (1 + |u|^p)^(1/p)
    umax = float(np.max(np.abs(u))) if u.size else 0.0
    if umax > 1.0:
        s = umax * ((1.0 / umax) ** p + _pnorm_p(u / umax, p)) ** (1.0 / p)
    else:
        s = (1.0 + _pnorm_p(u, p)) ** (1.0 / p)
    return 1.0 / s, u / s


def w_to_u(w0: float, w, p: int, tol: float = 1e-9):
    """Inverse of :func:`u_to_w`; returns a vector or an :class:`AtInfinity`."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if w0 < -tol:
        raise CompactifyError(f"w0 = {w0} is negative")
    if abs(max(w0, 0.0) ** p + _pnorm_p(w, p) - 1.0) > tol:
        raise CompactifyError("(w0, w) does not lie on the unit p-sphere")
    if w0 <= 0.0:
        return AtInfinity(tuple(w))
    # w / w0 equals w / (1 - |w|^p)^(1/p) on the sphere and avoids cancellation
    return w / w0


@dataclass
class Scaling:
    """Affine maps between physical and internal coordinates."""

    t0: float
    T: float
    center: np.ndarray
    scale: np.ndarray

    def t_internal(self, t):
        return (np.asarray(t, dtype=float) - self.t0) / self.T

    def t_physical(self, tau):
        return self.t0 + self.T * np.asarray(tau, dtype=float)

    def y_internal(self, y):
        return (np.asarray(y, dtype=float) - self.center) / self.scale

    def y_physical(self, yb):
        return self.center + self.scale * np.asarray(yb, dtype=float)

    def to_dict(self):
        return dict(t0=self.t0, T=self.T, center=self.center.tolist(), scale=self.scale.tolist())


@dataclass
class CompactifiedProblem:
    variables: tuple
    l_hat: Polynomial
    f_hat: list
    time_density: Polynomial
    inequalities: list  # (label, Polynomial) including ("moment", 1)
    equalities: list  # (label, Polynomial)
    p: int
    mode: str
    y0: Boundary
    yf: Boundary
    scaling: Scaling
    norm_poly: Polynomial  # homogeneous form of |u|_p^p
    mass_bound: float | None
    bounds: dict
    problem: ControlProblem
    state_inequalities: list  # (label, Polynomial over internal variables, only t/y)
    frac_lifts: list = field(default_factory=list)  # (name, num, den) in physical control terms
    tf_min: float | None = None
    w0_expr: Polynomial | None = None

    @property
    def n(self):
        return self.problem.n

    @property
    def m(self):
        return self.problem.m

    @property
    def states(self):
        return tuple(f"y{i + 1}" for i in range(self.n))

    @property
    def w_names(self):
        return tuple(f"w{i + 1}" for i in range(self.m))

    def index(self, name: str) -> int:
        return self.variables.index(name)

    def degree(self) -> int:
        """Largest degree among all data polynomials."""
        polys = [self.l_hat, self.time_density] + list(self.f_hat)
        polys += [g for _, g in self.inequalities] + [h for _, h in self.equalities]
        return max(p.degree for p in polys)

    # -- points of G ---------------------------------------------------
    def lift_point(self, t, y, u) -> np.ndarray:
        """Internal coordinates of physical (t, y, u); u may be :class:`AtInfinity`."""
        P = self.problem
        x = np.zeros(len(self.variables))
        x[0] = float(self.scaling.t_internal(t))
        x[1 : 1 + self.n] = self.scaling.y_internal(np.atleast_1d(y))
        # compactified control in the problem's own p-norm
        w0p, wp = u_to_w(u, P.p)
        if self.mode == "square":
            w0, w = math.sqrt(w0p), np.sqrt(np.abs(wp))
        else:
            w0, w = w0p, wp
        vals = {"w0": w0}
        for i in range(self.m):
            vals[f"w{i + 1}"] = w[i]
            vals[f"r{i + 1}"] = abs(w[i])
        for name, num, den, expo in self.frac_lifts:
            vals[name] = self._frac_value(num, den, expo, x, w0p, wp)
        for j, v in enumerate(self.variables):
            if v in vals:
                x[j] = vals[v]
        return x

    def _frac_value(self, num, den, expo, x, w0, w):
        pt = self._hom_point(x, w0, w)
        d = den.evaluate_many(pt[None, :])[0]
        return num.evaluate_many(pt[None, :])[0] * w0**expo / d if d != 0 else np.inf

    def _hom_point(self, x, w0, w):
        # point over (t, y, w0, w, |w|) for the homogenized physical-form polynomials
        return np.concatenate([x[: 1 + self.n], [w0], w, np.abs(w)])

    def in_G(self, x, tol=1e-9) -> bool:
        ok = all(g.evaluate_many(x[None, :])[0] >= -tol for _, g in self.inequalities)
        return ok and all(abs(h.evaluate_many(x[None, :])[0]) <= tol for _, h in self.equalities)

    def sample(self, rng: np.random.Generator, k: int, infinite_fraction: float = 0.1) -> np.ndarray:
        """Sample ``k`` points of G (internal coordinates), including controls at infinity."""
        pts = []
        P = self.problem
        tries = 0
        while len(pts) < k:
            tries += 1
            if tries > 200 * k + 1000:
                raise CompactifyError("could not sample the state set; is it empty?")
            t = self.scaling.t_physical(rng.random())
            yb = rng.uniform(-1.0, 1.0, size=self.n)
            xs = np.zeros(len(self.variables))
            xs[0] = self.scaling.t_internal(t)
            xs[1 : 1 + self.n] = yb
            if not all(g.evaluate_many(xs[None, :])[0] >= 0 for _, g in self.state_inequalities):
                continue
            y = self.scaling.y_physical(yb)
            if rng.random() < infinite_fraction:
                d = rng.normal(size=self.m)
            else:
                d = rng.standard_cauchy(size=self.m) * 10.0 ** rng.uniform(-2, 3)
            for i in range(self.m):
                if P.sign[i]:
                    d[i] = abs(d[i])
            if not np.any(d):
                d[0] = 1.0
            u = AtInfinity(tuple(d)) if rng.random() < infinite_fraction else d
            pts.append(self.lift_point(t, y, u))
        return np.array(pts)

    def to_text(self) -> str:
        lines = [f"variables: {', '.join(self.variables)}", f"p: {self.p}", f"mode: {self.mode}",
                 f"scaling: {self.scaling.to_dict()}", f"l_hat: {to_expression(self.l_hat)}",
                 f"time_density: {to_expression(self.time_density)}"]
        for i, fh in enumerate(self.f_hat):
            lines.append(f"f_hat{i + 1}: {to_expression(fh)}")
        for lab, g in self.inequalities:
            lines.append(f"G[{lab}] >= 0: {to_expression(g)}")
        for lab, h in self.equalities:
            lines.append(f"G[{lab}] == 0: {to_expression(h)}")
        if self.mass_bound is not None:
            lines.append(f"mass_bound: T * l(norm) <= {self.mass_bound!r}, norm = {to_expression(self.norm_poly)}")
        return "\n".join(lines) + "\n"


def _normalize(g: Polynomial) -> Polynomial:
    s = g.max_abs_coefficient()
    return g / s if s > 0 else g


def _control_mode(P: ControlProblem) -> str:
    modes = {P.lifts.get(u) for u in P.controls}
    if "square" in modes:
        return "square"
    if P.p == 1:
        if all(P.sign) and "abs" not in modes:
            return "affine"
        return "abs"
    return "ball"


def compactify(P: ControlProblem) -> CompactifiedProblem:
    n, m, p = P.n, P.m, P.p
    mode = _control_mode(P)
    bounds = state_bounds(P)
    if bounds is None:
        raise CompactifyError("state bounds are not inferable")
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    center = 0.5 * (lo + hi)
    scale = 0.5 * (hi - lo)
    T = P.tf - P.t0
    scaling = Scaling(P.t0, T, center, scale)

    ws = tuple(f"w{i + 1}" for i in range(m))
    need_r = []
    for i, u in enumerate(P.controls):
        signed = not P.sign[i]
        if mode == "abs" and signed:
            need_r.append(i)
        elif mode == "ball" and P.lifts.get(u) == "abs":
            need_r.append(i)
        elif mode == "ball" and p % 2 == 1 and signed:
            need_r.append(i)
    rs = tuple(f"r{i + 1}" for i in need_r)
    qs = tuple(f"q{k + 1}" for k in range(len(P.fracs)))
    keep_w0 = mode in ("square", "ball")
    V = ("t",) + P.states + (("w0",) if keep_w0 else ()) + ws + rs + qs

    one = Polynomial.constant(V, 1.0)
    var = {v: Polynomial.variable(V, v) for v in V}
    # |w_i| in compactified variables
    a = []
    for i in range(m):
        if f"r{i + 1}" in rs:
            a.append(var[f"r{i + 1}"])
        elif P.sign[i] or (mode == "ball" and p % 2 == 0):
            a.append(var[ws[i]])
        else:
            a.append(None)
    if mode == "square":
        w0 = var["w0"] ** 2
        u_img = [var[w] ** 2 for w in ws]
        abs_img = list(u_img)
        norm = sum((x for x in u_img), Polynomial(V))
    elif mode in ("affine", "abs"):
        w0 = one - sum((x for x in a), Polynomial(V))
        u_img = [var[w] for w in ws]
        abs_img = a
        norm = sum((x for x in a), Polynomial(V))
    else:
        w0 = var["w0"]
        u_img = [var[w] for w in ws]
        abs_img = a
        norm = Polynomial(V)
        for i in range(m):
            base = a[i] if a[i] is not None else var[ws[i]]
            norm = norm + base**p

    # physical -> internal substitution for t and y
    V1 = P.variables + ("__w0",)
    ctrl1 = P.variables[1 + n :]
    sub = {"t": scaling.t0 + scaling.T * var["t"]}
    for i, s in enumerate(P.states):
        sub[s] = center[i] + scale[i] * var[s]
    for i, u in enumerate(P.controls):
        sub[u] = u_img[i]
        if abs_img[i] is not None:
            sub[f"|{u}|"] = abs_img[i]
    sub["__w0"] = w0

    def hom(poly: Polynomial, degree: int) -> Polynomial:
        ph = homogenize_control(poly.embed(V1), ctrl1, "__w0", degree)
        used = [u for u in ph.support_variables() if u.startswith("|") and u not in sub]
        if used:
            raise CompactifyError(f"{used[0]} needs an abs lift")
        return ph.substitute(sub, V)

    try:
        l_hat = hom(P.l, p) * T
        f_hat = [hom(fi, p) * (T / scale[i]) for i, fi in enumerate(P.f)]
    except PolynomialError as exc:
        raise CompactifyError(str(exc)) from None
    density = hom(Polynomial.constant(P.variables, 1.0), p)

    # G description
    tvar = var["t"]
    ineq = [("moment", one), ("time", tvar * (one - tvar))]
    state_ineq = []
    for i, s in enumerate(P.states):
        if s in P.boxes:
            g = one - var[s] ** 2
            ineq.append((f"box_{s}", g))
            state_ineq.append((f"box_{s}", g))
    for j, g in enumerate(P.state_set):
        gs = _normalize(g.substitute(sub, V))
        lab = "ball_auto" if (P.auto_ball and j == len(P.state_set) - 1) else f"state{j + 1}"
        ineq.append((lab, gs))
        state_ineq.append((lab, gs))
    eq = []
    if mode == "square":
        ineq.append(("w0", var["w0"]))
        for w in ws:
            ineq.append((f"sign_{w}", var[w]))
        eq.append(("sphere", var["w0"] ** 2 + sum((var[w] ** 2 for w in ws), Polynomial(V)) - 1.0))
    elif mode in ("affine", "abs"):
        ineq.append(("w0", w0))
        for i, w in enumerate(ws):
            if P.sign[i]:
                ineq.append((f"sign_{w}", var[w]))
        if mode == "abs":
            ineq.append(("wball", one - sum((var[w] ** 2 for w in ws), Polynomial(V))))
    else:
        ineq.append(("w0", var["w0"]))
        for i, w in enumerate(ws):
            if P.sign[i]:
                ineq.append((f"sign_{w}", var[w]))
        eq.append(("sphere", var["w0"] ** p + norm - 1.0))
    for r in rs:
        i = int(r[1:]) - 1
        ineq.append((f"sign_{r}", var[r]))
        eq.append((f"lift_{r}", var[r] ** 2 - var[ws[i]] ** 2))

    var_bounds = {"t": (0.0, 1.0)}
    for s in P.states:
        var_bounds[s] = (-1.0, 1.0)
    if keep_w0:
        var_bounds["w0"] = (0.0, 1.0)
    for i, w in enumerate(ws):
        var_bounds[w] = (0.0, 1.0) if P.sign[i] else (-1.0, 1.0)
    for r in rs:
        var_bounds[r] = (0.0, 1.0)

    cp = CompactifiedProblem(
        variables=V, l_hat=l_hat, f_hat=f_hat, time_density=density, inequalities=ineq,
        equalities=eq, p=p, mode=mode, y0=_internal_boundary(P.y0, scaling, P),
        yf=_internal_boundary(P.yf, scaling, P), scaling=scaling, norm_poly=norm,
        mass_bound=P.mass_bound, bounds=var_bounds, problem=P, state_inequalities=state_ineq,
        tf_min=None if P.tf_min is None else float(scaling.t_internal(P.tf_min)), w0_expr=w0,
    )

    # rational cost terms: q * den_h = num_h * w0^(dd - dn + p)
    if P.fracs:
        Vh = ("t",) + P.states + ("w0",) + ws + tuple(f"a{i + 1}" for i in range(m))
        hsub = {"t": Polynomial.variable(Vh, "t")}
        for s in P.states:
            hsub[s] = Polynomial.variable(Vh, s)
        for i, u in enumerate(P.controls):
            hsub[u] = Polynomial.variable(Vh, ws[i])
            hsub[f"|{u}|"] = Polynomial.variable(Vh, f"a{i + 1}")
        hsub["__w0"] = Polynomial.variable(Vh, "w0")
        for k, (num, den) in enumerate(P.fracs):
            dn = num.degree_in(ctrl1)
            dd = den.degree_in(ctrl1)
            expo = dd - dn + p
            if expo < 0:
                raise CompactifyError(f"rational cost term {k + 1} grows faster than |u|^p")
            num_h = homogenize_control(num.embed(V1), ctrl1, "__w0", max(dn, 0))
            den_h = homogenize_control(den.embed(V1), ctrl1, "__w0", max(dd, 0))
            # physical-form copies (for evaluation at lifted points)
            num_p = num_h.substitute(hsub, Vh)
            den_p = den_h.substitute(hsub, Vh)
            # internal copies
            num_i = num_h.substitute(sub, V) * (w0**expo)
            den_i = den_h.substitute(sub, V)
            q = var[qs[k]]
            cp.frac_lifts.append((qs[k], _time_state_scaled(num_p, scaling, P, Vh), _time_state_scaled(den_p, scaling, P, Vh), expo))
            cp.equalities.append((f"frac_{qs[k]}", q * den_i - num_i))
            cp.l_hat = cp.l_hat + q * T
        # bounds for each q from samples of G, then a ball over every variable
        rng = np.random.default_rng(12345)
        pts = cp.sample(rng, 4000, infinite_fraction=0.05)
        for k, (name, num_p, den_p, expo) in enumerate(cp.frac_lifts):
            j = cp.index(name)
            # the denominator must stay away from zero on G
            dvals = np.array([den_p.evaluate_many(cp._hom_point(x, *_w0w(cp, x))[None, :])[0] for x in pts])
            if np.any(dvals <= 1e-12 * max(1.0, float(np.max(np.abs(dvals))))):
                raise CompactifyError(f"denominator of rational cost term {k + 1} vanishes on G")
            vals = pts[:, j]
            lo_q, hi_q = float(vals.min()), float(vals.max())
            pad = 0.1 * max(hi_q - lo_q, 1e-3)
            lo_q, hi_q = lo_q - pad, hi_q + pad
            if lo_q > -pad and float(vals.min()) >= 0:
                lo_q = min(0.0, lo_q)
            cp.bounds[name] = (lo_q, hi_q)
            cp.inequalities.append((f"lower_{name}", q_minus(var[name], lo_q)))
            cp.inequalities.append((f"upper_{name}", one * hi_q - var[name]))
    # enclosing ball over every variable
    rad = 1.1 * sum(max(abs(lo_), abs(hi_)) ** 2 for lo_, hi_ in cp.bounds.values())
    ball = one * rad
    for v in V:
        ball = ball - var[v] ** 2
    cp.inequalities.append(("ball", _normalize(ball)))
    cp.ball_radius_squared = rad
    # every variable must be constrained by something
    for v in V:
        if not any(g.uses(v) for _, g in cp.inequalities):
            raise CompactifyError(f"variable {v} is unconstrained")
    return cp


def q_minus(qv: Polynomial, lo: float) -> Polynomial:
    return qv - lo


def _w0w(cp: CompactifiedProblem, x):
    w = np.array([x[cp.index(w)] for w in cp.w_names])
    if "w0" in cp.variables:
        w0 = x[cp.index("w0")]
        if cp.mode == "square":
            w0 = w0 * w0
            w = w * w
    else:
        w0 = cp.w0_expr.evaluate_many(x[None, :])[0]
    return w0, w


def _time_state_scaled(poly: Polynomial, scaling: Scaling, P: ControlProblem, Vh) -> Polynomial:
    sub = {"t": scaling.t0 + scaling.T * Polynomial.variable(Vh, "t")}
    for i, s in enumerate(P.states):
        sub[s] = scaling.center[i] + scaling.scale[i] * Polynomial.variable(Vh, s)
    return poly.substitute(sub, Vh)


def _internal_boundary(B: Boundary, scaling: Scaling, P: ControlProblem) -> Boundary:
    if B.kind == "fixed":
        return Boundary("fixed", point=tuple(float(v) for v in scaling.y_internal(B.point)))
    if B.kind == "moments":
        # moments of the internal coordinates from physical moments
        states = P.states
        phys = B.moment_map()
        out = {}
        maxdeg = max(sum(a) for a in phys)
        from .poly import monomials_upto

        for alpha in monomials_upto(P.n, maxdeg):
            mono = Polynomial.monomial(states, alpha)
            sub = {s: (Polynomial.variable(states, s) - scaling.center[i]) / scaling.scale[i] for i, s in enumerate(states)}
            e = mono.substitute(sub)
            if all(b in phys for b in e.terms):
                out[alpha] = sum(c * phys[b] for b, c in e.items())
        return Boundary("moments", moments=tuple(sorted(out.items())))
    return B
