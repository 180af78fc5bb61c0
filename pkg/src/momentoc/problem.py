"""Optimal control problems with polynomial data and their text file format.

A problem file is a sequence of ``[section]`` headers followed by lines::

    [meta]       name, n, m, p, t0, tf          (key = value)
    [dynamics]   f1 = <expr>, ..., fn = <expr>
    [cost]       l = <expr>;  frac = (<num>)/(<den>)   (repeatable)
    [state_set]  g = <expr>   (g >= 0, repeatable);  box y1 = lo, hi
    [boundary]   y0 = (a, b) | free | moments(1 = 1, y1 = 0.5, ...);  yf = (a, b) | free
    [control]    sign u1 >= 0;  lift abs|square|affine u1;  mass_bound <real>
    [options]    coercive = true|waived;  tf_min = <real>;  other key = value pairs

States are ``y1..yn``, controls ``u1..um`` and time ``t``. ``|u1|`` may be
used in the cost when u1 is sign-restricted or has an ``abs`` lift.
Lines may be joined with ``;`` and ``#`` starts a comment.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .poly import Polynomial, PolynomialError, parse, to_expression

log = logging.getLogger(__name__)

SECTIONS = ("meta", "dynamics", "cost", "state_set", "boundary", "control", "options")
LIFT_MODES = ("abs", "square", "affine")


class ProblemError(ValueError):
    """Malformed or inconsistent problem definition."""


@dataclass(frozen=True)
class Boundary:
    kind: str  # fixed | free | moments
    point: tuple = ()
    # moments of an initial distribution, keyed by exponent tuples over y1..yn
    moments: tuple = ()

    def moment_map(self) -> dict:
        return dict(self.moments)


@dataclass
class ControlProblem:
    n: int
    m: int
    p: int
    t0: float
    tf: float
    l: Polynomial
    f: list
    state_set: list
    y0: Boundary
    yf: Boundary
    fracs: list = field(default_factory=list)
    boxes: dict = field(default_factory=dict)
    sign: tuple = ()
    lifts: dict = field(default_factory=dict)
    mass_bound: float | None = None
    coercive: str | None = None
    tf_min: float | None = None
    name: str = "problem"
    options: dict = field(default_factory=dict)
    auto_ball: bool = False

    @property
    def states(self) -> tuple:
        return tuple(f"y{i + 1}" for i in range(self.n))

    @property
    def controls(self) -> tuple:
        return tuple(f"u{i + 1}" for i in range(self.m))

    @property
    def variables(self) -> tuple:
        return problem_variables(self.n, self.m)

    def __eq__(self, other):
        if not isinstance(other, ControlProblem):
            return NotImplemented
        keys = (
            "n m p t0 tf l f state_set y0 yf fracs boxes sign lifts mass_bound coercive tf_min name options"
        ).split()
        return all(getattr(self, k) == getattr(other, k) for k in keys)


def problem_variables(n: int, m: int) -> tuple:
    return (
        ("t",)
        + tuple(f"y{i + 1}" for i in range(n))
        + tuple(f"u{i + 1}" for i in range(m))
        + tuple(f"|u{i + 1}|" for i in range(m))
    )


# ---------------------------------------------------------------------------
# parsing


def _number(text: str) -> float:
    text = text.strip()
    try:
        p = parse(text, ())
    except PolynomialError as exc:
        raise ProblemError(f"expected a number, got {text!r}") from exc
    if p.degree > 0:
        raise ProblemError(f"expected a number, got {text!r}")
    return p.coefficient(())


def _split_lines(text: str):
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            out.append((lineno, line))
            continue
        # split on ';' outside parentheses
        depth = 0
        cur = ""
        for ch in line:
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            if ch == ";" and depth == 0:
                if cur.strip():
                    out.append((lineno, cur.strip()))
                cur = ""
            else:
                cur += ch
        if cur.strip():
            out.append((lineno, cur.strip()))
    return out


def _key_value(line: str):
    if "=" in line:
        k, v = line.split("=", 1)
    else:
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ProblemError(f"expected 'key = value', got {line!r}")
        k, v = parts
    return k.strip(), v.strip()


def _parse_tuple(text: str, n: int, what: str) -> tuple:
    text = text.strip()
    if not (text.startswith("(") and text.endswith(")")):
        raise ProblemError(f"{what}: expected a parenthesized point, got {text!r}")
    items = [s for s in text[1:-1].split(",") if s.strip()]
    if len(items) != n:
        raise ProblemError(f"{what}: expected {n} coordinates, got {len(items)}")
    return tuple(_number(s) for s in items)


def _parse_boundary(text: str, n: int, what: str, allow_moments: bool) -> Boundary:
    t = text.strip()
    if t == "free":
        return Boundary("free")
    if t.startswith("moments"):
        if not allow_moments:
            raise ProblemError(f"{what}: moment data is only allowed for the initial condition")
        body = t[len("moments"):].strip()
        if not (body.startswith("(") and body.endswith(")")):
            raise ProblemError(f"{what}: expected moments(...)")
        states = tuple(f"y{i + 1}" for i in range(n))
        entries = {}
        for item in _split_top(body[1:-1]):
            if "=" not in item:
                raise ProblemError(f"{what}: moment entries must read 'monomial = value'")
            k, v = item.split("=", 1)
            mono = parse(k, states)
            if len(mono) != 1 or abs(next(iter(mono.terms.values())) - 1.0) > 0:
                raise ProblemError(f"{what}: {k.strip()!r} is not a monomial")
            alpha = next(iter(mono.terms))
            entries[alpha] = _number(v)
        if entries.get((0,) * n) is None:
            raise ProblemError(f"{what}: the zeroth moment (1 = ...) is required")
        if abs(entries[(0,) * n] - 1.0) > 1e-12:
            raise ProblemError(f"{what}: the initial distribution must have unit mass")
        return Boundary("moments", moments=tuple(sorted(entries.items())))
    return Boundary("fixed", point=_parse_tuple(t, n, what))


def _split_top(text: str):
    depth, cur, out = 0, "", []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


_FRAC = re.compile(r"^\((?P<num>.*)\)\s*/\s*\((?P<den>.*)\)$")


def loads(text: str) -> ControlProblem:
    """Parse problem-file text into a validated :class:`ControlProblem`."""
    section = None
    raw: dict = {s: [] for s in SECTIONS}
    seen = set()
    for lineno, line in _split_lines(text):
        if line.startswith("["):
            name = line.strip("[] ").lower()
            if name not in SECTIONS:
                raise ProblemError(f"line {lineno}: unknown section [{name}]")
            section = name
            seen.add(name)
            continue
        if section is None:
            raise ProblemError(f"line {lineno}: content before the first section header")
        raw[section].append((lineno, line))
    for req in ("meta", "dynamics", "cost", "boundary"):
        if req not in seen:
            raise ProblemError(f"missing required section [{req}]")

    meta = {}
    for lineno, line in raw["meta"]:
        k, v = _key_value(line)
        meta[k] = v
    try:
        n = int(meta["n"])
        m = int(meta["m"])
        p = int(meta.get("p", "1"))
        t0 = _number(meta["t0"])
        tf = _number(meta["tf"])
    except KeyError as exc:
        raise ProblemError(f"[meta] is missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ProblemError(f"[meta]: {exc}") from None
    if n < 1 or m < 1:
        raise ProblemError("n and m must be positive")
    if p < 1:
        raise ProblemError("growth exponent p must be a positive integer")
    if not t0 < tf:
        raise ProblemError(f"empty horizon: t0 = {t0} is not below tf = {tf}")
    variables = problem_variables(n, m)

    def expr(text, lineno):
        try:
            return parse(text, variables)
        except PolynomialError as exc:
            raise ProblemError(f"line {lineno}: {exc}") from None

    f = [None] * n
    for lineno, line in raw["dynamics"]:
        k, v = _key_value(line)
        mm = re.fullmatch(r"f(\d+)", k)
        if not mm or not 1 <= int(mm.group(1)) <= n:
            raise ProblemError(f"line {lineno}: unknown dynamics entry {k!r}")
        f[int(mm.group(1)) - 1] = expr(v, lineno)
    if any(fi is None for fi in f):
        raise ProblemError("[dynamics] must define f1..fn")

    l = Polynomial(variables)
    fracs = []
    have_l = False
    for lineno, line in raw["cost"]:
        k, v = _key_value(line)
        if k == "l":
            l = l + expr(v, lineno)
            have_l = True
        elif k == "frac":
            mm = _FRAC.match(v.strip())
            if not mm:
                raise ProblemError(f"line {lineno}: frac must read (num)/(den)")
            fracs.append((expr(mm.group("num"), lineno), expr(mm.group("den"), lineno)))
        else:
            raise ProblemError(f"line {lineno}: unknown cost entry {k!r}")
    if not have_l and not fracs:
        raise ProblemError("[cost] must define l")

    state_set = []
    boxes = {}
    for lineno, line in raw["state_set"]:
        if line.startswith("box"):
            k, v = _key_value(line[3:])
            if k not in variables[1 : n + 1]:
                raise ProblemError(f"line {lineno}: box on unknown state {k!r}")
            parts = [s for s in v.split(",")]
            if len(parts) != 2:
                raise ProblemError(f"line {lineno}: box needs 'lo, hi'")
            lo, hi = _number(parts[0]), _number(parts[1])
            if not lo < hi:
                raise ProblemError(f"line {lineno}: empty box for {k}")
            boxes[k] = (lo, hi)
            continue
        k, v = _key_value(line)
        if k != "g":
            raise ProblemError(f"line {lineno}: unknown state_set entry {k!r}")
        state_set.append(expr(v, lineno))

    y0 = yf = None
    for lineno, line in raw["boundary"]:
        k, v = _key_value(line)
        if k == "y0":
            y0 = _parse_boundary(v, n, "y0", allow_moments=True)
        elif k == "yf":
            yf = _parse_boundary(v, n, "yf", allow_moments=False)
        else:
            raise ProblemError(f"line {lineno}: unknown boundary entry {k!r}")
    if y0 is None or yf is None:
        raise ProblemError("[boundary] must define y0 and yf")

    sign = [False] * m
    lifts = {}
    mass_bound = None
    controls = variables[1 + n : 1 + n + m]
    for lineno, line in raw["control"]:
        words = line.replace(">=", " >= ").split()
        if words[0] == "sign":
            if len(words) != 4 or words[2] != ">=" or _number(words[3]) != 0 or words[1] not in controls:
                raise ProblemError(f"line {lineno}: expected 'sign uK >= 0'")
            sign[controls.index(words[1])] = True
        elif words[0] == "lift":
            if len(words) != 3 or words[1] not in LIFT_MODES or words[2] not in controls:
                raise ProblemError(f"line {lineno}: expected 'lift abs|square|affine uK'")
            lifts[words[2]] = words[1]
        elif words[0] == "mass_bound":
            if len(words) != 2:
                raise ProblemError(f"line {lineno}: expected 'mass_bound <real>'")
            mass_bound = _number(words[1])
            if mass_bound <= 0:
                raise ProblemError(f"line {lineno}: mass bound must be positive")
        else:
            raise ProblemError(f"line {lineno}: unknown control clause {words[0]!r}")

    options = {}
    coercive = None
    tf_min = None
    for lineno, line in raw["options"]:
        k, v = _key_value(line)
        if k == "coercive":
            if v not in ("true", "waived"):
                raise ProblemError(f"line {lineno}: coercive must be 'true' or 'waived'")
            coercive = v
        elif k == "tf_min":
            tf_min = _number(v)
        else:
            options[k] = v

    P = ControlProblem(
        n=n, m=m, p=p, t0=t0, tf=tf, l=l, f=f, state_set=state_set, y0=y0, yf=yf,
        fracs=fracs, boxes=boxes, sign=tuple(sign), lifts=lifts, mass_bound=mass_bound,
        coercive=coercive, tf_min=tf_min, name=meta.get("name", "problem"), options=options,
    )
    return validate(P)


def load(source) -> ControlProblem:
    """Load from a path, or from problem text when given a string containing a section header."""
    if isinstance(source, Path) or (isinstance(source, str) and "[" not in source):
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ProblemError(f"cannot read {path}: {exc}") from None
        return loads(text)
    return loads(source)


def _is_ball(g: Polynomial, states) -> float | None:
    """Return r when g = r - sum(y_i^2) over all states (up to positive scaling)."""
    n = len(states)
    vars_ = g.variables
    idx = [vars_.index(s) for s in states]
    const = g.coefficient((0,) * len(vars_))
    quad = None
    for alpha, c in g.items():
        if sum(alpha) == 0:
            continue
        if sum(alpha) != 2 or sum(alpha[i] for i in idx) != 2 or max(alpha) != 2:
            return None
        if quad is None:
            quad = c
        elif c != quad:
            return None
    if quad is None or quad >= 0 or len(g) != n + 1 or const <= 0:
        return None
    return const / -quad


def ball_radius_squared(P: ControlProblem) -> float | None:
    """Squared radius of a ball constraint among the state constraints, if any."""
    for g in P.state_set:
        r = _is_ball(g, P.states)
        if r is not None:
            return r
    return None


def state_bounds(P: ControlProblem) -> list:
    """Per-state (lo, hi) bounds from boxes, else from the ball constraint."""
    r2 = ball_radius_squared(P)
    out = []
    for s in P.states:
        if s in P.boxes:
            out.append(P.boxes[s])
        elif r2 is not None:
            rad = math.sqrt(r2)
            out.append((-rad, rad))
        else:
            return None
    return out


def validate(P: ControlProblem) -> ControlProblem:
    if not P.t0 < P.tf:
        raise ProblemError(f"empty horizon: t0 = {P.t0} is not below tf = {P.tf}")
    V = P.variables
    ctrl_like = set(V[1 + P.n :]) | {"t"}
    for g in P.state_set:
        bad = [v for v in g.support_variables() if v in ctrl_like]
        if bad:
            raise ProblemError(f"state constraint {to_expression(g)} depends on {bad}")
    for i, u in enumerate(P.controls):
        mode = P.lifts.get(u)
        absname = f"|{u}|"
        uses_abs = P.l.uses(absname) or any(fi.uses(absname) for fi in P.f) or any(
            a.uses(absname) or b.uses(absname) for a, b in P.fracs
        )
        if mode == "square" and not P.sign[i]:
            raise ProblemError(f"lift square {u} requires sign {u} >= 0")
        if mode == "affine" and not P.sign[i]:
            raise ProblemError(f"lift affine {u} requires sign {u} >= 0")
        if uses_abs and not (P.sign[i] or mode == "abs"):
            raise ProblemError(f"{absname} needs 'sign {u} >= 0' or 'lift abs {u}'")
    # |u| = u for sign-restricted controls
    sub = {f"|{u}|": Polynomial.variable(V, u) for i, u in enumerate(P.controls) if P.sign[i]}
    if sub:
        P.l = P.l.substitute(sub)
        P.f = [fi.substitute(sub) for fi in P.f]
        P.fracs = [(a.substitute(sub), b.substitute(sub)) for a, b in P.fracs]
    modes = {P.lifts.get(u) for u in P.controls}
    if "square" in modes and (P.p != 1 or modes != {"square"}):
        raise ProblemError("square lifts need p = 1 and must apply to every control")
    if "affine" in modes and P.p != 1:
        raise ProblemError("affine lifts need p = 1")
    # control degree check
    for name, poly in [("l", P.l)] + [(f"f{i + 1}", fi) for i, fi in enumerate(P.f)]:
        deg = poly.degree_in(V[1 + P.n :])
        if deg > P.p:
            raise ProblemError(f"{name} has control degree {deg} > p = {P.p}")
    for g in P.state_set:
        if g.is_zero():
            raise ProblemError("zero state constraint")
    if P.tf_min is not None and not P.t0 < P.tf_min <= P.tf:
        raise ProblemError("tf_min must lie in (t0, tf]")
    if P.y0.kind == "fixed" or P.yf.kind == "fixed":
        pass
    if P.mass_bound is None:
        if P.coercive is None:
            raise ProblemError(
                "no mass_bound given: attest coercivity with 'coercive = true' "
                "or accept the risk with 'coercive = waived'"
            )
        if P.coercive == "waived":
            log.info("%s: coercivity waived; relaxation mass may be unbounded", P.name)
    # ball bound
    if ball_radius_squared(P) is None:
        if any(s not in P.boxes for s in P.states):
            raise ProblemError(
                "no ball bound inferable: add a constraint r - sum(yi^2) >= 0 or box bounds on every state"
            )
        bmax = max(max(abs(lo), abs(hi)) for lo, hi in P.boxes.values())
        rad = 1.5 * bmax
        corner = math.sqrt(sum(max(abs(lo), abs(hi)) ** 2 for lo, hi in P.boxes.values()))
        if rad < corner:
            rad = 1.5 * corner
        g = Polynomial.constant(V, rad * rad)
        for s in P.states:
            g = g - Polynomial.variable(V, s) ** 2
        P.state_set.append(g)
        P.auto_ball = True
    return P


# ---------------------------------------------------------------------------
# serialization


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize(P: ControlProblem) -> str:
    """Problem-file text that :func:`loads` maps back to an equal problem."""
    lines = ["[meta]", f"name = {P.name}", f"n = {P.n}", f"m = {P.m}", f"p = {P.p}",
             f"t0 = {_fmt(P.t0)}", f"tf = {_fmt(P.tf)}", "", "[dynamics]"]
    for i, fi in enumerate(P.f):
        lines.append(f"f{i + 1} = {to_expression(fi)}")
    lines += ["", "[cost]", f"l = {to_expression(P.l)}"]
    for num, den in P.fracs:
        lines.append(f"frac = ({to_expression(num)})/({to_expression(den)})")
    lines += ["", "[state_set]"]
    for s, (lo, hi) in P.boxes.items():
        lines.append(f"box {s} = {_fmt(lo)}, {_fmt(hi)}")
    for j, g in enumerate(P.state_set):
        if P.auto_ball and j == len(P.state_set) - 1:
            continue
        lines.append(f"g = {to_expression(g)}")
    lines += ["", "[boundary]", f"y0 = {_fmt_boundary(P.y0, P.states)}", f"yf = {_fmt_boundary(P.yf, P.states)}"]
    lines += ["", "[control]"]
    for i, u in enumerate(P.controls):
        if P.sign[i]:
            lines.append(f"sign {u} >= 0")
    for u, mode in P.lifts.items():
        lines.append(f"lift {mode} {u}")
    if P.mass_bound is not None:
        lines.append(f"mass_bound {_fmt(P.mass_bound)}")
    lines += ["", "[options]"]
    if P.coercive is not None:
        lines.append(f"coercive = {P.coercive}")
    if P.tf_min is not None:
        lines.append(f"tf_min = {_fmt(P.tf_min)}")
    for k, v in P.options.items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def _fmt_boundary(B: Boundary, states) -> str:
    if B.kind == "free":
        return "free"
    if B.kind == "fixed":
        return "(" + ", ".join(_fmt(v) for v in B.point) + ")"
    items = []
    for alpha, val in B.moments:
        mono = Polynomial.monomial(states, alpha)
        items.append(f"{to_expression(mono)} = {_fmt(val)}")
    return "moments(" + ", ".join(items) + ")"


# ---------------------------------------------------------------------------
# built-in examples

_BUILTIN_TEXT = {
    "impulse": """
[meta]
name = impulse
n = 1; m = 1; p = 1; t0 = 0; tf = 1
[dynamics]
f1 = u1
[cost]
l = (t-1/2)^2*|u1|
[state_set]
box y1 = 0, 1
[boundary]
y0 = (0); yf = (1)
[control]
sign u1 >= 0
lift square u1
[options]
coercive = waived
""",
    "smeared": """
[meta]
name = smeared
n = 1; m = 1; p = 1; t0 = 0; tf = 1
[dynamics]
f1 = u1
[cost]
l = (y1-t)^2
frac = (u1^2)/(1+u1^4)
[state_set]
box y1 = 0, 1
[boundary]
y0 = (0); yf = free
[control]
sign u1 >= 0
[options]
coercive = waived
""",
    "rendezvous": """
[meta]
name = rendezvous
n = 2; m = 1; p = 1; t0 = 0; tf = 1
[dynamics]
f1 = pi*y2
f2 = -pi*y1 + u1
[cost]
l = |u1|
[state_set]
g = 2 - y1^2 - y2^2
g = y1^2 + (y2+1/2)^2 - 1/4
[boundary]
y0 = (1/2, 0); yf = (-1, 0)
[control]
lift abs u1
[options]
coercive = true
""",
    "weierstrass": """
[meta]
name = weierstrass
n = 1; m = 1; p = 2; t0 = -1; tf = 1
[dynamics]
f1 = u1
[cost]
l = t^2*u1^2
[state_set]
box y1 = -1, 1
[boundary]
y0 = (-1); yf = (1)
[control]
sign u1 >= 0
[options]
coercive = waived
""",
}

BUILTINS = ("impulse", "smeared", "rendezvous", "weierstrass", "weierstrass-regularized")


def builtin(name: str, epsilon: float = 1e-2) -> ControlProblem:
    """One of the shipped example problems.

    ``weierstrass-regularized`` adds ``epsilon * u1^2`` to the Weierstrass cost,
    which makes the cost coercive.
    """
    if name == "weierstrass-regularized":
        if epsilon <= 0:
            raise ProblemError("epsilon must be positive")
        text = _BUILTIN_TEXT["weierstrass"].replace(
            "l = t^2*u1^2", f"l = t^2*u1^2 + {epsilon!r}*u1^2"
        ).replace("coercive = waived", "coercive = true").replace(
            "name = weierstrass", "name = weierstrass-regularized"
        )
        return loads(text)
    if name not in _BUILTIN_TEXT:
        raise ProblemError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")
    return loads(_BUILTIN_TEXT[name])
