"""Sparse multivariate polynomials over an ordered list of named variables.

A polynomial is a map from exponent tuples (one entry per variable) to
float coefficients. Terms are kept in graded lexicographic order so that
iteration and text output are independent of construction order.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

MultiIndex = tuple  # tuple[int, ...], one exponent per variable


class PolynomialError(ValueError):
    """Raised for malformed expressions or incompatible polynomial operations."""


def grlex_key(alpha: MultiIndex):
    """Sort key for graded lexicographic order (earlier variables rank higher)."""
    return (sum(alpha), tuple(-a for a in alpha))


def monomials_upto(nvars: int, degree: int) -> list:
    """All exponent tuples in ``nvars`` variables of total degree <= ``degree``, grlex sorted."""
    out = []

    def rec(prefix, remaining, k):
        if k == nvars - 1:
            out.append(tuple(prefix) + (remaining,))
            return
        for e in range(remaining, -1, -1):
            rec(prefix + [e], remaining - e, k + 1)

    if nvars == 0:
        return [()]
    for deg in range(degree + 1):
        # descending first exponent gives grlex order within a degree layer
        rec([], deg, 0)
    return out


class Polynomial:
    """Immutable sparse polynomial.

    ``variables`` is the ordered tuple of variable names; ``terms`` maps exponent
    tuples of the same length to nonzero float coefficients.
    """

    __slots__ = ("variables", "_terms", "_hash")

    def __init__(self, variables: Sequence[str], terms: Mapping[MultiIndex, float] | None = None):
        self.variables = tuple(variables)
        n = len(self.variables)
        clean = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != n:
                raise PolynomialError(
                    f"exponent {alpha} has length {len(alpha)}, expected {n}"
                )
            if any(a < 0 for a in alpha):
                raise PolynomialError(f"negative exponent in {alpha}")
            c = float(c)
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self._terms = {a: clean[a] for a in sorted(clean, key=grlex_key) if clean[a] != 0.0}
        self._hash = None

    # construction helpers
    @classmethod
    def constant(cls, variables: Sequence[str], value: float) -> "Polynomial":
        return cls(variables, {(0,) * len(variables): value})

    @classmethod
    def variable(cls, variables: Sequence[str], name: str) -> "Polynomial":
        variables = tuple(variables)
        if name not in variables:
            raise PolynomialError(f"unknown variable {name!r}")
        alpha = [0] * len(variables)
        alpha[variables.index(name)] = 1
        return cls(variables, {tuple(alpha): 1.0})

    @classmethod
    def monomial(cls, variables: Sequence[str], alpha: MultiIndex, coef: float = 1.0) -> "Polynomial":
        return cls(variables, {tuple(alpha): coef})

    # basic queries
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(a) for a in self._terms), default=-1)

    def degree_in(self, names: Iterable[str]) -> int:
        idx = [self.variables.index(v) for v in names if v in self.variables]
        return max((sum(a[i] for i in idx) for a in self._terms), default=-1)

    def coefficient(self, alpha: MultiIndex) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def uses(self, name: str) -> bool:
        if name not in self.variables:
            return False
        i = self.variables.index(name)
        return any(a[i] for a in self._terms)

    def support_variables(self) -> tuple:
        return tuple(v for v in self.variables if self.uses(v))

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # equality/hash use exact term maps
    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.variables, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.variables == other.variables and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.variables, tuple(self._terms.items())))
        return self._hash

    # arithmetic
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.variables != self.variables:
                raise PolynomialError(
                    f"variable lists differ: {self.variables} vs {other.variables}"
                )
            return other
        if isinstance(other, (int, float, np.floating, np.integer, Fraction)):
            return Polynomial.constant(self.variables, float(other))
        raise TypeError(f"cannot combine Polynomial with {type(other).__name__}")

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for a, c in other._terms.items():
            out[a] = out.get(a, 0.0) + c
        return Polynomial(self.variables, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.variables, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer, Fraction)):
            s = float(other)
            return Polynomial(self.variables, {a: c * s for a, c in self._terms.items()})
        other = self._coerce(other)
        out: dict = {}
        for a, ca in self._terms.items():
            for b, cb in other._terms.items():
                k = tuple(x + y for x, y in zip(a, b))
                out[k] = out.get(k, 0.0) + ca * cb
        return Polynomial(self.variables, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer, Fraction)):
            return self * (1.0 / float(other))
        raise TypeError("polynomials can only be divided by scalars")

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise PolynomialError(f"exponent must be a nonnegative integer, got {k!r}")
        result = Polynomial.constant(self.variables, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    # evaluation
    def _arrays(self):
        if not self._terms:
            return np.zeros((0, len(self.variables)), dtype=int), np.zeros(0)
        exps = np.array(list(self._terms.keys()), dtype=int).reshape(len(self._terms), -1)
        coefs = np.array(list(self._terms.values()))
        return exps, coefs

    def __call__(self, point) -> float:
        return evaluate(self, point)

    def evaluate_many(self, points) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape (k, nvars))."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != len(self.variables):
            raise PolynomialError(
                f"points must have shape (k, {len(self.variables)}), got {points.shape}"
            )
        exps, coefs = self._arrays()
        if coefs.size == 0:
            return np.zeros(points.shape[0])
        vals = np.ones((points.shape[0], exps.shape[0]))
        for i in range(exps.shape[1]):
            col = exps[:, i]
            if col.any():
                vals *= points[:, i : i + 1] ** col[None, :]
        return vals @ coefs

    # variable-list manipulation
    def embed(self, variables: Sequence[str]) -> "Polynomial":
        """Re-express over a different variable list containing all used variables."""
        variables = tuple(variables)
        if variables == self.variables:
            return self
        pos = []
        for i, v in enumerate(self.variables):
            if v in variables:
                pos.append(variables.index(v))
            else:
                pos.append(None)
        out = {}
        for a, c in self._terms.items():
            new = [0] * len(variables)
            for i, e in enumerate(a):
                if e:
                    if pos[i] is None:
                        raise PolynomialError(
                            f"variable {self.variables[i]!r} is not in target list {variables}"
                        )
                    new[pos[i]] = e
            k = tuple(new)
            out[k] = out.get(k, 0.0) + c
        return Polynomial(variables, out)

    def substitute(self, mapping: Mapping[str, "Polynomial | float"], variables: Sequence[str] | None = None) -> "Polynomial":
        """Replace variables by polynomials (or constants) over ``variables``.

        Unmapped variables are carried over and must exist in the target list.
        """
        target = tuple(variables) if variables is not None else self.variables
        repl = []
        for v in self.variables:
            if v in mapping:
                r = mapping[v]
                if isinstance(r, Polynomial):
                    r = r.embed(target)
                else:
                    r = Polynomial.constant(target, float(r))
                repl.append(r)
            else:
                repl.append(Polynomial.variable(target, v) if v in target else None)
        powers: dict = {}

        def power(i, e):
            key = (i, e)
            if key not in powers:
                if repl[i] is None:
                    raise PolynomialError(f"variable {self.variables[i]!r} has no image")
                powers[key] = repl[i] ** e
            return powers[key]

        out = Polynomial(target)
        acc: dict = {}
        for a, c in self._terms.items():
            term = Polynomial.constant(target, c)
            for i, e in enumerate(a):
                if e:
                    term = term * power(i, e)
            for k, v in term._terms.items():
                acc[k] = acc.get(k, 0.0) + v
        out = Polynomial(target, acc)
        return out

    def to_expression(self) -> str:
        return to_expression(self)

    def __repr__(self):
        return f"Polynomial({self.to_expression()!r}, vars={self.variables})"

    __str__ = to_expression


def zero(variables: Sequence[str]) -> Polynomial:
    return Polynomial(variables)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?(?:\s*/\s*(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?)"
    r"|(?P<abs>\|\s*[A-Za-z_][A-Za-z_0-9]*\s*\|)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*^()]|\*\*)"
    r")"
)

CONSTANTS = {"pi": math.pi}


def _tokenize(expr: str):
    pos = 0
    tokens = []
    n = len(expr)
    while pos < n:
        if expr[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(expr, pos)
        if not m or m.end() == pos:
            raise PolynomialError(f"syntax error at position {pos}: unexpected {expr[pos]!r}")
        kind = m.lastgroup
        text = m.group(kind).strip()
        start = m.start(kind)
        if kind == "op" and text == "**":
            text = "^"
        tokens.append((kind, text, start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


def _number(text: str, position: int) -> Fraction | float:
    if "/" in text:
        num, den = (s.strip() for s in text.split("/"))
        if float(den) == 0.0:
            raise PolynomialError(f"division by zero in literal at position {position}")
        try:
            return Fraction(num) / Fraction(den)
        except ValueError:
            return float(num) / float(den)
    try:
        return Fraction(text)
    except ValueError:
        return float(text)


class _Parser:
    def __init__(self, expr: str, variables: tuple):
        self.expr = expr
        self.variables = variables
        self.tokens = _tokenize(expr)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        kind, t, pos = self.take()
        if t != text:
            raise PolynomialError(f"syntax error at position {pos}: expected {text!r}, got {t or 'end of input'!r}")

    def parse(self) -> Polynomial:
        p = self.expr_()
        kind, t, pos = self.peek()
        if kind != "end":
            raise PolynomialError(f"syntax error at position {pos}: unexpected {t!r}")
        return p

    def expr_(self) -> Polynomial:
        kind, t, pos = self.peek()
        sign = 1.0
        if t in "+-" and kind == "op":
            self.take()
            sign = -1.0 if t == "-" else 1.0
        acc = self.term() * sign
        while True:
            kind, t, pos = self.peek()
            if kind == "op" and t in ("+", "-"):
                self.take()
                rhs = self.term()
                acc = acc + rhs if t == "+" else acc - rhs
            else:
                return acc

    def term(self) -> Polynomial:
        acc = self.factor()
        while True:
            kind, t, pos = self.peek()
            if kind == "op" and t == "*":
                self.take()
                acc = acc * self.factor()
            else:
                return acc

    def factor(self) -> Polynomial:
        kind, t, pos = self.peek()
        if kind == "op" and t in "+-":
            # unary sign inside a product, e.g. 2*-y1
            self.take()
            f = self.factor()
            return -f if t == "-" else f
        base = self.base()
        kind, t, pos = self.peek()
        if kind == "op" and t == "^":
            self.take()
            kind, t, pos = self.take()
            if kind == "op" and t == "-":
                raise PolynomialError(f"negative exponent at position {pos}")
            if kind != "num":
                raise PolynomialError(f"syntax error at position {pos}: exponent must be a nonnegative integer")
            value = _number(t, pos)
            if isinstance(value, float) or (isinstance(value, Fraction) and value.denominator != 1) or "." in t or "e" in t.lower():
                raise PolynomialError(f"fractional exponent {t!r} at position {pos}")
            return base ** int(value)
        return base

    def base(self) -> Polynomial:
        kind, t, pos = self.take()
        if kind == "num":
            return Polynomial.constant(self.variables, float(_number(t, pos)))
        if kind == "ident":
            if t in self.variables:
                return Polynomial.variable(self.variables, t)
            if t in CONSTANTS:
                return Polynomial.constant(self.variables, CONSTANTS[t])
            raise PolynomialError(f"unknown variable {t!r} at position {pos}")
        if kind == "abs":
            name = "|" + t.strip("|").strip() + "|"
            if name in self.variables:
                return Polynomial.variable(self.variables, name)
            raise PolynomialError(
                f"absolute value {name} at position {pos} requires a declared abs lift"
            )
        if kind == "op" and t == "(":
            p = self.expr_()
            self.expect(")")
            return p
        raise PolynomialError(f"syntax error at position {pos}: unexpected {t or 'end of input'!r}")


def parse(expr: str, variables: Sequence[str]) -> Polynomial:
    """Parse an infix polynomial expression over the given ordered variables.

    Supports ``+ - * ^`` (``**`` is accepted as ``^``), parentheses, unary
    minus, decimal and rational literals (``1/2``), the constant ``pi`` and,
    when the variable list declares it, the absolute-value symbol ``|u1|``.
    """
    return _Parser(expr, tuple(variables)).parse()


# ---------------------------------------------------------------------------
# functional interface


def evaluate(p: Polynomial, point) -> float:
    point = np.asarray(point, dtype=float).ravel()
    if point.shape[0] != len(p.variables):
        raise PolynomialError(
            f"point has {point.shape[0]} coordinates, polynomial has {len(p.variables)} variables"
        )
    total = 0.0
    for a, c in p.items():
        v = c
        for x, e in zip(point, a):
            if e:
                v *= x**e
        total += v
    return float(total)


def differentiate(p: Polynomial, var: str) -> Polynomial:
    if var not in p.variables:
        raise PolynomialError(f"unknown variable {var!r}")
    i = p.variables.index(var)
    out = {}
    for a, c in p.items():
        if a[i]:
            b = list(a)
            b[i] -= 1
            out[tuple(b)] = c * a[i]
    return Polynomial(p.variables, out)


def control_degree(alpha: MultiIndex, control_idx: Sequence[int]) -> int:
    return sum(alpha[i] for i in control_idx)


def homogenize_control(
    p: Polynomial, control_vars: Sequence[str], w0: str, target_degree: int
) -> Polynomial:
    """Multiply each term by ``w0`` to reach control-degree ``target_degree``.

    ``w0`` must be in ``p.variables`` and unused by ``p``.
    """
    if w0 not in p.variables:
        raise PolynomialError(f"homogenizing variable {w0!r} is not declared")
    if p.uses(w0):
        raise PolynomialError(f"homogenizing variable {w0!r} already occurs in the polynomial")
    idx = []
    for v in control_vars:
        if v not in p.variables:
            raise PolynomialError(f"unknown control variable {v!r}")
        idx.append(p.variables.index(v))
    j = p.variables.index(w0)
    out = {}
    for a, c in p.items():
        k = control_degree(a, idx)
        if k > target_degree:
            raise PolynomialError(
                f"term with control degree {k} exceeds target degree {target_degree}"
            )
        b = list(a)
        b[j] = target_degree - k
        out[tuple(b)] = c
    return Polynomial(p.variables, out)


def _format_coef(c: float) -> str:
    r = repr(float(c))
    return r


def to_expression(p: Polynomial) -> str:
    """Text form that :func:`parse` reads back to the identical term map."""
    if p.is_zero():
        return "0"
    parts = []
    for a, c in p.items():
        factors = []
        for name, e in zip(p.variables, a):
            if e == 0:
                continue
            factors.append(name if e == 1 else f"{name}^{e}")
        mag = abs(c)
        if factors:
            body = "*".join(factors)
            text = body if mag == 1.0 else f"{_format_coef(mag)}*{body}"
        else:
            text = _format_coef(mag)
        parts.append(("-" if c < 0 else "+", text))
    first_sign, first = parts[0]
    out = ("-" if first_sign == "-" else "") + first
    for sign, text in parts[1:]:
        out += f" {sign} {text}"
    return out
