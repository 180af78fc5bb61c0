"""Dual certificates: a test function v and SOS multipliers read off the solver duals.

The dual of the moment relaxation states that, modulo the equalities of G,

    l_hat + z * T * |u|^p_hom - L v = sum_i g_i s_i,

where L v = dv/dt * rho + grad_y v . f_hat is the compactified generator, the
s_i are sums of squares given by the Gram matrices Z_i of the PSD blocks, and
z >= 0 is the multiplier of the optional mass bound. The certified lower
bound is v(1, yf) - v(0, y0) (or the free-boundary analogue), which equals the
dual objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compactify import CompactifiedProblem
from .conic import ConicSolution, Status
from .poly import Polynomial, differentiate, to_expression
from .relax import Relaxation


class CertifyError(ValueError):
    pass


@dataclass
class SOSMultiplier:
    label: str
    measure: str
    g: Polynomial
    basis: list
    gram: np.ndarray
    variables: tuple

    def polynomial(self) -> Polynomial:
        out: dict = {}
        nb = len(self.basis)
        for i in range(nb):
            for j in range(nb):
                c = self.gram[i, j]
                if c == 0.0:
                    continue
                a = tuple(x + y for x, y in zip(self.basis[i], self.basis[j]))
                out[a] = out.get(a, 0.0) + c
        return Polynomial(self.variables, out)

    def evaluate_many(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        B = np.array(self.basis, dtype=float)
        M = np.prod(pts[:, None, :] ** B[None, :, :], axis=2)
        return np.einsum("ki,ij,kj->k", M, self.gram, M)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.gram)[0]) if self.gram.size else 0.0


@dataclass
class Certificate:
    v: Polynomial  # internal (t, y) coordinates
    v_physical: Polynomial
    multipliers: list
    mass_multiplier: float
    ideal_multipliers: list  # (coefficient, h x^a) for explicit ideal rows
    bound: float
    order: int
    status: str
    extras: dict = field(default_factory=dict)

    def generator(self, cp: CompactifiedProblem) -> Polynomial:
        return generator(self.v, cp)


def generator(v: Polynomial, cp: CompactifiedProblem) -> Polynomial:
    """L v over the compactified variables."""
    vv = v.embed(cp.variables)
    out = differentiate(vv, "t") * cp.time_density
    for i, s in enumerate(cp.states):
        dv = differentiate(vv, s)
        if not dv.is_zero():
            out = out + dv * cp.f_hat[i]
    return out


def extract(sol: ConicSolution, rel: Relaxation, allow_inaccurate: bool = False) -> Certificate:
    ok = (Status.OPTIMAL,) + ((Status.INACCURATE,) if allow_inaccurate else ())
    if sol.status not in ok:
        raise CertifyError(f"certificate needs an optimal solve, got status {sol.status.value}")
    cp = rel.cp
    TY = ("t",) + cp.states
    v = Polynomial(TY, {})
    ideal = []
    for yr, (kind, item) in zip(sol.y, rel.row_origin):
        if kind == "test":
            v = v + Polynomial.monomial(TY, item.alpha, float(yr))
        elif kind == "ideal":
            ideal.append((float(yr), item))
    mults = []
    for info, Z in zip(rel.block_info, sol.Z):
        meas = rel.measures[info.measure]
        mults.append(SOSMultiplier(info.label, info.measure, info.g.embed(meas.variables), info.basis,
                                   0.5 * (Z + Z.T), meas.variables))
    z = float(sol.z_lp[0]) if rel.lp_info and rel.lp_info[0] == "mass_bound" else 0.0
    sc = cp.scaling
    sub = {"t": (Polynomial.variable(TY, "t") - sc.t0) * (1.0 / sc.T)}
    for i, s in enumerate(cp.states):
        sub[s] = (Polynomial.variable(TY, s) - float(sc.center[i])) * (1.0 / float(sc.scale[i]))
    v_phys = v.substitute(sub, TY)
    return Certificate(v, v_phys, mults, z, ideal, float(sol.dual_objective), rel.order, sol.status.value)


def identity_residual(cert: Certificate, rel: Relaxation) -> Polynomial:
    """l_hat + z T N - L v - sum g_i s_i - ideal part, over gamma, reduced modulo the equalities."""
    cp = rel.cp
    gamma = rel.gamma
    r = cp.l_hat - generator(cert.v, cp)
    if cert.mass_multiplier:
        r = r + cp.norm_poly * (cert.mass_multiplier * cp.scaling.T)
    for m in cert.multipliers:
        if m.measure == "gamma":
            r = r - m.g * m.polynomial()
    for c, hx in cert.ideal_multipliers:
        r = r - hx * c
    return Polynomial(gamma.variables, gamma.reducer.reduce(r))


def boundary_residuals(cert: Certificate, rel: Relaxation) -> dict:
    """Residuals of the boundary-measure parts: +-v restricted - sum g s on each free measure."""
    out = {}
    cp = rel.cp
    TY = ("t",) + cp.states
    for name in ("mu_f", "mu_0"):
        if name not in rel.measures:
            continue
        meas = rel.measures[name]
        sub = {}
        if "t" not in meas.variables:
            sub["t"] = 1.0 if name == "mu_f" else 0.0
        if name == "mu_f" and cp.yf.kind == "fixed":
            for i, s in enumerate(cp.states):
                sub[s] = float(cp.yf.point[i])
        vr = cert.v.substitute(sub, meas.variables) if sub else cert.v.embed(meas.variables)
        r = vr if name == "mu_f" else -vr
        for m in cert.multipliers:
            if m.measure == name:
                r = r - m.g * m.polynomial()
        out[name] = r.max_abs_coefficient() if not r.is_zero() else 0.0
    return out


def verify(cert: Certificate, rel: Relaxation, x: np.ndarray | None = None, samples: int = 1000,
           seed: int = 0) -> dict:
    """Residual report; never raises on a bad certificate."""
    cp = rel.cp
    cnorm = float(np.linalg.norm(rel.program.c))
    res = identity_residual(cert, rel)
    ident = res.max_abs_coefficient() if not res.is_zero() else 0.0
    hjb = cp.l_hat - generator(cert.v, cp)
    if cert.mass_multiplier:
        hjb = hjb + cp.norm_poly * (cert.mass_multiplier * cp.scaling.T)
    rng = np.random.default_rng(seed)
    pts = cp.sample(rng, samples)
    vals = hjb.embed(cp.variables).evaluate_many(pts) if not hjb.is_zero() else np.zeros(len(pts))
    scale = 1.0 + cnorm
    report = dict(
        identity_residual=ident,
        identity_tolerance=1e-6 * cnorm,
        objective_norm=cnorm,
        boundary_residual=boundary_residuals(cert, rel),
        hjb_min=float(vals.min()),
        hjb_scale=scale,
        hjb_ok=bool(vals.min() >= -1e-6 * scale),
        samples=samples,
        seed=seed,
        min_eigenvalues={f"{m.measure}:{m.label}": m.min_eigenvalue for m in cert.multipliers},
        gram_ok=all(m.min_eigenvalue >= -1e-8 * max(1.0, np.linalg.norm(m.gram)) for m in cert.multipliers),
        bound=cert.bound,
    )
    if x is not None:
        comp = rel.expectation(x, hjb)
        report["complementarity"] = float(comp)
        report["primal_minus_dual"] = float(rel.program.c @ x - cert.bound)
    return report


def zero_certificate(rel: Relaxation) -> Certificate:
    cp = rel.cp
    TY = ("t",) + cp.states
    mults = []
    for info in rel.block_info:
        meas = rel.measures[info.measure]
        nb = len(info.basis)
        mults.append(SOSMultiplier(info.label, info.measure, info.g.embed(meas.variables), info.basis,
                                   np.zeros((nb, nb)), meas.variables))
    zero = Polynomial(TY, {})
    return Certificate(zero, zero, mults, 0.0, [], 0.0, rel.order, "zero")


def describe(cert: Certificate) -> dict:
    return dict(
        v=to_expression(cert.v),
        v_physical=to_expression(cert.v_physical),
        bound=cert.bound,
        order=cert.order,
        status=cert.status,
        mass_multiplier=cert.mass_multiplier,
        blocks=[dict(label=m.label, measure=m.measure, size=len(m.basis), min_eigenvalue=m.min_eigenvalue)
                for m in cert.multipliers],
    )
