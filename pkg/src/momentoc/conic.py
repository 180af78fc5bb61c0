"""Primal-dual interior-point solver for linear programs over PSD and nonnegative cones.

Problem form::

    minimize    c'x
    subject to  A x = b
                s_l = F_l x + h_l >= 0                 (nonnegative orthant)
                S_i = mat(F_i x + h_i) is PSD          (one per block)

Dual::

    maximize    b'y - h_l'z_l - sum_i <h_i, Z_i>
    subject to  c - A'y - F_l'z_l - sum_i F_i' vec(Z_i) = 0,   z_l >= 0, Z_i PSD

The method is an infeasible-start path-following scheme with Nesterov-Todd
scaling and a Mehrotra predictor-corrector step. The Newton system is
reduced to the Schur complement on x, which is dense and solved by Cholesky
with a small diagonal regularization and iterative refinement.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INACCURATE = "inaccurate"
    MAX_ITER = "max_iter"
    NUMERICAL = "numerical_error"
    UNBOUNDED_MASS = "unbounded-mass"
    DUAL_INFEASIBLE = "dual_infeasible"
    PRIMAL_INFEASIBLE = "primal_infeasible"


class SolverError(RuntimeError):
    """Numerical breakdown; carries the last iterate for inspection."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass
class PSDBlock:
    """Affine symmetric-matrix map x -> mat(F x + h) of order ``size``.

    ``F`` has ``size*size`` rows in row-major (i*size + j) layout and must be
    symmetric-valued, i.e. rows (i, j) and (j, i) coincide.
    """

    size: int
    F: sp.csc_matrix
    h: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.F = sp.csc_matrix(self.F)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.F.shape[0] != self.size * self.size or self.h.shape[0] != self.size * self.size:
            raise ValueError(f"block {self.label!r}: inconsistent dimensions")

    def matrix(self, x: np.ndarray) -> np.ndarray:
        return (self.F @ x + self.h).reshape(self.size, self.size)


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    lp_F: sp.csr_matrix | None = None
    lp_h: np.ndarray | None = None
    blocks: list = field(default_factory=list)
    lp_labels: list = field(default_factory=list)
    mass_index: int | None = None
    mass_start: float = 1.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.shape[0]
        self.A = sp.csr_matrix(self.A) if self.A is not None else sp.csr_matrix((0, n))
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.lp_F is None:
            self.lp_F = sp.csr_matrix((0, n))
            self.lp_h = np.zeros(0)
        self.lp_F = sp.csr_matrix(self.lp_F)
        self.lp_h = np.asarray(self.lp_h, dtype=float).ravel()
        if self.A.shape[1] != n or self.lp_F.shape[1] != n:
            raise ValueError("constraint matrices do not match the objective length")
        if self.A.shape[0] != self.b.shape[0] or self.lp_F.shape[0] != self.lp_h.shape[0]:
            raise ValueError("right-hand side length mismatch")
        for blk in self.blocks:
            if blk.F.shape[1] != n:
                raise ValueError(f"block {blk.label!r} does not match the objective length")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def degree(self) -> int:
        return self.lp_F.shape[0] + sum(b.size for b in self.blocks)

    def primal_slacks(self, x):
        return self.lp_F @ x + self.lp_h, [blk.matrix(x) for blk in self.blocks]

    def dual_residual(self, x_y_z) -> np.ndarray:
        y, zl, Zs = x_y_z
        r = self.c - self.A.T @ y - self.lp_F.T @ zl
        for blk, Z in zip(self.blocks, Zs):
            r = r - blk.F.T @ Z.ravel()
        return r

    def dual_objective(self, y, zl, Zs) -> float:
        val = float(self.b @ y - self.lp_h @ zl)
        for blk, Z in zip(self.blocks, Zs):
            val -= float(blk.h @ Z.ravel())
        return val


@dataclass
class Settings:
    tol: float = 1e-8
    max_iter: int = 300
    regularization: float = 1e-12
    # 0.9 rather than the usual 0.99: the concentrating relaxations lose
    # centrality with long steps and stall around 1e-5
    step_fraction: float = 0.9
    refinement_steps: int = 3
    mass_cap: float = 1e8
    verbose: bool = False
    # inaccurate solutions are accepted below this level
    inaccurate_tol: float = 1e-5
    # stop when the best error has not halved over this many iterations
    stall_iterations: int = 20


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    z_lp: np.ndarray
    Z: list
    s_lp: np.ndarray
    S: list
    primal_objective: float
    dual_objective: float
    status: Status
    iterations: int
    residuals: dict
    trace: list
    solve_time: float = 0.0
    diagnosis: dict | None = None

    @property
    def relative_gap(self) -> float:
        return abs(self.primal_objective - self.dual_objective) / (1.0 + abs(self.primal_objective))


# ---------------------------------------------------------------------------
# Jordan-algebra helpers on scaled (diagonal lambda) coordinates


def _jordan_solve(lam: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Solve (lam X + X lam)/2 = M for X, lam diagonal."""
    return 2.0 * M / (lam[:, None] + lam[None, :])


def _max_step_psd(lam: np.ndarray, D: np.ndarray) -> float:
    """Largest alpha with diag(lam) + alpha D PSD (inf if unrestricted)."""
    isq = 1.0 / np.sqrt(lam)
    T = D * isq[:, None] * isq[None, :]
    T = 0.5 * (T + T.T)
    emin = la.eigvalsh(T, subset_by_index=[0, 0])[0] if T.shape[0] > 1 else T[0, 0]
    return np.inf if emin >= 0 else -1.0 / emin


def _max_step_lp(lam: np.ndarray, d: np.ndarray) -> float:
    r = d / lam
    m = r.min() if r.size else 0.0
    return np.inf if m >= 0 else -1.0 / m


class _Scaling:
    """Nesterov-Todd scaling for the current (s, z) pair."""

    def __init__(self, s_lp, z_lp, S, Z):
        self.lp_lam = np.sqrt(s_lp * z_lp)
        self.lp_w = np.sqrt(z_lp / s_lp)  # W for the orthant, W s = W^{-1} z = lambda
        self.lp_w2 = z_lp / s_lp
        self.lam = []
        self.rti = []
        self.W = []
        for Si, Zi in zip(S, Z):
            Ls = la.cholesky(Si, lower=True)
            Lz = la.cholesky(Zi, lower=True)
            U, lam, _ = la.svd(Lz.T @ Ls)
            rti = (Lz @ U) / np.sqrt(lam)[None, :]
            self.lam.append(lam)
            self.rti.append(rti)
            W = rti @ rti.T
            self.W.append(0.5 * (W + W.T))


def _schur(prog: ConicProgram, sc: _Scaling) -> np.ndarray:
    n = prog.n
    H = np.zeros((n, n))
    if prog.lp_F.shape[0]:
        Fl = prog.lp_F
        H += (Fl.T @ sp.diags(sc.lp_w2) @ Fl).toarray()
    for blk, W in zip(prog.blocks, sc.W):
        F = blk.F
        m = blk.size
        indptr, indices, data = F.indptr, F.indices, F.data
        FT = F.T.tocsr()
        for k in range(n):
            lo, hi = indptr[k], indptr[k + 1]
            if lo == hi:
                continue
            rows = indices[lo:hi]
            a, bb = np.divmod(rows, m)
            Xk = W[:, a] @ (data[lo:hi, None] * W[bb, :])
            H[:, k] += FT @ Xk.ravel()
    return 0.5 * (H + H.T)


class _KKT:
    """Factorization of [[H, -A'], [A, 0]] via Schur complement on y."""

    def __init__(self, H, A, reg):
        self.H = H
        self.A = A
        n = H.shape[0]
        # Jacobi scaling so the regularization acts evenly on all coordinates
        dg = np.diag(H).copy()
        dg[dg <= 0] = 1.0
        self.D = 1.0 / np.sqrt(dg)
        Hs = H * self.D[:, None] * self.D[None, :]
        delta = reg
        self.delta_used = 0.0
        for attempt in range(8):
            try:
                self.cH = la.cho_factor(Hs + delta * np.eye(n), lower=True, check_finite=False)
                if not np.all(np.isfinite(self.cH[0])):
                    raise la.LinAlgError("nonfinite factor")
                self.delta_used = delta
                break
            except la.LinAlgError:
                delta = max(delta * 100.0, 1e-14)
        else:
            raise SolverError("Schur complement is not positive definite after regularization")
        m = A.shape[0]
        if m:
            As = A.toarray() * self.D[None, :]
            self.HiAt = self._hsolve(As.T)
            S = As @ self.HiAt
            S = 0.5 * (S + S.T)
            sd = np.diag(S).copy()
            sd[sd <= 0] = 1.0
            self.E = 1.0 / np.sqrt(sd)
            S = S * self.E[:, None] * self.E[None, :]
            sdelta = reg
            for attempt in range(8):
                try:
                    self.cS = la.cho_factor(S + sdelta * np.eye(m), lower=True, check_finite=False)
                    break
                except la.LinAlgError:
                    sdelta = max(sdelta * 100.0, 1e-14)
            else:
                raise SolverError("equality Schur complement is singular")
            self.sdelta = sdelta
            self.As = As

    def _hsolve(self, r):
        return la.cho_solve(self.cH, r, check_finite=False)

    def _solve_once(self, r1, r2):
        # H dx - A' dy = r1 ; A dx = r2, in the scaled variables dx = D dxs
        Hi_r1 = self._hsolve(self.D * r1)
        if self.A.shape[0]:
            rhs = self.E * (r2 - self.As @ Hi_r1)
            dy = self.E * la.cho_solve(self.cS, rhs, check_finite=False)
            dxs = Hi_r1 + self.HiAt @ dy
        else:
            dy = np.zeros(0)
            dxs = Hi_r1
        return self.D * dxs, dy

    def solve(self, r1, r2, steps=3, apply_H=None):
        # the factorization is only a preconditioner once the scaling gets badly
        # conditioned; GMRES on the operator form recovers the lost accuracy
        Hop = apply_H if apply_H is not None else (lambda v: self.H @ v)
        n, m = self.H.shape[0], self.A.shape[0]
        dx, dy = self._solve_once(r1, r2)
        rhs = np.concatenate([r1, r2])
        scale = np.linalg.norm(rhs) + 1e-300

        def kkt(v):
            vx, vy = v[:n], v[n:]
            return np.concatenate([Hop(vx) - self.A.T @ vy, self.A @ vx])

        def resid(vx, vy):
            return rhs - kkt(np.concatenate([vx, vy]))

        e = resid(dx, dy)
        for _ in range(steps):
            if np.linalg.norm(e) <= 1e-13 * scale:
                return dx, dy
            cx, cy = self._solve_once(e[:n], e[n:])
            tx, ty = dx + cx, dy + cy
            te = resid(tx, ty)
            if np.linalg.norm(te) >= np.linalg.norm(e):
                break
            dx, dy, e = tx, ty, te
        if np.linalg.norm(e) <= 1e-10 * scale:
            return dx, dy

        def prec(v):
            a, b = self._solve_once(v[:n], v[n:])
            return np.concatenate([a, b])

        op = spla.LinearOperator((n + m, n + m), matvec=kkt)
        M = spla.LinearOperator((n + m, n + m), matvec=prec)
        v0 = np.concatenate([dx, dy])
        v, _ = spla.gmres(op, rhs, x0=v0, M=M, rtol=1e-14, atol=0.0, restart=30, maxiter=max(steps, 1))
        if np.linalg.norm(rhs - kkt(v)) < np.linalg.norm(e):
            return v[:n].copy(), v[n:].copy()
        return dx, dy


def _initial_point(prog: ConicProgram):
    x = np.zeros(prog.n)
    if prog.mass_index is not None:
        x[prog.mass_index] = prog.mass_start
    s_lp = np.ones(prog.lp_F.shape[0])
    z_lp = np.ones(prog.lp_F.shape[0])
    S = [np.eye(b.size) for b in prog.blocks]
    Z = [np.eye(b.size) for b in prog.blocks]
    y = np.zeros(prog.A.shape[0])
    return x, y, s_lp, z_lp, S, Z


def solve(prog: ConicProgram, settings: Settings | None = None) -> ConicSolution:
    """Solve ``prog``; never raises on numerical trouble, the status says what happened."""
    st = settings or Settings()
    t_start = time.perf_counter()
    x, y, s_lp, z_lp, S, Z = _initial_point(prog)
    nu = max(prog.degree, 1)
    A, b, c = prog.A, prog.b, prog.c
    nb, nh, nc = 1.0 + np.linalg.norm(b), 1.0, 1.0 + np.linalg.norm(c)
    nh = 1.0 + np.sqrt(np.linalg.norm(prog.lp_h) ** 2 + sum(np.linalg.norm(blk.h) ** 2 for blk in prog.blocks))
    trace = []
    best = None
    status = Status.MAX_ITER
    it = 0
    reg_used = 0.0

    def snapshot():
        return (x.copy(), y.copy(), s_lp.copy(), z_lp.copy(), [M.copy() for M in S], [M.copy() for M in Z])

    for it in range(st.max_iter + 1):
        # residuals
        sl_x, S_x = prog.primal_slacks(x)
        r_p = A @ x - b
        r_cl = sl_x - s_lp
        r_cs = [Sx - Si for Sx, Si in zip(S_x, S)]
        r_d = prog.dual_residual((y, z_lp, Z))
        gap = float(s_lp @ z_lp) + sum(float(np.sum(Si * Zi)) for Si, Zi in zip(S, Z))
        mu = gap / nu
        pcost = float(c @ x)
        dcost = prog.dual_objective(y, z_lp, Z)
        pres = max(
            np.linalg.norm(r_p) / nb,
            np.sqrt(np.linalg.norm(r_cl) ** 2 + sum(np.linalg.norm(R) ** 2 for R in r_cs)) / nh,
        )
        dres = np.linalg.norm(r_d) / nc
        relgap = max(abs(pcost - dcost), gap) / (1.0 + abs(pcost))
        mass = float(x[prog.mass_index]) if prog.mass_index is not None else float("nan")
        rec = dict(iter=it, mu=mu, primal=pcost, dual=dcost, pres=pres, dres=dres, gap=relgap, mass=mass)
        trace.append(rec)
        if st.verbose:
            log.info(
                "it %3d  pcost % .9e  dcost % .9e  gap %.2e  pres %.2e  dres %.2e  mass %.3e",
                it, pcost, dcost, relgap, pres, dres, mass,
            )
        err = max(pres, dres, relgap)
        if not np.isfinite(err):
            status = Status.NUMERICAL
            break
        if best is None or err < best[0]:
            # the stall clock restarts only on a real improvement
            improved = best is None or err < 0.5 * best[4]
            best = (err, it if improved else best[1], snapshot(), rec, err if improved else best[4])
        if err <= st.tol:
            status = Status.OPTIMAL
            break
        if prog.mass_index is not None and abs(mass) > st.mass_cap:
            status = Status.UNBOUNDED_MASS
            break
        if it == st.max_iter:
            status = Status.MAX_ITER
            break
        if it - best[1] >= st.stall_iterations:
            status = Status.NUMERICAL
            break

        try:
            sc = _Scaling(s_lp, z_lp, S, Z)
            H = _schur(prog, sc)
            kkt = _KKT(H, A, st.regularization)
            reg_used = max(reg_used, kkt.delta_used)
        except (la.LinAlgError, SolverError, ValueError) as exc:
            log.debug("factorization failed at iteration %d: %s", it, exc)
            status = Status.NUMERICAL
            break

        def apply_H(v):
            out = prog.lp_F.T @ (sc.lp_w2 * (prog.lp_F @ v))
            for blk, W in zip(prog.blocks, sc.W):
                M = (blk.F @ v).reshape(blk.size, blk.size)
                out = out + blk.F.T @ (W @ M @ W).ravel()
            return out

        def direction(U_lp, U_blocks):
            # U is the scaled sum ds~ + dz~ prescribed by the complementarity equation.
            # dZ = R^{-T} U R^{-1} - W dS W,  dS = F dx + r_c
            r1 = -r_d.copy()
            r1 += prog.lp_F.T @ (sc.lp_w * U_lp - sc.lp_w2 * r_cl)
            for blk, rti, W, U, Rc in zip(prog.blocks, sc.rti, sc.W, U_blocks, r_cs):
                M = rti @ U @ rti.T - W @ Rc @ W
                r1 += blk.F.T @ M.ravel()
            # H dx - A' dy = r1 - ... sign: A'dy + F'dZ = r_d  ->  A'dy - H dx = r_d - F'(R^{-T}UR^{-1}) + F'(W r_c W)
            dx, dy = kkt.solve(r1, -r_p, st.refinement_steps, apply_H)
            ds_lp = prog.lp_F @ dx + r_cl
            dz_lp = sc.lp_w * U_lp - sc.lp_w2 * ds_lp
            dS, dZ, dst, dzt = [], [], [], []
            for blk, rti, W, U, Rc in zip(prog.blocks, sc.rti, sc.W, U_blocks, r_cs):
                dSi = (blk.F @ dx).reshape(blk.size, blk.size) + Rc
                dSi = 0.5 * (dSi + dSi.T)
                dZi = rti @ U @ rti.T - W @ dSi @ W
                dZi = 0.5 * (dZi + dZi.T)
                t_s = rti.T @ dSi @ rti
                t_s = 0.5 * (t_s + t_s.T)
                dS.append(dSi)
                dZ.append(dZi)
                dst.append(t_s)
                dzt.append(U - t_s)
            dst_lp = ds_lp * sc.lp_w
            dzt_lp = U_lp - dst_lp
            return dx, dy, ds_lp, dz_lp, dS, dZ, dst_lp, dzt_lp, dst, dzt

        def max_step(d):
            _, _, _, _, _, _, dst_lp, dzt_lp, dst, dzt = d
            a = min(_max_step_lp(sc.lp_lam, dst_lp), _max_step_lp(sc.lp_lam, dzt_lp))
            for lam, ts, tz in zip(sc.lam, dst, dzt):
                a = min(a, _max_step_psd(lam, ts), _max_step_psd(lam, tz))
            return a

        try:
            # predictor: target complementarity zero
            U_lp = -sc.lp_lam
            U_b = [-np.diag(lam) for lam in sc.lam]
            daff = direction(U_lp, U_b)
            a_aff = min(1.0, max_step(daff))
            sigma = (1.0 - a_aff) ** 3
            # corrector with second-order term
            _, _, _, _, _, _, dst_lp, dzt_lp, dst, dzt = daff
            U_lp = (sigma * mu - sc.lp_lam**2 - dst_lp * dzt_lp) / sc.lp_lam
            U_b = []
            for lam, ts, tz in zip(sc.lam, dst, dzt):
                prod = 0.5 * (ts @ tz + tz @ ts)
                M = sigma * mu * np.eye(lam.size) - np.diag(lam**2) - prod
                U_b.append(_jordan_solve(lam, M))
            d = direction(U_lp, U_b)
            alpha = min(1.0, st.step_fraction * max_step(d))
        except (la.LinAlgError, ValueError) as exc:
            log.debug("direction failed at iteration %d: %s", it, exc)
            status = Status.NUMERICAL
            break
        dx, dy, ds_lp, dz_lp, dS, dZ, *_ = d
        kerr = A.T @ dy + prog.lp_F.T @ dz_lp - r_d
        for blk, D in zip(prog.blocks, dZ):
            kerr = kerr + blk.F.T @ D.ravel()
        trace[-1]["newton_residual"] = float(np.linalg.norm(kerr) / nc)
        if not np.isfinite(alpha) or alpha <= 1e-12 or not np.all(np.isfinite(dx)):
            status = Status.NUMERICAL
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s_lp = s_lp + alpha * ds_lp
        z_lp = z_lp + alpha * dz_lp
        S = [Si + alpha * D for Si, D in zip(S, dS)]
        Z = [Zi + alpha * D for Zi, D in zip(Z, dZ)]
        trace[-1]["step"] = alpha
        trace[-1]["sigma"] = sigma

    # report the best iterate
    err, best_it, snap, rec, _ = best if best is not None else (np.inf, 0, snapshot(), trace[-1], np.inf)
    if status in (Status.MAX_ITER, Status.NUMERICAL):
        if err <= st.tol:
            status = Status.OPTIMAL
        elif err <= st.inaccurate_tol:
            status = Status.INACCURATE
    if status == Status.UNBOUNDED_MASS:
        snap = snapshot()
        rec = trace[-1]
    x, y, s_lp, z_lp, S, Z = snap
    sol = ConicSolution(
        x=x,
        y=y,
        z_lp=z_lp,
        Z=Z,
        s_lp=s_lp,
        S=S,
        primal_objective=float(c @ x),
        dual_objective=prog.dual_objective(y, z_lp, Z),
        status=status,
        iterations=it,
        residuals=dict(primal=rec["pres"], dual=rec["dres"], gap=rec["gap"], regularization=reg_used),
        trace=trace,
        solve_time=time.perf_counter() - t_start,
    )
    diag = detect_unbounded(trace)
    sol.diagnosis = diag
    if diag["unbounded"] and status != Status.OPTIMAL:
        sol.status = Status.UNBOUNDED_MASS
    return sol


def detect_unbounded(trace: list, growth: float = 10.0, min_iter: int = 10) -> dict:
    """Diagnose escaping mass from an iterate trace.

    Flags when the mass entry grows by ``growth`` or more between the first
    iterate with small primal residual and the last one, while the primal
    objective does not increase over the same stretch.
    """
    out = dict(unbounded=False, growth=1.0, reason="")
    if len(trace) < min_iter:
        out["reason"] = "too few iterations"
        return out
    masses = np.array([r.get("mass", np.nan) for r in trace], dtype=float)
    if not np.all(np.isfinite(masses)):
        out["reason"] = "no mass entry"
        return out
    pres = np.array([r["pres"] for r in trace])
    prim = np.array([r["primal"] for r in trace])
    ok = np.flatnonzero(pres <= 1e-3 * max(1.0, pres[0]))
    if ok.size < 2:
        out["reason"] = "primal residual never small"
        return out
    i0, i1 = ok[0], ok[-1]
    m0 = max(abs(masses[i0]), 1e-12)
    g = float(abs(masses[i1]) / m0)
    out["growth"] = g
    decreasing = prim[i1] <= prim[i0] + 1e-9 * (1 + abs(prim[i0]))
    if g >= growth and decreasing:
        out["unbounded"] = True
        out["reason"] = f"mass grew by {g:.3g} while the objective decreased"
    else:
        out["reason"] = "mass bounded"
    return out
