"""Recover atomic measures on a grid from relaxation moments, then read off trajectories.

For one coordinate c at a time, the (t, c) marginal moments m_ab = l(t^a c^b),
a + b <= 2d, are matched by nonnegative weights on a grid through

    minimize eps  s.t.  |sum_i lam_i t_i^a c_i^b - m_ab| <= eps,  lam >= 0.

The conic solver handles the dual of this LP (2 variables per moment instead of
one per grid point): maximize m'(q - p) s.t. sum(p + q) = 1, E'(p - q) >= 0,
p, q >= 0; the weights are the multipliers of the E' rows.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as so
import scipy.sparse as sp

from .conic import ConicProgram, Settings, Status, solve
from .poly import monomials_upto
from .relax import Relaxation


class ReconstructError(ValueError):
    pass


@dataclass
class Grid:
    axes: list
    points: np.ndarray

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    def __len__(self):
        return self.points.shape[0]


def grid(bounds, eps: float, cap: int = 200_000) -> Grid:
    """Uniform grid with spacing <= eps over a box given as [(lo, hi), ...]."""
    if not eps > 0:
        raise ReconstructError("grid spacing must be positive")
    axes = []
    for lo, hi in bounds:
        if hi < lo:
            raise ReconstructError(f"empty interval [{lo}, {hi}]")
        k = int(np.ceil((hi - lo) / eps - 1e-12)) + 1
        axes.append(np.linspace(lo, hi, max(k, 1)))
    size = int(np.prod([len(a) for a in axes]))
    if size > cap:
        raise ReconstructError(f"grid has {size} points, above the cap {cap}")
    pts = np.array(list(itertools.product(*axes)), dtype=float)
    return Grid(axes, pts)


@dataclass
class AtomicMeasure:
    points: np.ndarray
    weights: np.ndarray
    mismatch: float
    lp_optimum: float
    exponents: list
    status: str = "optimal"
    extras: dict = field(default_factory=dict)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def moments(self, exponents=None) -> np.ndarray:
        E = _design(self.points, exponents or self.exponents)
        return E @ self.weights


def _design(points, exponents) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    B = np.asarray(exponents, dtype=float)
    return np.prod(P[None, :, :] ** B[:, None, :], axis=2)


def marginal_moments(rel: Relaxation, x, coord: str, degree: int | None = None) -> dict:
    """Moments l(t^a c^b), a + b <= degree (default 2d), of the gamma measure."""
    V = rel.cp.variables
    if coord not in V:
        raise ReconstructError(f"unknown coordinate {coord!r}; have {', '.join(V)}")
    deg = 2 * rel.order if degree is None else degree
    it, ic = V.index("t"), V.index(coord)
    out = {}
    for a, b in monomials_upto(2, deg):
        alpha = [0] * len(V)
        alpha[it] += a
        alpha[ic] += b
        out[(a, b)] = rel.moment(x, tuple(alpha))
    return out


def recover(moments: dict, g: Grid, normalize: bool = True, tol: float = 1e-9, polish: bool = True) -> AtomicMeasure:
    exps = sorted(moments)
    z = np.array([moments[e] for e in exps], dtype=float)
    mass = z[exps.index((0,) * len(exps[0]))] if (0,) * len(exps[0]) in moments else 1.0
    scale = mass if (normalize and mass > 0) else 1.0
    zs = z / scale
    E = _design(g.points, exps)
    m, N = E.shape
    # dual LP in (p, q)
    c = np.concatenate([zs, -zs])
    A = sp.csr_matrix(np.ones((1, 2 * m)))
    Fl = sp.vstack([sp.identity(2 * m, format="csr"), sp.csr_matrix(np.hstack([E.T, -E.T]))]).tocsr()
    prog = ConicProgram(c=c, A=A, b=np.ones(1), lp_F=Fl, lp_h=np.zeros(2 * m + N))
    sol = solve(prog, Settings(tol=tol, max_iter=200))
    if sol.status not in (Status.OPTIMAL, Status.INACCURATE):
        raise ReconstructError(f"reconstruction LP failed: {sol.status.value}")
    lam = np.maximum(sol.z_lp[2 * m :], 0.0)
    lp_opt = max(-sol.primal_objective, 0.0)
    mis = float(np.max(np.abs(E @ lam - zs)))
    keep = np.flatnonzero(lam > 1e-6 * lam.max()) if lam.max() > 0 else np.zeros(0, dtype=int)
    # refit only a support small enough to be pinned down by the moments;
    # spread-out solutions are kept as the interior point left them
    if polish and 0 < keep.size <= m:
        lam_s, _ = so.nnls(E[:, keep], zs)
        trial = np.zeros(N)
        trial[keep] = lam_s
        tmis = float(np.max(np.abs(E @ trial - zs)))
        if tmis <= mis:
            lam, mis = trial, tmis
    keep = np.flatnonzero(lam > 1e-8)
    return AtomicMeasure(
        points=g.points[keep], weights=lam[keep] * scale, mismatch=mis * scale, lp_optimum=lp_opt * scale,
        exponents=exps, status=sol.status.value, extras=dict(mass=mass, grid_points=N),
    )


def default_bounds(rel: Relaxation, coord: str) -> list:
    b = rel.cp.bounds
    return [b.get("t", (0.0, 1.0)), b.get(coord, (-1.0, 1.0))]


def recover_coordinate(rel: Relaxation, x, coord: str, eps: float, cap: int = 200_000) -> AtomicMeasure:
    g = grid(default_bounds(rel, coord), eps, cap)
    return recover(marginal_moments(rel, x, coord), g)


def _weighted_median(values, weights) -> float:
    o = np.argsort(values)
    v, w = values[o], weights[o]
    cw = np.cumsum(w)
    return float(v[np.searchsorted(cw, 0.5 * cw[-1])])


@dataclass
class Trajectory:
    t: np.ndarray  # internal time of each cell
    values: np.ndarray  # internal coordinate value per cell
    weights: np.ndarray  # cell mass
    is_jump: np.ndarray
    jumps: list
    coord: str


def trajectory(meas: AtomicMeasure, t_axis, jump_threshold: float = 0.25, coord: str = "y1",
               resolution: float = 0.0) -> Trajectory:
    """Weighted median per time cell, with jump annotations.

    Jumps are detected on windows of width ``resolution`` (at least one cell):
    a window whose mass density exceeds the median density by the factor
    1 + jump_threshold is a jump, located at its heaviest cell. Moments of
    degree 2d cannot resolve the time marginal below about 1/(2d), so finer
    windows mostly see noise.
    """
    t_axis = np.asarray(t_axis, dtype=float)
    k = len(t_axis)
    if k < 2:
        raise ReconstructError("need at least two time cells")
    mids = 0.5 * (t_axis[:-1] + t_axis[1:])
    cell = np.clip(np.searchsorted(mids, meas.points[:, 0]), 0, k - 1)
    mass = np.bincount(cell, weights=meas.weights, minlength=k)
    vals = np.full(k, np.nan)
    for i in range(k):
        sel = cell == i
        if np.any(sel) and mass[i] > 0:
            vals[i] = _weighted_median(meas.points[sel, 1], meas.weights[sel])
    # windows
    lo, hi = t_axis[0], t_axis[-1]
    span = hi - lo
    nwin = max(1, min(k, int(np.floor(span / max(resolution, 1e-300))) if resolution > 0 else k))
    edges = np.linspace(lo, hi, nwin + 1)
    bounds = np.concatenate([[lo], mids, [hi]])
    # cell mass split over windows by overlap of the cell interval
    wmass = np.zeros(nwin)
    for i in range(k):
        a, b = bounds[i], bounds[i + 1]
        if b <= a:
            wmass[min(np.searchsorted(edges, a, side="right") - 1, nwin - 1)] += mass[i]
            continue
        for w in range(nwin):
            ov = min(b, edges[w + 1]) - max(a, edges[w])
            if ov > 0:
                wmass[w] += mass[i] * ov / (b - a)
    wwidth = np.diff(edges)
    dens = wmass / wwidth
    ref = float(np.median(dens))
    wjump = dens > (1.0 + jump_threshold) * ref
    is_jump = np.zeros(k, dtype=bool)
    jumps = []
    w = 0
    while w < nwin:
        if not wjump[w]:
            w += 1
            continue
        v = w
        while v + 1 < nwin and wjump[v + 1]:
            v += 1
        inside = np.flatnonzero((t_axis >= edges[w] - 1e-12) & (t_axis <= edges[v + 1] + 1e-12))
        c = inside[np.argmax(mass[inside])]
        is_jump[c] = True
        before = next((vals[q] for q in range(c - 1, -1, -1) if np.isfinite(vals[q]) and not is_jump[q]), np.nan)
        after = next((vals[q] for q in range(c + 1, k) if np.isfinite(vals[q])), np.nan)
        excess = float(np.sum(wmass[w : v + 1] - ref * wwidth[w : v + 1]))
        jumps.append(dict(t=float(t_axis[c]), before=float(before), after=float(after), excess_mass=excess))
        w = v + 1
    return Trajectory(t_axis, vals, mass, is_jump, jumps, coord)


def to_physical(traj: Trajectory, rel: Relaxation) -> Trajectory:
    sc = rel.cp.scaling
    t = sc.t_physical(traj.t)
    vals = traj.values.copy()
    jumps = [dict(j) for j in traj.jumps]
    states = rel.cp.states
    if traj.coord in states:
        i = states.index(traj.coord)
        vals = sc.center[i] + sc.scale[i] * vals
        for j in jumps:
            for key in ("before", "after"):
                j[key] = float(sc.center[i] + sc.scale[i] * j[key])
    for j in jumps:
        j["t"] = float(sc.t_physical(j["t"]))
    return Trajectory(np.asarray(t), vals, traj.weights * sc.T, traj.is_jump, jumps, traj.coord)


def write_csv(traj: Trajectory, fh) -> None:
    fh.write("t,value,weight,is_jump\n")
    for t, v, w, j in zip(traj.t, traj.values, traj.weights, traj.is_jump):
        fh.write(f"{t!r},{v!r},{w!r},{int(bool(j))}\n")


def gnuplot_script(csv_name: str, coord: str) -> str:
    return (
        "set datafile separator ','\n"
        "set key off\n"
        f"set xlabel 't'\nset ylabel '{coord}'\n"
        f"plot '{csv_name}' every ::1 using 1:2 with linespoints pt 7 ps 0.5, \\\n"
        f"     '{csv_name}' every ::1 using 1:($4 > 0 ? $2 : 1/0) with points pt 6 ps 1.5\n"
    )
