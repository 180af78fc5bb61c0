import io

import numpy as np
import pytest

from momentoc.poly import monomials_upto
from momentoc.reconstruct import ReconstructError, grid, recover, trajectory, write_csv


def moments_of(points, weights, degree):
    pts = np.asarray(points, dtype=float)
    return {a: float(np.asarray(weights) @ np.prod(pts ** np.array(a, dtype=float), axis=1))
            for a in monomials_upto(2, degree)}


def test_grid_sizes():
    assert len(grid([(0, 1), (0, 1)], 0.1)) == 121
    g = grid([(0, 1), (-1, 1)], 0.05)
    assert g.shape == (21, 41)
    with pytest.raises(ReconstructError):
        grid([(0, 1)], 0.0)
    with pytest.raises(ReconstructError):
        grid([(0, 1)], -1.0)
    with pytest.raises(ReconstructError):
        grid([(0, 1), (0, 1)], 1e-3, cap=1000)


def test_single_dirac_is_recovered_exactly():
    rng = np.random.default_rng(12)
    g = grid([(0, 1), (-1, 1)], 0.1)
    for _ in range(5):
        p = g.points[rng.integers(len(g))]
        meas = recover(moments_of([p], [1.0], 6), g)
        assert meas.mismatch <= 1e-9
        assert abs(meas.mass - 1.0) <= 1e-9
        assert np.allclose(meas.points[np.argmax(meas.weights)], p)


def test_recovered_moments_within_mismatch():
    rng = np.random.default_rng(13)
    pts = np.column_stack([rng.random(30), rng.uniform(-1, 1, 30)])
    mom = moments_of(pts, rng.random(30), 4)
    meas = recover(mom, grid([(0, 1), (-1, 1)], 0.1))
    exps = sorted(mom)
    diff = np.max(np.abs(meas.moments(exps) - np.array([mom[e] for e in exps])))
    assert diff <= meas.mismatch + 1e-9


def test_nested_grid_refinement():
    rng = np.random.default_rng(14)
    for _ in range(3):
        pts = np.column_stack([rng.random(10), rng.uniform(-1, 1, 10)])
        mom = moments_of(pts, rng.random(10), 4)
        eps = 0.2
        prev = np.inf
        for _ in range(3):
            # halving the spacing keeps every old point, so the optimum cannot grow
            meas = recover(mom, grid([(0, 1), (-1, 1)], eps), polish=False)
            assert meas.lp_optimum <= prev + 1e-9
            prev = meas.lp_optimum
            eps /= 2


def step_measure(n=200):
    t = (np.arange(n) + 0.5) / n
    pts = [[ti, 0.0 if ti < 0.5 else 1.0] for ti in t]
    w = [1.0 / n] * n
    s = (np.arange(20) + 0.5) / 20
    pts += [[0.5, si] for si in s]
    w += [1.0 / 20] * 20
    return np.array(pts), np.array(w)


def test_trajectory_of_step():
    from momentoc.reconstruct import AtomicMeasure

    pts, w = step_measure()
    # snap to the time grid that the trajectory uses
    axis = np.linspace(0, 1, 51)
    pts[:, 0] = axis[np.argmin(np.abs(pts[:, 0][:, None] - axis[None, :]), axis=1)]
    meas = AtomicMeasure(pts, w, 0.0, 0.0, [])
    tr = trajectory(meas, axis, resolution=0.1)
    assert len(tr.jumps) == 1
    j = tr.jumps[0]
    assert abs(j["t"] - 0.5) <= 0.02
    assert j["before"] == 0.0 and j["after"] == 1.0
    assert np.all(tr.values[axis < 0.45] == 0.0) and np.all(tr.values[axis > 0.55] == 1.0)
    buf = io.StringIO()
    write_csv(tr, buf)
    assert buf.getvalue().startswith("t,value,weight,is_jump\n")
    assert buf.getvalue().count("\n") == len(axis) + 1


def test_trajectory_without_jump():
    from momentoc.reconstruct import AtomicMeasure

    axis = np.linspace(0, 1, 51)
    pts = np.column_stack([axis, axis])
    w = np.full(51, 1.0 / 50)
    w[[0, -1]] /= 2
    tr = trajectory(AtomicMeasure(pts, w, 0.0, 0.0, []), axis, resolution=0.1)
    assert tr.jumps == []
    assert np.allclose(tr.values, axis)
