import numpy as np
import pytest

from weakanchor.energy import AnchoringParams
from weakanchor.field import OrderParameter
from weakanchor.geometry import GeometrySpec, build_grid
from weakanchor.solver import (SolveConfig, SolverError, check_apriori, default_boundary_points,
                               far_field_phase, relax, solve, truncation_sweep)
from weakanchor.vortex import detect


def _history_monotone(rep):
    e = [h.breakdown.total for h in rep.history]
    return all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(e, e[1:]))


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolveConfig(tol_r=-1.0)
    with pytest.raises(ValueError):
        SolveConfig(init="bogus")
    assert SolveConfig().residual_tol(AnchoringParams(0.05, 0.5)) == pytest.approx(2e-5)


@pytest.mark.parametrize("method", ["lbfgs", "flow"])
def test_degree_zero_from_random_start(method):
    spec = GeometrySpec("III", 4.0, 0)
    grid = build_grid(spec, 24, 32)
    rep = solve(spec, grid, AnchoringParams(0.2, 0.5), SolveConfig(init="random", method=method, seed=3))
    assert rep.converged
    assert rep.energy < 1e-8
    assert np.abs(rep.u.values - 1).max() < 1e-4
    assert _history_monotone(rep)


def test_disk_interior_vortices():
    spec = GeometrySpec("I", 1.0, 2)
    grid = build_grid(spec, 48, 96)
    p = AnchoringParams(0.1, 0.8)
    rep = solve(spec, grid, p)
    assert rep.converged and _history_monotone(rep)
    ds = detect(rep.u, params=p)
    assert [d.degree for d in ds.interior] == [1, 1]
    assert ds.boundary == [] and ds.accounting_ok
    # the pair sits symmetrically about the centre
    assert abs(ds.interior[0].z + ds.interior[1].z) < 2 * grid.dtheta
    assert rep.max_abs_u <= 1 + 1e-8


def test_annulus_pins_outer_ring():
    spec = GeometrySpec("II", 3.0, 2)
    grid = build_grid(spec, 32, 96)
    p = AnchoringParams(0.1, 0.8)
    rep = solve(spec, grid, p)
    assert rep.converged
    assert np.all(rep.u.values[grid.dirichlet_row] == 1.0)
    ds = detect(rep.u, params=p)
    assert ds.accounting_ok
    assert sum(d.degree for d in ds.interior) + sum(b.degree for b in ds.boundary) == -2


def test_droplet_boundary_branch_and_far_field():
    spec = GeometrySpec("III", 8.0, 2)
    grid = build_grid(spec, 48, 128)
    p = AnchoringParams(0.1, 0.25)
    rep = solve(spec, grid, p)
    assert rep.converged
    assert set(rep.branches) == {"upper_bound", "canonical"}
    assert rep.energy == min(rep.branches.values())
    assert abs(rep.phi_star) < 0.1
    assert far_field_phase(rep.u.values, grid) == pytest.approx(rep.phi_star)
    assert np.all(rep.u.values[grid.dirichlet_row] == 1.0)


def test_default_points_constraint():
    for D in (1, 2, 3):
        pts = default_boundary_points(GeometrySpec("III", 8.0, D))
        a = np.pi - np.array(pts)
        assert abs(np.angle(np.exp(1j * a.sum()))) < 1e-12
    assert sorted(default_boundary_points(GeometrySpec("III", 8.0, 2))) == pytest.approx([np.pi / 2, 3 * np.pi / 2])


def test_nan_aborts():
    spec = GeometrySpec("III", 4.0, 0)
    grid = build_grid(spec, 16, 16)
    vals = np.ones(grid.shape, complex)
    vals[3, 3] = np.nan
    with pytest.raises(SolverError):
        relax(OrderParameter(vals, grid), AnchoringParams(0.2, 0.5))


def test_apriori_trivial():
    spec = GeometrySpec("III", 4.0, 0)
    grid = build_grid(spec, 16, 16)
    rep = solve(spec, grid, AnchoringParams(0.2, 0.5))
    chk = check_apriori(rep)
    assert chk.passed and chk.max_abs_u == 1.0 and chk.c0[0] == pytest.approx(0.0, abs=1e-12)


def test_truncation_degree_zero():
    res = truncation_sweep(GeometrySpec("III", 4.0, 0), AnchoringParams(0.2, 0.5), [4, 8, 16], n_r=16, n_theta=16)
    assert res.energies == [0.0, 0.0, 0.0]
    assert res.monotone
    with pytest.raises(ValueError):
        truncation_sweep(GeometrySpec("III", 4.0, 0), AnchoringParams(0.2, 0.5), [8, 4])
