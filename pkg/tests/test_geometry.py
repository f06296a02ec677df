import numpy as np
import pytest

from weakanchor.geometry import (GeometrySpec, anchor_values, build_grid, harmonic_fill,
                                 nested_radii, stiffness_matrix)
from weakanchor.vortex import loop_winding


def test_exterior_area_uniform():
    grid = build_grid(GeometrySpec("III", 8.0, 2), 64, 128, radial_stretch=1.0)
    assert abs(grid.area_weights.sum() - np.pi * 63) <= 1e-12 * np.pi * 63


def test_exterior_area_stretched():
    grid = build_grid(GeometrySpec("III", 8.0, 2), 64, 128)
    assert abs(grid.area_weights.sum() - np.pi * 63) <= 1e-12 * np.pi * 63
    dr = np.diff(grid.radii)
    assert dr[0] < dr[-1] <= 4 * dr[0] * (1 + 1e-9)


def test_annulus_circumference():
    grid = build_grid(GeometrySpec("II", np.e, 2), 32, 64)
    assert abs(grid.boundary_weights.sum() - 2 * np.pi) <= 1e-12


def test_disk_area_and_rim():
    grid = build_grid(GeometrySpec("I", 1.0, 2), 32, 64)
    assert abs(grid.area_weights.sum() - np.pi) <= 1e-12
    assert grid.gamma_row == grid.n_r
    assert grid.dirichlet_row is None
    assert abs(grid.boundary_weights.sum() - 2 * np.pi) <= 1e-12


def test_gamma_quadrature_cos2():
    for n in (32, 64):
        grid = build_grid(GeometrySpec("II", 3.0, 1), 16, n)
        val = np.sum(grid.boundary_weights * np.cos(grid.theta) ** 2)
        assert abs(val - np.pi) < 10.0 / n ** 2


def test_spec_validation():
    with pytest.raises(ValueError):
        GeometrySpec("IV", 8.0, 2)
    with pytest.raises(ValueError):
        GeometrySpec("III", 1.0, 2)
    with pytest.raises(ValueError):
        build_grid(GeometrySpec("III", 8.0, 2), 32, 63)


def test_anchor_values():
    spec = GeometrySpec("III", 8.0, 2)
    assert np.isclose(anchor_values(spec, theta=np.pi / 2), -1)
    for degree, n in ((1, 64), (2, 128)):
        grid = build_grid(GeometrySpec("III", 8.0, degree), 16, n)
        assert loop_winding(anchor_values(grid.spec, grid)) == degree


def test_stiffness_annihilates_constants(droplet_grid):
    L = stiffness_matrix(droplet_grid)
    assert np.abs(L @ np.ones(L.shape[0])).max() < 1e-10


def test_harmonic_fill_log():
    # ln r is harmonic; the discrete fill of its ring data is close to it
    grid = build_grid(GeometrySpec("II", np.e, 0), 32, 64, radial_stretch=1.0)
    known = np.zeros(grid.shape, dtype=bool)
    known[[0, -1]] = True
    vals = np.log(grid.R)
    out = harmonic_fill(grid, np.where(known, vals, 0.0), known)
    assert np.abs(out - vals).max() < 1e-3


def test_nested_radii_extend():
    a = GeometrySpec("III", 4.0, 2)
    b = GeometrySpec("III", 8.0, 2)
    ra = nested_radii(a, 32, 4.0)
    rb = nested_radii(b, 32, 4.0)
    assert np.allclose(rb[:len(ra)], ra)
    assert rb[-1] == pytest.approx(8.0)
