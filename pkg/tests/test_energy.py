import numpy as np
import pytest

from weakanchor.energy import (AnchoringParams, el_residual, energy, gradient, local_energy, pairing)
from weakanchor.field import OrderParameter, canonical_map
from weakanchor.geometry import GeometrySpec, anchor_values, build_grid
from weakanchor.vortex import DefectSet, InteriorDefect


def _random_field(grid, rng):
    u = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    if grid.has_origin:
        u[0] = u[0, 0]
    if grid.dirichlet_row is not None:
        u[grid.dirichlet_row] = 1.0
    return u


def test_lambda_tracks_parameters():
    p = AnchoringParams(0.05, 0.8, 2.0)
    assert p.lam == pytest.approx(2.0 * 0.05 ** -0.8)
    with pytest.raises(ValueError):
        AnchoringParams(-0.1, 0.5)


def test_zero_energy_for_constant():
    grid = build_grid(GeometrySpec("III", 8.0, 0), 32, 64)
    b = energy(OrderParameter(np.ones(grid.shape, complex), grid), AnchoringParams(0.1, 0.5))
    assert b.total == 0.0


def test_zero_field_on_annulus():
    grid = build_grid(GeometrySpec("II", 2.0, 2), 32, 64)
    p = AnchoringParams(0.1, 0.8)
    u = np.zeros(grid.shape, complex)
    b = energy(u, p, grid)
    # the ring next to the pinned circle carries Dirichlet energy; the bulk terms are exact
    assert b.potential == pytest.approx(3 * np.pi / (4 * p.eps ** 2), rel=1e-12)
    assert b.anchoring == pytest.approx(p.lam / 2 * 2 * np.pi, rel=1e-12)
    assert b.total == pytest.approx(b.dirichlet + b.potential + b.anchoring, rel=0, abs=0)
    assert min(b.dirichlet, b.potential, b.anchoring) >= 0


def test_residual_of_exact_states():
    grid = build_grid(GeometrySpec("III", 8.0, 0), 24, 32)
    p = AnchoringParams(0.1, 0.5)
    assert el_residual(np.ones(grid.shape, complex), p, grid).sup_norm() == 0.0
    r = el_residual(np.zeros(grid.shape, complex), p, grid)
    inner = r.interior[1:-1]
    assert np.abs(inner[1:]).max() == 0.0


@pytest.mark.parametrize("problem", ["I", "II", "III"])
def test_gradient_matches_finite_differences(problem, rng):
    spec = GeometrySpec(problem, 3.0, 2)
    grid = build_grid(spec, 16, 32)
    p = AnchoringParams(0.2, 0.8)
    u = _random_field(grid, rng)
    res = el_residual(u, p, grid)
    h = 1e-5
    for _ in range(5):
        du = _random_field(grid, rng)
        if grid.dirichlet_row is not None:
            du[grid.dirichlet_row] = 0.0
        fd = (energy(u + h * du, p, grid).total - energy(u - h * du, p, grid).total) / (2 * h)
        assert pairing(res, du, grid) == pytest.approx(fd, rel=1e-6)


def test_local_energy_additive(droplet_grid, rng):
    p = AnchoringParams(0.1, 0.8)
    u = _random_field(droplet_grid, rng)
    full = energy(u, p, droplet_grid).total
    assert local_energy(u, p, lambda x, y: np.ones_like(x, bool), droplet_grid).total == pytest.approx(full, rel=1e-12)
    left = local_energy(u, p, lambda x, y: x < 0.3, droplet_grid).total
    right = local_energy(u, p, lambda x, y: x >= 0.3, droplet_grid).total
    assert left + right == pytest.approx(full, rel=1e-12)
    with pytest.raises(ValueError):
        local_energy(u, p, lambda x, y: x > 100, droplet_grid)


@pytest.mark.parametrize("problem,shift", [("I", 8), ("I", 5), ("III", 32)])
def test_rotation_equivariance(problem, shift, rng):
    # u'(r, theta) = exp(-i phi) u(r, theta + phi / D); on pinned domains phi must be a multiple of 2 pi
    spec = GeometrySpec(problem, 8.0, 2)
    grid = build_grid(spec, 24, 64)
    p = AnchoringParams(0.1, 0.8)
    u = _random_field(grid, rng)
    phi = spec.degree * shift * grid.dtheta
    v = np.exp(-1j * phi) * np.roll(u, -shift, axis=1)
    assert energy(v, p, grid).total == pytest.approx(energy(u, p, grid).total, rel=1e-12)


def test_canonical_dirichlet_log_growth():
    # excising shrinking cores from the pair at (0, +-2^(1/4)), the Dirichlet energy grows like 2 pi ln(1/rho)
    spec = GeometrySpec("III", 8.0, 2)
    grid = build_grid(spec, 160, 512, radial_stretch=8.0)
    t = 2 ** 0.25
    ds = DefectSet([InteriorDefect(0, t, -1), InteriorDefect(0, -t, -1)])
    u = canonical_map(ds, spec, grid)
    p = AnchoringParams(0.05, 0.8)
    vals = []
    for rho in (0.2, 0.1):
        region = lambda x, y, r=rho: (np.hypot(x, y - t) > r) & (np.hypot(x, y + t) > r)
        vals.append(local_energy(u, p, region, grid).dirichlet)
    assert (vals[1] - vals[0]) / np.log(2) == pytest.approx(2 * np.pi, rel=0.05)
