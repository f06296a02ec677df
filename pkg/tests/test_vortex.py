import numpy as np
import pytest

from weakanchor.energy import AnchoringParams
from weakanchor.field import canonical_map, smooth_cores
from weakanchor.geometry import GeometrySpec, anchor_values, build_grid
from weakanchor.vortex import (BoundaryDefect, DefectSet, InteriorDefect, bad_set, boundary_degree,
                               detect, loop_winding, plaquette_winding, plaquette_windings)


def test_plaquette_examples():
    cell = np.array([[-1 - 1j, -1 + 1j], [1 - 1j, 1 + 1j]])   # corners around 0 in (i, j) layout
    # (i,j),(i+1,j),(i+1,j+1),(i,j+1) = -1-1j, 1-1j, 1+1j, -1+1j : counterclockwise
    assert plaquette_winding(np.ones((2, 2), complex), (0, 0)) == 0
    assert plaquette_winding(cell / np.abs(cell), (0, 0)) == 1
    with pytest.raises(ValueError):
        plaquette_winding(np.zeros((2, 2), complex), (0, 0))


def test_loop_winding_dense_conjugate_square():
    th = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
    z = np.exp(1j * th)
    assert loop_winding((np.conj(z) / np.abs(z)) ** 2) == -2


def _synthetic(rng, spec, grid, n_int, n_bnd, min_sep):
    """Random canonical configuration with well separated defects."""
    while True:
        pts = []
        for _ in range(n_int):
            pts.append(rng.uniform(1.4, 3.5) * np.exp(1j * rng.uniform(0, 2 * np.pi)))
        bnd = list(rng.uniform(0, 2 * np.pi, n_bnd))
        allz = pts + [np.exp(1j * b) for b in bnd]
        if len(allz) < 2 or min(abs(a - b) for k, a in enumerate(allz) for b in allz[k + 1:]) > min_sep:
            break
    D = spec.degree
    degs = [-1] * n_int
    bdegs = [-1] * n_bnd
    assert sum(degs) + sum(bdegs) == -D
    return DefectSet([InteriorDefect(p.real, p.imag, d) for p, d in zip(pts, degs)],
                     [BoundaryDefect(b, d) for b, d in zip(bnd, bdegs)])


def test_winding_additivity(rng):
    spec = GeometrySpec("III", 8.0, 3)
    grid = build_grid(spec, 64, 192)
    for _ in range(5):
        ds = _synthetic(rng, spec, grid, 3, 0, 1.0)
        u = canonical_map(ds, spec, grid).values
        w, ok = plaquette_windings(u)
        assert ok.all()
        i0, i1, j0, j1 = 3, 40, 10, 120
        loop = [u[i, j0] for i in range(i0, i1)] + [u[i1, j] for j in range(j0, j1)] \
            + [u[i, j1] for i in range(i1, i0, -1)] + [u[i0, j] for j in range(j1, j0, -1)]
        assert loop_winding(loop) == w[i0:i1, j0:j1].sum()


def test_boundary_degree_trivial_and_vortex():
    spec = GeometrySpec("III", 8.0, 1)
    grid = build_grid(spec, 64, 256)
    g = anchor_values(spec, grid)
    u = np.tile(g, (grid.shape[0], 1))
    u[grid.dirichlet_row] = 1.0
    assert boundary_degree(u, g, (2.8, 3.4), grid) == 0
    ds = DefectSet(boundary=[BoundaryDefect(np.pi, -1)])
    v = smooth_cores(canonical_map(ds, spec, grid), ds, 0.05)
    arc = (np.pi - 0.15, np.pi + 0.15)
    assert boundary_degree(v, g, arc, grid, extension="phase") == -1
    assert boundary_degree(v, g, arc, grid, extension="linear") == -1
    res = boundary_degree(v, g, arc, grid, detail=True)
    assert abs(res.half_circle_increment - 2 * np.pi * res.degree) < 4 * res.radius


def test_bad_set_components_wrap_the_seam():
    spec = GeometrySpec("III", 8.0, 0)
    grid = build_grid(spec, 16, 32)
    u = np.ones(grid.shape, complex)
    u[5, [0, 1, 31]] = 0.0        # one blob straddling theta = 0
    u[10, 16] = 0.0
    bs = bad_set(u, np.ones(32), grid)
    assert len(bs.components) == 2
    assert sorted(len(c.nodes) for c in bs.components) == [1, 3]
    assert not any(c.touches_gamma for c in bs.components)


def test_detect_trivial():
    spec = GeometrySpec("III", 8.0, 0)
    grid = build_grid(spec, 16, 32)
    ds = detect(np.ones(grid.shape, complex), np.ones(32), AnchoringParams(0.1, 0.8), grid)
    assert ds.interior == [] and ds.boundary == [] and ds.accounting_ok
    assert ds.classify(0) == "none"


def test_detect_canonical_pair():
    spec = GeometrySpec("III", 8.0, 2)
    grid = build_grid(spec, 96, 192)
    t = 2 ** 0.25
    truth = DefectSet([InteriorDefect(0, t, -1), InteriorDefect(0, -t, -1)])
    u = smooth_cores(canonical_map(truth, spec, grid), truth, 0.05)
    ds = detect(u, params=AnchoringParams(0.05, 0.8))
    assert [d.degree for d in ds.interior] == [-1, -1]
    assert ds.boundary == [] and ds.accounting_ok
    assert ds.classify(2) == "interior"
    cell = max(np.diff(grid.radii).max(), t * grid.dtheta)
    for d in ds.interior:
        target = 1j * t if d.y > 0 else -1j * t
        assert abs(d.z - target) <= cell


def test_detect_json_shape():
    ds = DefectSet([InteriorDefect(0.0, 1.2, -1)], [BoundaryDefect(1.0, -1)], expected_total=-2)
    d = ds.to_dict()
    assert d == {"interior": [{"x": 0.0, "y": 1.2, "d": -1}], "boundary": [{"theta": 1.0, "D": -1}],
                 "accounting_ok": True}
