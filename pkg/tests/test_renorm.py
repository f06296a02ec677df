import numpy as np
import pytest

from weakanchor.renorm import (GreensExterior, minimize_w_annulus, w_annulus, angle_residual, annulus_conjugates, c0_constant,
                               capacity, expansion_consistency, expansion_fit, greens_eval,
                               greens_laplacian_residual, greens_mean_flux, minimize_w,
                               w_boundary, w_interior, w_interior_grad, w_specialized)


def test_greens_unit_pole_identity():
    p = np.exp(0.4j)
    x = np.array([2.0 + 1.0j, -1.5 + 0.3j])
    G, _ = greens_eval(p, x)
    assert np.allclose(G, -np.log(np.abs(x - p) ** 2 / np.abs(x) ** 2))
    assert GreensExterior(p).p_star == pytest.approx(p)


def test_greens_direct_value():
    G, _ = greens_eval(-2.0, 2.0)
    assert G == pytest.approx(-np.log(2.5))


def test_greens_pole_is_an_error():
    with pytest.raises(ValueError):
        greens_eval(2.0, 2.0)
    with pytest.raises(ValueError):
        greens_eval(2.0, 0.5)


def test_greens_gradient_fd():
    G = GreensExterior(1.7 * np.exp(2.1j))
    x = 2.3 - 0.4j
    h = 1e-6
    fd = (G.value(x + h) - G.value(x - h)) / (2 * h) + 1j * (G.value(x + 1j * h) - G.value(x - 1j * h)) / (2 * h)
    assert abs(fd - G.grad(x)) < 1e-8


def test_greens_harmonic_second_order():
    p = 2.0 * np.exp(2.0j)
    (h1, r1), (h2, r2) = greens_laplacian_residual(p, 64), greens_laplacian_residual(p, 127)
    assert np.log(r1 / r2) / np.log(h1 / h2) > 1.8


@pytest.mark.parametrize("t", [1.5, 2.0, 5.0])
def test_greens_flux_and_decay(t):
    p = t * np.exp(0.7j)
    assert greens_mean_flux(p) == pytest.approx(1.0, abs=1e-3)
    far = 1e3 * np.exp(2j * np.pi * np.arange(32) / 32)
    assert np.abs(GreensExterior(p).value(far)).max() < 1e-2 * t


def test_w_interior_examples():
    assert w_interior([-np.sqrt(2)]) == pytest.approx(np.pi * np.log(4))
    t = 2 ** 0.25
    assert w_specialized(t, t) == pytest.approx(np.log(16))
    pts = np.array([0.3 + 1.4j, -1.1 - 1.6j, 2.0 + 0.2j])
    assert w_interior(pts * np.exp(0.77j)) == pytest.approx(w_interior(pts), rel=1e-13)


def test_w_interior_guards():
    val, reason = w_interior([0.5 + 0j], return_reason=True)
    assert val == np.inf and reason
    assert w_interior([1.5j, 1.5j]) == np.inf


def test_w_interior_gradient_fd():
    p = np.array([0.2 + 1.3j, -0.4 - 1.7j])
    g = w_interior_grad(p)
    h = 1e-6
    for k in range(2):
        for d in (1, 1j):
            q1, q2 = p.copy(), p.copy()
            q1[k] += h * d
            q2[k] -= h * d
            fd = (w_interior(q1) - w_interior(q2)) / (2 * h)
            comp = g[k].real if d == 1 else g[k].imag
            assert fd == pytest.approx(comp, rel=1e-6, abs=1e-8)


def test_blowup_guards_monotone():
    base = -1.3j
    vals = [w_interior([s * 1j, base]) for s in (1.05, 1.02, 1.01, 1.005)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    vals = [w_interior([s * 1j, base]) for s in (50, 100, 200, 400)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    vals = [w_interior([2j + d, 2j - d]) for d in (0.1, 0.05, 0.02, 0.01)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_w_boundary_examples():
    c0 = c0_constant()
    assert w_boundary([np.pi / 2, -np.pi / 2]) == pytest.approx(-4 * np.pi * np.log(2) + 2 * c0.value, abs=1e-9)
    assert w_boundary([0.3], 1) == pytest.approx(c0.value / 2, abs=1e-12)
    assert w_boundary([0.1, 0.2]) > w_boundary([0.1, 0.1 + np.pi])
    assert w_boundary([1.0, 1.0]) == np.inf
    assert w_boundary([0.2, 1.9]) == pytest.approx(w_boundary([1.2, 2.9]))


def test_c0_vanishes():
    c0 = c0_constant()
    assert abs(c0.value) < 1e-8
    assert c0.deviation < 1e-3 and c0.ok
    assert c0.refinement_change < 1e-4


def test_minimizers():
    rep = minimize_w(2, "interior", variant="specialized")
    assert rep.value == pytest.approx(np.log(16), abs=1e-6)
    assert sorted(z.imag for z in rep.positions) == pytest.approx([-2 ** 0.25, 2 ** 0.25], abs=1e-3)
    assert rep.grad_norm <= 1e-8
    rep = minimize_w(2, "interior")
    assert sorted(abs(z) for z in rep.positions) == pytest.approx([(7 / 3) ** 0.25] * 2, abs=1e-3)
    assert rep.grad_norm <= 1e-8
    rep = minimize_w(2, "boundary")
    assert sorted(z.imag for z in rep.positions) == pytest.approx([-1, 1], abs=1e-3)
    rep = minimize_w(1, "boundary")
    assert rep.positions[0] == pytest.approx(-1, abs=1e-3)
    rep = minimize_w(1, "interior")
    assert abs(rep.positions[0]) == pytest.approx(np.sqrt(2), abs=1e-3)
    assert rep.positions[0].real < 0
    assert rep.reference and rep.notes


def test_constraint_exact():
    for D in (1, 2, 3):
        rep = minimize_w(D, "interior")
        assert abs(rep.angle_residual) < 1e-12
        assert abs(angle_residual(rep.positions)) < 1e-12


def test_capacity_at_e():
    assert capacity(np.e) == pytest.approx(2 * np.pi, rel=1e-2)


def test_annulus_conjugate_invariants():
    c = annulus_conjugates(3.0, 1.8, n_r=64, n_theta=128)
    n = c.grid.n_theta
    mirror = c.phi[:, (-np.arange(n)) % n]
    assert np.nanmax(np.abs(c.phi - mirror)) < 1e-9
    inner, outer = c.normal_derivative()
    away = np.abs(np.angle(np.exp(1j * c.grid.theta)) ) < np.pi / 2
    h = c.grid.radii[1] - c.grid.radii[0]
    assert np.abs(inner[away] - 1).max() < 10 * h
    assert np.abs(outer).max() < 10 * h
    assert c.capacity == pytest.approx(c.capacity_exact, rel=1e-2)
    w = c.grid.boundary_weights
    assert abs(np.sum(w * c.phi[0])) < 1e-8


def test_expansion_consistency_pair():
    t = 2 ** 0.25
    res = expansion_consistency([1j * t, -1j * t])
    assert res["extrapolated"] == pytest.approx(res["w_interior"], rel=1e-2)
    assert abs(res["log_slope"]) < 0.05


def test_expansion_fit_synthetic():
    recs = []
    for eps, I, J in ((0.1, 2, 0), (0.05, 0, 2), (0.025, 1, 1), (0.0125, 2, 0)):
        lam = eps ** -0.5
        W = 0.7 * I - 0.2 * J
        E = I * (np.pi * abs(np.log(eps)) + 3) + J * (2 * np.pi * np.log(lam) + 5) + W
        recs.append({"eps": eps, "lam": lam, "I": I, "J": J, "W": W, "energy": E})
    fit = expansion_fit(recs)
    assert fit.Q_omega == pytest.approx(3) and fit.Q_gamma == pytest.approx(5)
    only = [dict(r, I=2, J=0) for r in recs]
    fit = expansion_fit(only)
    assert fit.Q_gamma is None and fit.rank_deficient and fit.notes
    with pytest.raises(ValueError):
        expansion_fit(only, require_both=True)


def test_annulus_energy_tends_to_exterior():
    p = [-np.sqrt(2)]
    gaps = [abs(w_annulus(p, R, n_r=128, n_theta=256) - w_interior(p)) for R in (4.0, 8.0, 16.0)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.02 * w_interior(p)
    rep = minimize_w_annulus(2, 8.0)
    assert abs(rep.positions[0]) == pytest.approx((7 / 3) ** 0.25, abs=0.02)
    assert abs(rep.angle_residual) < 1e-12
