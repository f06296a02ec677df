"""Discrete weak-anchoring energy, its exact gradient and localized pieces.

The Dirichlet term is a sum over grid edges, E_D = 1/2 sum c_e |u_a - u_b|^2,
with conservative polar coefficients, so the derivative of the discrete energy
is a five-point flux-form Laplacian and the Robin condition on Gamma appears as
the natural boundary flux.  The potential uses nodal area weights and the
anchoring penalty uses Gamma arclength weights.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .geometry import PolarGrid, anchor_values


@dataclass(frozen=True)
class AnchoringParams:
    eps: float
    alpha: float
    K: float = 1.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.K > 0:
            raise ValueError("K must be positive")

    @property
    def lam(self) -> float:
        return self.K * self.eps ** (-self.alpha)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "alpha": self.alpha, "K": self.K, "lambda": self.lam}


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    potential: float
    anchoring: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.potential + self.anchoring

    def to_dict(self) -> dict:
        return {**asdict(self), "total": self.total}


def _values(u):
    return u.values if hasattr(u, "values") else np.asarray(u)


def _grid_of(u, grid):
    if grid is None:
        grid = u.grid
    return grid


def node_densities(values: np.ndarray, grid: PolarGrid, params: AnchoringParams, g=None):
    """Per-node shares of the three energy terms.

    Each edge contributes half its energy to each endpoint, so the shares add
    up to the energy of any union of nodes without double counting.
    """
    if g is None:
        g = anchor_values(grid.spec, grid)
    u = values
    dr = np.abs(np.diff(u, axis=0)) ** 2 * grid.c_radial[:, None]
    dt = np.abs(np.roll(u, -1, axis=1) - u) ** 2 * grid.c_angular[:, None]
    dirichlet = np.zeros(grid.shape)
    dirichlet[:-1] += 0.25 * dr
    dirichlet[1:] += 0.25 * dr
    dirichlet += 0.25 * dt + 0.25 * np.roll(dt, 1, axis=1)
    potential = grid.area_weights * (np.abs(u) ** 2 - 1) ** 2 / (4 * params.eps ** 2)
    anchoring = np.zeros(grid.shape)
    row = grid.gamma_row
    anchoring[row] = 0.5 * params.lam * grid.boundary_weights * np.abs(u[row] - g) ** 2
    return dirichlet, potential, anchoring


def energy(u, params: AnchoringParams, grid: PolarGrid | None = None, g=None) -> EnergyBreakdown:
    """Energy of ``u`` (an OrderParameter or a raw complex array on ``grid``).

    Values are taken as given, including any pinned ring.
    """
    grid = _grid_of(u, grid)
    terms = node_densities(_values(u), grid, params, g)
    return EnergyBreakdown(*(float(np.sum(t)) for t in terms))


def local_energy(u, params: AnchoringParams, region, grid: PolarGrid | None = None, g=None) -> EnergyBreakdown:
    """Energy carried by the nodes selected by ``region``.

    ``region`` is a boolean node mask or a callable ``(x, y) -> mask``.
    """
    grid = _grid_of(u, grid)
    mask = region(grid.x, grid.y) if callable(region) else region
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), grid.shape)
    if not mask.any():
        raise ValueError("region selects no nodes")
    terms = node_densities(_values(u), grid, params, g)
    return EnergyBreakdown(*(float(np.sum(t[mask])) for t in terms))


def gradient(values: np.ndarray, grid: PolarGrid, params: AnchoringParams, g=None) -> np.ndarray:
    """Complex gradient dE/dRe(u) + i dE/dIm(u) at every node.

    For problem I the origin copies each receive their own share; the origin
    as one unknown has the sum of those shares as its gradient.
    """
    if g is None:
        g = anchor_values(grid.spec, grid)
    u = values
    out = np.zeros_like(u, dtype=complex)
    flux_r = grid.c_radial[:, None] * np.diff(u, axis=0)
    out[:-1] -= flux_r
    out[1:] += flux_r
    flux_t = grid.c_angular[:, None] * (np.roll(u, -1, axis=1) - u)
    out -= flux_t
    out += np.roll(flux_t, 1, axis=1)
    out += grid.area_weights * (np.abs(u) ** 2 - 1) * u / params.eps ** 2
    row = grid.gamma_row
    out[row] += params.lam * grid.boundary_weights * (u[row] - g)
    return out


def hessian(values: np.ndarray, grid: PolarGrid, params: AnchoringParams):
    """Sparse real Hessian in the ordering [Re(u) nodes, Im(u) nodes]."""
    from scipy import sparse
    from .geometry import stiffness_matrix

    n = values.size
    L = stiffness_matrix(grid)
    w = (grid.area_weights / params.eps ** 2).ravel()
    a, b = values.real.ravel(), values.imag.ravel()
    m = np.abs(values).ravel() ** 2 - 1
    diag_rr = w * (m + 2 * a * a)
    diag_ii = w * (m + 2 * b * b)
    off = w * 2 * a * b
    bnd = np.zeros(grid.shape)
    bnd[grid.gamma_row] = params.lam * grid.boundary_weights
    bnd = bnd.ravel()
    D = sparse.bmat([[sparse.diags(diag_rr + bnd), sparse.diags(off)],
                     [sparse.diags(off), sparse.diags(diag_ii + bnd)]])
    return (sparse.block_diag([L, L]) + D).tocsr()


def energy_and_gradient(values, grid, params, g=None):
    if g is None:
        g = anchor_values(grid.spec, grid)
    return energy(values, params, grid, g).total, gradient(values, grid, params, g)


@dataclass
class Residual:
    """Strong-form residual: ``interior`` is -Lap_h u + (|u|^2-1)u/eps^2 at bulk
    nodes, ``boundary`` is the outward flux plus Robin term per unit length on
    Gamma.  Pinned nodes carry zero."""

    interior: np.ndarray
    boundary: np.ndarray

    def sup_norm(self) -> float:
        return float(max(np.max(np.abs(self.interior)), np.max(np.abs(self.boundary))))


def el_residual(u, params: AnchoringParams, grid: PolarGrid | None = None, g=None) -> Residual:
    grid = _grid_of(u, grid)
    G = gradient(_values(u), grid, params, g)
    interior = G / grid.area_weights
    row = grid.gamma_row
    boundary = G[row] / grid.boundary_weights
    interior[row] = 0.0
    if grid.dirichlet_row is not None:
        interior[grid.dirichlet_row] = 0.0
    if grid.has_origin:
        interior[0] = G[0].sum() / grid.area_weights[0].sum()
    return Residual(interior, boundary)


def pairing(res: Residual, du: np.ndarray, grid: PolarGrid) -> float:
    """<residual, du> with the quadrature weights, i.e. the directional derivative."""
    w = grid.area_weights.copy()
    row = grid.gamma_row
    total = np.sum(w * np.real(np.conj(res.interior) * du))
    total += np.sum(grid.boundary_weights * np.real(np.conj(res.boundary) * du[row]))
    return float(total)
