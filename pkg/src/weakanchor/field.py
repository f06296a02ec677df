"""Order parameter container, director / Q-tensor maps and analytic initializers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import AnchoringParams
from .geometry import GeometrySpec, PolarGrid, anchor_values, harmonic_fill
from .vortex import DefectSet, expected_total_degree

UNDEFINED_TOL = 1e-12


@dataclass
class OrderParameter:
    values: np.ndarray
    grid: PolarGrid
    params: AnchoringParams | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def spec(self) -> GeometrySpec:
        return self.grid.spec

    @property
    def trace(self) -> np.ndarray:
        """Values on the anchoring circle."""
        return self.values[self.grid.gamma_row]

    def copy(self) -> "OrderParameter":
        return OrderParameter(self.values.copy(), self.grid, self.params)

    def table(self) -> dict[str, np.ndarray]:
        """Flat per-node columns for CSV export."""
        d = u_to_director(self.values)
        return {
            "r": self.grid.R.ravel(), "theta": self.grid.T.ravel(),
            "x": self.grid.x.ravel(), "y": self.grid.y.ravel(),
            "re_u": self.values.real.ravel(), "im_u": self.values.imag.ravel(),
            "abs_u": np.abs(self.values).ravel(),
            "n1": d.n[..., 0].ravel(), "n2": d.n[..., 1].ravel(), "s": d.s.ravel(),
        }


@dataclass
class DirectorField:
    n: np.ndarray          # (..., 2), unit where defined
    s: np.ndarray          # |u|
    defined: np.ndarray
    s_plus: float = 1.0


def _as_array(u) -> np.ndarray:
    return np.asarray(u.values if hasattr(u, "values") else u, dtype=complex)


def u_to_director(u, s_plus: float = 1.0) -> DirectorField:
    """Half-angle director, reported with n1 >= 0 (and n2 >= 0 when n1 = 0)."""
    u = _as_array(u)
    s = np.abs(u)
    half = 0.5 * np.angle(u)      # angle() lies in (-pi, pi], so half in (-pi/2, pi/2]
    n = np.stack([np.cos(half), np.sin(half)], axis=-1)
    defined = s >= UNDEFINED_TOL
    n[~defined] = 0.0
    return DirectorField(n=n, s=s, defined=defined, s_plus=s_plus)


def director_to_u(d: DirectorField) -> np.ndarray:
    n1, n2 = d.n[..., 0], d.n[..., 1]
    return d.s * (2 * n1 ** 2 - 1 + 2j * n1 * n2)


def director_to_qtensor(d: DirectorField) -> np.ndarray:
    """Uniaxial 3x3 tensor s_plus * s * (n n^T - I/3) with n in the plane.

    At |u| = 1 this is the block form with Q11 = (s_plus/2)(u1 + 1/3) and
    Q12 = (s_plus/2) u2.  Nodes without a director give the zero (isotropic)
    tensor.
    """
    n3 = np.concatenate([d.n, np.zeros(d.n.shape[:-1] + (1,))], axis=-1)
    nn = n3[..., :, None] * n3[..., None, :]
    amp = (d.s_plus * np.where(d.defined, d.s, 0.0))[..., None, None]
    return amp * (nn - np.eye(3) / 3.0)


def u_to_qtensor(u, s_plus: float = 1.0) -> np.ndarray:
    return director_to_qtensor(u_to_director(u, s_plus))


def qtensor_to_u(Q: np.ndarray, s_plus: float = 1.0) -> np.ndarray:
    """Inverse of the block form for uniaxial unit-order tensors."""
    return (2.0 / s_plus) * Q[..., 0, 0] - 1.0 / 3.0 + 1j * (2.0 / s_plus) * Q[..., 0, 1]


def majumdar_qtensor(u, s_plus: float = 1.0) -> np.ndarray:
    """Planar 2x2 traceless tensor (s_plus/2) [[u1, u2], [u2, -u1]]."""
    u = _as_array(u)
    Q = np.empty(u.shape + (2, 2))
    Q[..., 0, 0] = 0.5 * s_plus * u.real
    Q[..., 1, 1] = -Q[..., 0, 0]
    Q[..., 0, 1] = Q[..., 1, 0] = 0.5 * s_plus * u.imag
    return Q


def majumdar_to_u(Q: np.ndarray, s_plus: float = 1.0) -> np.ndarray:
    return (2.0 / s_plus) * (Q[..., 0, 0] + 1j * Q[..., 0, 1])


# canonical harmonic maps ------------------------------------------------------

def _raw_product(defects: DefectSet, spec: GeometrySpec, w: np.ndarray) -> np.ndarray:
    """Unnormalized product in scaled coordinates (anchoring circle = unit circle)."""
    rg = spec.gamma_radius
    out = np.ones_like(w, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        for d in defects.interior:
            p = d.z / rg
            if spec.problem == "I":
                f = (w - p) * (1 - np.conj(p) * w)
                out = out * _unit_power(f, d.degree)
            else:
                f = w ** 2 / ((w - p) * (w - p / abs(p) ** 2))
                out = out * _unit_power(f, -d.degree)
        for b in defects.boundary:
            q = np.exp(1j * b.theta)
            if spec.problem == "I":
                f = (w - q) * (1 - np.conj(q) * w)
                out = out * _unit_power(f, b.degree)
            else:
                f = w / (w - q)
                out = out * _unit_power(f, -2 * b.degree)
    return out


def _unit_power(f, k):
    f = f / np.abs(f)
    return f ** k if k >= 0 else np.conj(f) ** (-k)


def _reference_angle(defects: DefectSet) -> float:
    """A Gamma angle far from every boundary defect."""
    angles = np.sort([b.theta % (2 * np.pi) for b in defects.boundary])
    if len(angles) == 0:
        return 0.1234
    gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))
    k = int(np.argmax(gaps))
    return float(angles[k] + 0.5 * gaps[k])


def _outer_correction(spec: GeometrySpec, ring_phase: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Harmonic function on the annulus, 0 on the anchoring circle and
    ``ring_phase`` (uniform samples) on r = r_outer, via a Fourier series."""
    a, R = spec.r_inner, spec.r_outer
    m = len(ring_phase)
    c = np.fft.rfft(ring_phase) / m
    r = np.maximum(np.abs(z), a)
    th = np.angle(z)
    out = c[0].real * np.log(r / a) / np.log(R / a)
    for k in range(1, len(c)):
        scale = 1.0 if (m % 2 == 0 and k == m // 2) else 2.0
        rad = np.exp(k * np.log(r / R)) * (1 - (a / r) ** (2 * k)) / (1 - (a / R) ** (2 * k))
        out = out + scale * rad * (c[k] * np.exp(1j * k * th)).real
    return out


def canonical_values(defects: DefectSet, spec: GeometrySpec, z, n_fourier: int = 256) -> np.ndarray:
    """Canonical unimodular map with the given defects, evaluated at points ``z``.

    It equals g on the anchoring circle (away from boundary defects).  For the
    exterior problems a harmonic phase correction makes it exactly 1 on the
    outer circle.  Interior defects carry their own winding, boundary defects
    carry twice theirs.
    """
    total = sum(d.degree for d in defects.interior) + sum(b.degree for b in defects.boundary)
    if total != expected_total_degree(spec):
        raise ValueError(f"degrees sum to {total}, need {expected_total_degree(spec)}")
    z = np.asarray(z, dtype=complex)
    rg = spec.gamma_radius
    t0 = _reference_angle(defects)
    ref = _raw_product(defects, spec, np.array([np.exp(1j * t0)]))[0]
    const = np.exp(1j * (spec.degree * t0 + spec.offset)) / ref
    u = const * _raw_product(defects, spec, z / rg)
    if spec.problem != "I":
        th = 2 * np.pi * np.arange(n_fourier) / n_fourier
        ring = const * _raw_product(defects, spec, spec.r_outer / rg * np.exp(1j * th))
        phase = -np.unwrap(np.angle(ring))
        u = u * np.exp(1j * _outer_correction(spec, phase, z))
    return np.where(np.isfinite(u), u, 0.0)


def canonical_map(defects: DefectSet, spec: GeometrySpec, grid: PolarGrid,
                  params: AnchoringParams | None = None) -> OrderParameter:
    u = canonical_values(defects, spec, grid.z)
    if grid.has_origin:
        u[0] = u[0, 0]
    if grid.dirichlet_row is not None:
        u[grid.dirichlet_row] = 1.0
    return OrderParameter(u, grid, params)


def smooth_cores(u: OrderParameter, defects: DefectSet, eps: float, boundary_scale: float | None = None) -> OrderParameter:
    """Multiply by tanh core profiles: width eps at interior defects and
    ``boundary_scale`` (default eps) at boundary defects."""
    z = u.grid.z
    prof = np.ones(u.grid.shape)
    for d in defects.interior:
        prof *= np.tanh(np.abs(z - d.z) / (np.sqrt(2) * eps))
    bs = eps if boundary_scale is None else boundary_scale
    for b in defects.boundary:
        q = u.spec.gamma_radius * np.exp(1j * b.theta)
        prof *= np.tanh(np.abs(z - q) / bs)
    vals = u.values * prof
    if u.grid.dirichlet_row is not None:
        vals[u.grid.dirichlet_row] = 1.0
    return OrderParameter(vals, u.grid, u.params)


# upper-bound construction -----------------------------------------------------

def _lifted_phase(spec: GeometrySpec, theta, points) -> np.ndarray:
    """D*theta + offset with a 2*pi*sign(D) drop at each chosen point, so it
    returns to its start after one turn.  ``theta`` measured in [t_start, t_start+2pi)."""
    theta = np.asarray(theta, dtype=float)
    sgn = np.sign(spec.degree)
    passed = np.zeros_like(theta)
    for q in points:
        passed += theta > q
    return spec.degree * theta + spec.offset - 2 * np.pi * sgn * passed


def upper_bound_initializer(spec: GeometrySpec, grid: PolarGrid, params: AnchoringParams,
                            boundary_points) -> OrderParameter:
    """Unimodular test field with |D| boundary vortices at the given Gamma angles.

    Inside a half-disk around each point the phase interpolates linearly in
    angle between the boundary phases on either side; a radial cutoff between
    eps^alpha and 2 eps^alpha freezes it to a constant at the core.  The
    remaining phase is the discrete harmonic extension of these data.
    """
    D = spec.degree
    g = anchor_values(spec, grid)
    if D == 0:
        u = np.broadcast_to(g[0], grid.shape).copy()
        if grid.dirichlet_row is not None:
            u[grid.dirichlet_row] = 1.0
        return OrderParameter(u, grid, params)
    pts = sorted(float(p) % (2 * np.pi) for p in boundary_points)
    if len(pts) != abs(D):
        raise ValueError(f"need {abs(D)} boundary points, got {len(pts)}")
    rg = spec.gamma_radius
    core = params.eps ** params.alpha
    start = pts[0] - np.pi        # measure angles on a window that starts away from pts[0]
    rel = [(p - start) % (2 * np.pi) + start for p in pts]
    gaps = np.diff(np.concatenate([pts, [pts[0] + 2 * np.pi]]))
    if len(pts) > 1 and rg * gaps.min() < 4 * core:
        raise ValueError("boundary points closer than 4 eps^alpha along Gamma")

    def lift(theta):
        th = (np.asarray(theta) - start) % (2 * np.pi) + start
        return _lifted_phase(spec, th, rel)

    gap = gaps.min() if len(pts) > 1 else 2 * np.pi
    if spec.problem == "I":
        radius = rg * np.sin(min(gap, np.pi) / 2)
    else:
        radius = 2 * rg * np.sin(min(gap, 2 * np.pi) / 4)
        radius = min(radius, spec.r_outer - spec.r_inner)
    radius = 0.9 * radius
    lo, hi = core, 2 * core
    if hi > 0.9 * radius:
        lo, hi = radius / 3, 2 * radius / 3

    z = grid.z
    phase = np.zeros(grid.shape)
    known = np.zeros(grid.shape, dtype=bool)
    gamma = grid.gamma_row
    known[gamma] = True
    phase[gamma] = lift(grid.theta)
    for p in rel:
        q = rg * np.exp(1j * p)
        rho = np.abs(z - q)
        inside = rho < radius
        if grid.has_origin:
            inside[0] = inside[0].all()
        delta = 2 * np.arcsin(np.minimum(rho / (2 * rg), 1.0))
        h1 = lift(p - delta)
        h2 = h1 + 2 * D * delta - 2 * np.pi * np.sign(D)
        ang = np.angle(z - q)
        a1 = p - np.pi / 2 - delta / 2
        # branch cut placed in the middle of the directions pointing out of Omega
        if spec.problem == "I":
            span, cut = np.maximum(np.pi - delta, 1e-12), 0.5 * (np.pi + delta)
            sigma = (np.mod(a1 - ang + cut, 2 * np.pi) - cut) / span
        else:
            span, cut = np.pi + delta, 0.5 * (np.pi - delta)
            sigma = (np.mod(ang - a1 + cut, 2 * np.pi) - cut) / span
        sigma = np.clip(sigma, 0.0, 1.0)
        phi = h1 + sigma * (h2 - h1)
        chi = np.clip((rho - lo) / (hi - lo), 0.0, 1.0)
        gq = lift(p - 1e-12)
        local = chi * phi + (1 - chi) * gq
        phase[inside] = local[inside]
        known |= inside
    if grid.dirichlet_row is not None:
        row = grid.dirichlet_row
        m = np.round(np.mean(phase[gamma]) / (2 * np.pi))
        phase[row] = 2 * np.pi * m
        known[row] = True
    phase = harmonic_fill(grid, phase, known)
    u = np.exp(1j * phase)
    if grid.dirichlet_row is not None:
        u[grid.dirichlet_row] = 1.0
    return OrderParameter(u, grid, params)
