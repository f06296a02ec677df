"""Circular problem geometries and their structured polar grids.

Three geometries share one grid type:

* ``"I"``   full disk of radius ``r_outer``; the anchoring circle is the rim and
  the grid carries an origin node.
* ``"II"``  annulus ``r_inner < r < r_outer``; anchoring on the inner circle,
  ``u = 1`` held fixed on the outer circle.
* ``"III"`` exterior of the inner circle truncated at ``r_outer``; same
  boundary treatment as ``"II"`` (the outer ring stands in for infinity).

Quadrature uses half-cells at both radial ends, so integrating 1 reproduces
the exact area, and every Gamma node owns ``r_gamma * dtheta`` of arclength.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROBLEMS = ("I", "II", "III")


@dataclass(frozen=True)
class GeometrySpec:
    problem: str = "III"
    r_outer: float = 8.0
    degree: int = 2
    offset: float = 0.0
    r_inner: float | None = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.r_inner is None:
            object.__setattr__(self, "r_inner", 0.0 if self.problem == "I" else 1.0)
        if self.problem == "I" and self.r_inner != 0.0:
            raise ValueError("problem I is a full disk; r_inner must be 0")
        if self.problem != "I" and not self.r_inner > 0.0:
            raise ValueError("problems II/III need a positive anchoring radius")
        if not self.r_outer > self.r_inner:
            raise ValueError("r_outer must exceed r_inner")
        if int(self.degree) != self.degree:
            raise ValueError("degree must be an integer")

    @property
    def gamma_radius(self) -> float:
        return self.r_outer if self.problem == "I" else self.r_inner

    @property
    def exterior(self) -> bool:
        """True when the domain lies outside the anchoring circle."""
        return self.problem != "I"

    def to_dict(self) -> dict:
        return {"problem": self.problem, "r_outer": self.r_outer, "r_inner": self.r_inner,
                "degree": self.degree, "offset": self.offset}


@dataclass(frozen=True, eq=False)
class PolarGrid:
    """Tensor grid of nodes (r_i, theta_j), i = 0..n_r, j = 0..n_theta-1.

    For problem I the row i = 0 holds n_theta copies of the origin; they are
    kept equal and act as a single unknown.
    """

    spec: GeometrySpec
    radii: np.ndarray
    n_theta: int
    theta: np.ndarray = field(repr=False)
    area_weights: np.ndarray = field(repr=False)
    boundary_weights: np.ndarray = field(repr=False)
    c_radial: np.ndarray = field(repr=False)
    c_angular: np.ndarray = field(repr=False)

    @property
    def n_r(self) -> int:
        return len(self.radii) - 1

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.radii), self.n_theta)

    @property
    def dtheta(self) -> float:
        return 2 * np.pi / self.n_theta

    @property
    def gamma_row(self) -> int:
        return self.n_r if self.spec.problem == "I" else 0

    @property
    def dirichlet_row(self) -> int | None:
        return None if self.spec.problem == "I" else self.n_r

    @property
    def has_origin(self) -> bool:
        return self.spec.problem == "I"

    @property
    def R(self) -> np.ndarray:
        return np.broadcast_to(self.radii[:, None], self.shape)

    @property
    def T(self) -> np.ndarray:
        return np.broadcast_to(self.theta[None, :], self.shape)

    @property
    def z(self) -> np.ndarray:
        """Node positions as complex numbers."""
        return self.radii[:, None] * np.exp(1j * self.theta[None, :])

    @property
    def x(self) -> np.ndarray:
        return self.z.real

    @property
    def y(self) -> np.ndarray:
        return self.z.imag

    def free_mask(self) -> np.ndarray:
        """Nodes that the minimizer may move (everything but the pinned ring)."""
        mask = np.ones(self.shape, dtype=bool)
        if self.dirichlet_row is not None:
            mask[self.dirichlet_row] = False
        return mask

    def gamma_spacing(self) -> float:
        return self.spec.gamma_radius * self.dtheta


def _stretched_radii(a: float, b: float, n: int, ratio: float) -> np.ndarray:
    """n cells on [a, b] growing geometrically so last/first = ratio."""
    if ratio == 1.0:
        return np.linspace(a, b, n + 1)
    q = ratio ** (1.0 / (n - 1))
    cells = q ** np.arange(n)
    edges = np.concatenate([[0.0], np.cumsum(cells)])
    return a + (b - a) * edges / edges[-1]


def build_grid(spec: GeometrySpec, n_r: int, n_theta: int, radial_stretch: float | None = None,
               radii=None) -> PolarGrid:
    """Build the polar grid for ``spec``.

    ``radial_stretch`` is the ratio of the cell farthest from Gamma to the cell
    touching it (defaults: 1 for I/II, 4 for III).  ``radii`` overrides the
    radial nodes entirely; it must run from r_inner to r_outer.
    """
    if n_theta < 16 or n_theta % 2:
        raise ValueError("n_theta must be even and at least 16")
    if radii is None:
        if n_r < 8:
            raise ValueError("n_r must be at least 8")
        if radial_stretch is None:
            radial_stretch = 4.0 if spec.problem == "III" else 1.0
        if not radial_stretch > 0:
            raise ValueError("radial_stretch must be positive")
        radii = _stretched_radii(spec.r_inner, spec.r_outer, n_r, float(radial_stretch))
        if spec.problem == "I":
            # cells shrink toward the anchoring rim
            radii = spec.r_outer - radii[::-1]
            radii[0] = 0.0
    else:
        radii = np.asarray(radii, dtype=float).copy()
        if len(radii) < 9:
            raise ValueError("need at least 8 radial cells")
        if np.any(np.diff(radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        if not (np.isclose(radii[0], spec.r_inner) and np.isclose(radii[-1], spec.r_outer)):
            raise ValueError("radii must span [r_inner, r_outer]")
        radii[0], radii[-1] = spec.r_inner, spec.r_outer

    dtheta = 2 * np.pi / n_theta
    theta = dtheta * np.arange(n_theta)
    faces = np.concatenate([[radii[0]], 0.5 * (radii[1:] + radii[:-1]), [radii[-1]]])
    ring_area = 0.5 * dtheta * (faces[1:] ** 2 - faces[:-1] ** 2)
    area = np.repeat(ring_area[:, None], n_theta, axis=1)

    c_radial = faces[1:-1] * dtheta / np.diff(radii)
    with np.errstate(divide="ignore", invalid="ignore"):
        c_angular = np.where(radii > 0, np.diff(faces) / (radii * dtheta), 0.0)

    boundary = np.full(n_theta, spec.gamma_radius * dtheta)
    return PolarGrid(spec=spec, radii=radii, n_theta=n_theta, theta=theta, area_weights=area,
                     boundary_weights=boundary, c_radial=c_radial, c_angular=c_angular)


def anchor_values(spec: GeometrySpec, grid: PolarGrid | None = None, theta=None) -> np.ndarray:
    """Preferred boundary value exp(i(D theta + offset)) on the Gamma nodes."""
    if theta is None:
        theta = grid.theta
    return np.exp(1j * (spec.degree * np.asarray(theta) + spec.offset))


def nested_radii(spec: GeometrySpec, n_r: int, r_base: float, radial_stretch: float = 4.0) -> np.ndarray:
    """Radial nodes on [r_inner, r_outer] whose restriction to [r_inner, r_base]
    is the same for every r_outer >= r_base.

    Beyond ``r_base`` each doubling of the radius gets a log-uniform block whose
    first cell matches the last cell before it, so grids for R and 2R agree on
    [r_inner, R].
    """
    if spec.problem != "III":
        raise ValueError("nested truncation grids are for problem III")
    base = _stretched_radii(spec.r_inner, r_base, n_r, radial_stretch)
    radii = [base]
    r = r_base
    step = base[-1] - base[-2]
    while r < spec.r_outer * (1 - 1e-12):
        r_next = min(2 * r, spec.r_outer)
        q = 1 + step / r
        m = max(1, int(round(np.log(r_next / r) / np.log(q))))
        block = r * np.exp(np.linspace(0, np.log(r_next / r), m + 1))[1:]
        radii.append(block)
        step = block[-1] - block[-2]
        r = r_next
    return np.concatenate(radii)


def node_index(grid: PolarGrid, i, j):
    return np.asarray(i) * grid.n_theta + np.asarray(j) % grid.n_theta


def stiffness_matrix(grid: PolarGrid):
    """Sparse weighted graph Laplacian L with E_D(u) = 1/2 u^H L u."""
    from scipy import sparse

    nr1, nt = grid.shape
    rows, cols, vals = [], [], []

    def add_edges(a, b, c):
        rows.extend([a, b, a, b])
        cols.extend([a, b, b, a])
        vals.extend([c, c, -c, -c])

    ii, jj = np.meshgrid(np.arange(nr1 - 1), np.arange(nt), indexing="ij")
    add_edges(node_index(grid, ii, jj).ravel(), node_index(grid, ii + 1, jj).ravel(),
              np.repeat(grid.c_radial, nt))
    ii, jj = np.meshgrid(np.arange(nr1), np.arange(nt), indexing="ij")
    add_edges(node_index(grid, ii, jj).ravel(), node_index(grid, ii, jj + 1).ravel(),
              np.repeat(grid.c_angular, nt))
    rows, cols, vals = (np.concatenate(a) for a in (rows, cols, vals))
    n = nr1 * nt
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def origin_reduction(grid: PolarGrid):
    """Matrix P mapping reduced unknowns to nodes; the origin copies share one."""
    from scipy import sparse

    n = grid.shape[0] * grid.n_theta
    if not grid.has_origin:
        return sparse.identity(n, format="csr")
    nt = grid.n_theta
    cols = np.concatenate([np.zeros(nt, dtype=int), np.arange(1, n - nt + 1)])
    return sparse.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, n - nt + 1))


def harmonic_fill(grid: PolarGrid, values: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Discrete harmonic extension of real ``values`` given at ``known`` nodes."""
    from scipy.sparse.linalg import spsolve

    P = origin_reduction(grid)
    L = (P.T @ stiffness_matrix(grid) @ P).tocsr()
    known_red = np.asarray(P.T @ known.ravel().astype(float)) > 0
    # reduced value: first node that maps to each unknown
    first = np.asarray(P.argmax(axis=0)).ravel()
    data = values.ravel()[first]
    free = ~known_red
    out = data.copy()
    if free.any():
        rhs = -L[free][:, known_red] @ data[known_red]
        out[free] = spsolve(L[free][:, free].tocsc(), rhs)
    return (P @ out).reshape(grid.shape)
