"""Defect detection: bad set, plaquette windings and boundary degrees."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class InteriorDefect:
    x: float
    y: float
    degree: int

    @property
    def z(self) -> complex:
        return complex(self.x, self.y)


@dataclass
class BoundaryDefect:
    theta: float
    degree: int
    arc: tuple[float, float] | None = None
    resolved: bool = True


@dataclass
class DefectSet:
    interior: list[InteriorDefect] = field(default_factory=list)
    boundary: list[BoundaryDefect] = field(default_factory=list)
    expected_total: int | None = None
    spurious: list[dict] = field(default_factory=list)

    @property
    def I(self) -> int:
        return len(self.interior)

    @property
    def J(self) -> int:
        return len(self.boundary)

    @property
    def total_degree(self) -> int:
        return sum(d.degree for d in self.interior) + sum(b.degree for b in self.boundary)

    @property
    def accounting_ok(self) -> bool:
        if self.expected_total is None:
            return True
        resolved = all(b.resolved for b in self.boundary)
        return resolved and self.total_degree == self.expected_total

    @property
    def unit_degrees(self) -> bool:
        degs = [d.degree for d in self.interior] + [b.degree for b in self.boundary]
        return all(abs(d) == 1 for d in degs) and len({np.sign(d) for d in degs}) <= 1

    def classify(self, degree: int) -> str:
        """'boundary', 'interior', 'mixed' (or 'none' when nothing is expected)."""
        n = abs(degree)
        if n == 0 and self.I == 0 and self.J == 0:
            return "none"
        if self.J == n and self.I == 0:
            return "boundary"
        if self.I == n and self.J == 0:
            return "interior"
        return "mixed"

    def to_dict(self) -> dict:
        return {
            "interior": [{"x": d.x, "y": d.y, "d": int(d.degree)} for d in self.interior],
            "boundary": [{"theta": b.theta, "D": int(b.degree)} for b in self.boundary],
            "accounting_ok": bool(self.accounting_ok),
        }


def expected_total_degree(spec) -> int:
    """Topological budget: +D on the disk, -D outside the anchoring circle."""
    return spec.degree if spec.problem == "I" else -spec.degree


class UnresolvedDefect(RuntimeError):
    pass


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def loop_winding(values, closed: bool = True) -> int:
    """Winding number of a sampled closed loop (principal-branch increments)."""
    v = np.asarray(values, dtype=complex)
    if closed:
        v = np.concatenate([v, v[:1]])
    if np.any(np.abs(v) == 0):
        raise ValueError("loop passes through a zero")
    total = np.sum(_wrap(np.diff(np.angle(v))))
    return int(np.rint(total / (2 * np.pi)))


def loop_phase_increment(values) -> float:
    v = np.asarray(values, dtype=complex)
    return float(np.sum(_wrap(np.diff(np.angle(v)))))


def plaquette_windings(values: np.ndarray, tol: float = 0.0):
    """Winding of every grid cell (i, j)-(i+1, j)-(i+1, j+1)-(i, j+1), which is
    counterclockwise in the plane.  Returns (windings, resolvable mask)."""
    u = np.asarray(values, dtype=complex)
    ph = np.angle(u)
    a, b = ph[:-1], ph[1:]
    c, d = np.roll(b, -1, axis=1), np.roll(a, -1, axis=1)
    total = _wrap(b - a) + _wrap(c - b) + _wrap(d - c) + _wrap(a - d)
    w = np.rint(total / (2 * np.pi)).astype(int)
    mag = np.abs(u)
    ok = (mag[:-1] > tol) & (mag[1:] > tol) & (np.roll(mag[1:], -1, axis=1) > tol) & (np.roll(mag[:-1], -1, axis=1) > tol)
    return np.where(ok, w, 0), ok


def plaquette_winding(u, cell) -> int:
    """Winding of the single cell whose lower corner is node ``cell = (i, j)``."""
    vals = u.values if hasattr(u, "values") else np.asarray(u)
    i, j = cell
    nt = vals.shape[1]
    corners = [vals[i, j], vals[i + 1, j], vals[i + 1, (j + 1) % nt], vals[i, (j + 1) % nt]]
    if min(abs(c) for c in corners) == 0:
        raise ValueError("cell has a zero corner")
    return loop_winding(corners)


# bad set -----------------------------------------------------------------------

@dataclass
class Component:
    nodes: np.ndarray            # (k, 2) node indices
    touches_gamma: bool
    centroid: complex
    diameter: float

    @property
    def tag(self) -> str:
        return "boundary" if self.touches_gamma else "interior"


@dataclass
class BadSet:
    mask: np.ndarray
    components: list[Component]


def _label_periodic(mask: np.ndarray, origin_row: bool):
    from scipy import ndimage

    lab, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return lab, 0
    parent = np.arange(n + 1)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        if a and b:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    nr = mask.shape[0]
    for i in range(nr):
        for di in (-1, 0, 1):
            k = i + di
            if 0 <= k < nr:
                union(lab[i, -1], lab[k, 0])
    if origin_row:
        labels = np.unique(lab[0][lab[0] > 0])
        for a in labels[1:]:
            union(labels[0], a)
    roots = np.array([find(a) for a in range(n + 1)])
    uniq = {r: k for k, r in enumerate(np.unique(roots[1:]), start=1)}
    remap = np.array([0] + [uniq[r] for r in roots[1:]])
    return remap[lab], len(uniq)


def _components(mask: np.ndarray, grid) -> list[Component]:
    lab, n = _label_periodic(mask, grid.has_origin)
    z = grid.z
    out = []
    for k in range(1, n + 1):
        nodes = np.argwhere(lab == k)
        pts = z[nodes[:, 0], nodes[:, 1]]
        touches = bool(np.any(nodes[:, 0] == grid.gamma_row))
        diam = float(np.max(np.abs(pts[:, None] - pts[None, :]))) if len(pts) < 3000 else float(np.ptp(pts.real) + np.ptp(pts.imag))
        out.append(Component(nodes, touches, complex(np.mean(pts)), diam))
    return out


def bad_set(u, g=None, grid=None) -> BadSet:
    """Nodes with |u| < 1/2, or on Gamma with |u - g| > 1/4, and their
    8-connected (angle-periodic) components."""
    from .geometry import anchor_values

    grid = grid if grid is not None else u.grid
    vals = u.values if hasattr(u, "values") else np.asarray(u)
    if g is None:
        g = anchor_values(grid.spec, grid)
    mask = np.abs(vals) < 0.5
    row = grid.gamma_row
    mask[row] |= np.abs(vals[row] - g) > 0.25
    if grid.dirichlet_row is not None:
        mask[grid.dirichlet_row] = False
    return BadSet(mask, _components(mask, grid))


# sampling helpers ----------------------------------------------------------------

def sample(values: np.ndarray, grid, z) -> np.ndarray:
    """Bilinear interpolation in (r, theta) at points z."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    r = np.clip(np.abs(z), grid.radii[0], grid.radii[-1])
    th = np.mod(np.angle(z), 2 * np.pi)
    i = np.clip(np.searchsorted(grid.radii, r, side="right") - 1, 0, grid.n_r - 1)
    fr = (r - grid.radii[i]) / (grid.radii[i + 1] - grid.radii[i])
    jf = th / grid.dtheta
    j = np.floor(jf).astype(int) % grid.n_theta
    ft = jf - np.floor(jf)
    j1 = (j + 1) % grid.n_theta
    v = values
    return ((1 - fr) * (1 - ft) * v[i, j] + fr * (1 - ft) * v[i + 1, j]
            + (1 - fr) * ft * v[i, j1] + fr * ft * v[i + 1, j1])


def _gamma_sample(values, grid, theta):
    row = values[grid.gamma_row]
    jf = np.mod(theta, 2 * np.pi) / grid.dtheta
    j = np.floor(jf).astype(int) % grid.n_theta
    f = jf - np.floor(jf)
    return (1 - f) * row[j] + f * row[(j + 1) % grid.n_theta]


# boundary degree -----------------------------------------------------------------

@dataclass
class BoundaryDegreeResult:
    degree: int
    radius: float
    half_circle_increment: float
    raw: float
    enclosed: int = 0


def boundary_degree(u, g=None, arc=None, grid=None, extension: str = "phase",
                    margin=None, detail: bool = False, interior=()):
    """Degree of a boundary bad arc ``arc = (theta_lo, theta_hi)``.

    The loop is the part of a circle centred on Gamma whose two Gamma
    endpoints sit just outside the arc (``margin`` radians on either side),
    closed along Gamma where u is replaced by an extension interpolating u/g
    between the endpoints ('phase': linear in the phase of u/g, 'linear':
    linear in u/g).  Both give the same integer.  Degrees of known
    ``interior`` defects that the loop encloses are subtracted.
    """
    from .geometry import anchor_values

    grid = grid if grid is not None else u.grid
    spec = grid.spec
    vals = u.values if hasattr(u, "values") else np.asarray(u)
    lo, hi = arc
    if hi < lo:
        hi += 2 * np.pi
    rg = spec.gamma_radius
    if margin is None:
        m = 4 * grid.dtheta + 0.25 * (hi - lo)
        margin = (m, m)
    limit = 1.9 * rg if spec.problem == "I" else min(0.95 * (spec.r_outer - spec.r_inner), 1.9 * rg)

    def gfun(theta):
        return np.exp(1j * (spec.degree * theta + spec.offset))

    h = max(grid.gamma_spacing(), np.min(np.diff(grid.radii)))
    for scale in (1.0, 0.5, 1.5):
        ta, tb = lo - scale * margin[0], hi + scale * margin[1]
        tc, delta = 0.5 * (ta + tb), 0.5 * (tb - ta)
        R = 2 * rg * np.sin(min(delta, np.pi) / 2)
        if R > limit or delta >= np.pi:
            continue
        ua, ub = _gamma_sample(vals, grid, ta), _gamma_sample(vals, grid, tb)
        if abs(ua - gfun(ta)) > 0.25 or abs(ub - gfun(tb)) > 0.25:
            continue
        q = rg * np.exp(1j * tc)
        pa = np.angle(rg * np.exp(1j * ta) - q)
        pb = np.angle(rg * np.exp(1j * tb) - q)
        n_arc = int(max(256, 8 * np.pi * R / h))
        if spec.problem == "I":
            # counterclockwise about q, through the inside of the disk
            phis = pb + np.mod(pa - pb, 2 * np.pi) * np.linspace(0, 1, n_arc)
            start, end = tb, ta
        else:
            phis = pa + np.mod(pb - pa, 2 * np.pi) * np.linspace(0, 1, n_arc)
            start, end = ta, tb
        circle = sample(vals, grid, q + R * np.exp(1j * phis))
        if np.min(np.abs(circle)) >= 0.5:
            break
    else:
        raise UnresolvedDefect(f"boundary arc ({lo:.3f}, {hi:.3f}) unresolved")

    # close along Gamma from the end of the half-circle back to its start
    n_g = int(max(64, 16 * delta * (abs(spec.degree) + 1) / grid.dtheta))
    th = np.linspace(end, start, n_g)
    re_, rs = circle[-1] / gfun(end), circle[0] / gfun(start)
    s = np.linspace(0, 1, n_g)
    if extension == "phase":
        ratio = np.exp(1j * ((1 - s) * np.angle(re_) + s * np.angle(rs)))
    elif extension == "linear":
        ratio = (1 - s) * re_ + s * rs
    else:
        raise ValueError(f"unknown extension {extension!r}")
    loop = np.concatenate([circle, (gfun(th) * ratio)[1:-1]])
    raw = loop_phase_increment(np.concatenate([loop, loop[:1]]))
    inside = [d for d in interior if abs(d.z - q) < R]
    enclosed = sum(d.degree for d in inside)
    D = int(np.rint(raw / (2 * np.pi))) - enclosed
    if detail:
        return BoundaryDegreeResult(D, float(R), loop_phase_increment(circle), raw, enclosed)
    return D


# detection ---------------------------------------------------------------------

def _cover_arc(theta: np.ndarray) -> tuple[float, float]:
    """Smallest arc (lo, hi) containing all given angles."""
    t = np.sort(np.mod(theta, 2 * np.pi))
    if len(t) == 1:
        return float(t[0]), float(t[0])
    gaps = np.diff(np.concatenate([t, [t[0] + 2 * np.pi]]))
    k = int(np.argmax(gaps))
    lo = t[(k + 1) % len(t)]
    hi = t[k] if k + 1 < len(t) else t[k]
    if hi < lo:
        hi += 2 * np.pi
    return float(lo), float(hi)


def _bilinear_zero(c00, c10, c01, c11):
    """Zero of the bilinear interpolant on the unit square (Newton), or None."""
    s, t = 0.5, 0.5
    for _ in range(30):
        f = (1 - s) * (1 - t) * c00 + s * (1 - t) * c10 + (1 - s) * t * c01 + s * t * c11
        fs = -(1 - t) * c00 + (1 - t) * c10 - t * c01 + t * c11
        ft = -(1 - s) * c00 - s * c10 + (1 - s) * c01 + s * c11
        J = np.array([[fs.real, ft.real], [fs.imag, ft.imag]])
        try:
            step = np.linalg.solve(J, [-f.real, -f.imag])
        except np.linalg.LinAlgError:
            return None
        s, t = s + step[0], t + step[1]
        if np.hypot(*step) < 1e-12:
            break
    if -0.25 <= s <= 1.25 and -0.25 <= t <= 1.25:
        return float(np.clip(s, 0, 1)), float(np.clip(t, 0, 1))
    return None


def _box_loop(vals, grid, i0, i1, js):
    """Counterclockwise loop around index box rows i0..i1, angular indices js."""
    nt = grid.n_theta
    j0, j1 = js[0], js[-1]
    path = [(i, j0) for i in range(i0, i1 + 1)]
    path += [(i1, j % nt) for j in js[1:]]
    path += [(i, j1 % nt) for i in range(i1 - 1, i0 - 1, -1)]
    path += [(i0, j % nt) for j in js[-2:0:-1]]
    return np.array([vals[i, j] for i, j in path])


def _interior_degree(vals, grid, nodes, margin=2):
    nt = grid.n_theta
    i0 = max(int(nodes[:, 0].min()) - margin, 0)
    i1 = min(int(nodes[:, 0].max()) + margin, grid.n_r)
    lo, hi = _cover_arc(nodes[:, 1] * grid.dtheta)
    jl = int(np.floor(lo / grid.dtheta + 1e-9)) - margin
    jh = int(np.ceil(hi / grid.dtheta - 1e-9)) + margin
    full = (jh - jl) >= nt - 1 or (grid.has_origin and i0 == 0)
    if full:
        outer = loop_winding(vals[i1])
        inner = 0 if (grid.has_origin and i0 == 0) else loop_winding(vals[i0])
        return outer - inner
    return loop_winding(_box_loop(vals, grid, i0, i1, list(range(jl, jh + 1))))


def _interior_position(vals, grid, nodes, wind_cells):
    z = grid.z
    zeros = []
    for i, j in wind_cells:
        j1 = (j + 1) % grid.n_theta
        st = _bilinear_zero(vals[i, j], vals[i + 1, j], vals[i, j1], vals[i + 1, j1])
        if st is None:
            st = (0.5, 0.5)
        r = grid.radii[i] + st[0] * (grid.radii[i + 1] - grid.radii[i])
        th = grid.theta[j] + st[1] * grid.dtheta
        zeros.append(r * np.exp(1j * th))
    if zeros:
        return complex(np.mean(zeros))
    pts = z[nodes[:, 0], nodes[:, 1]]
    wts = np.clip(0.5 - np.abs(vals[nodes[:, 0], nodes[:, 1]]), 1e-12, None)
    return complex(np.sum(wts * pts) / np.sum(wts))


def detect(u, g=None, params=None, grid=None) -> DefectSet:
    """Locate and classify defects of a (converged) field.

    Candidate nodes are the bad set plus corners of cells with nonzero
    winding.  Components touching Gamma are boundary defects; boundary arcs
    closer than 5 eps^alpha and interior clusters closer than 5 eps are merged.
    """
    from scipy.spatial import cKDTree
    from .geometry import anchor_values

    grid = grid if grid is not None else u.grid
    spec = grid.spec
    vals = u.values if hasattr(u, "values") else np.asarray(u)
    if params is None:
        params = getattr(u, "params", None)
    if g is None:
        g = anchor_values(spec, grid)
    eps = params.eps if params is not None else grid.gamma_spacing()
    core = params.eps ** params.alpha if params is not None else eps
    rg = spec.gamma_radius

    bs = bad_set(vals, g, grid)
    mask = bs.mask.copy()
    wind, _ = plaquette_windings(vals)
    nonzero = np.argwhere(wind != 0)
    for i, j in nonzero:
        j1 = (j + 1) % grid.n_theta
        mask[i, j] = mask[i + 1, j] = mask[i, j1] = mask[i + 1, j1] = True
    if grid.dirichlet_row is not None:
        mask[grid.dirichlet_row] = False
    comps = _components(mask, grid)

    # merge boundary components by arc gap, interior ones by distance
    bnd = [c for c in comps if c.touches_gamma]
    inner = [c for c in comps if not c.touches_gamma]
    arcs = [_cover_arc(c.nodes[:, 1] * grid.dtheta) for c in bnd]
    z = grid.z
    trees = [cKDTree(np.c_[z[c.nodes[:, 0], c.nodes[:, 1]].real, z[c.nodes[:, 0], c.nodes[:, 1]].imag]) for c in inner]
    parent = list(range(len(inner)))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for a in range(len(inner)):
        for b in range(a + 1, len(inner)):
            dist, _ = trees[a].query(trees[b].data, k=1)
            if np.min(dist) < 5 * eps:
                parent[find(b)] = find(a)

    out = DefectSet(expected_total=expected_total_degree(spec))
    wind_set = {tuple(x) for x in nonzero}
    clusters: dict[int, list] = {}
    for k in range(len(inner)):
        clusters.setdefault(find(k), []).append(inner[k])
    for members in clusters.values():
        nodes = np.concatenate([m.nodes for m in members])
        node_set = {tuple(x) for x in nodes}
        cells = [c for c in wind_set if c in node_set]
        try:
            d = _interior_degree(vals, grid, nodes)
        except ValueError:
            out.spurious.append({"kind": "interior", "reason": "zero on loop",
                                 "x": float(np.mean(z[nodes[:, 0], nodes[:, 1]].real)),
                                 "y": float(np.mean(z[nodes[:, 0], nodes[:, 1]].imag))})
            continue
        pos = _interior_position(vals, grid, nodes, cells)
        if d == 0:
            out.spurious.append({"kind": "interior", "x": pos.real, "y": pos.imag, "degree": 0})
            continue
        out.interior.append(InteriorDefect(pos.real, pos.imag, d))

    for lo, hi, D in _boundary_clusters(vals, g, grid, arcs, 5 * core / rg, out.interior):
        center = float(np.mod(0.5 * (lo + hi), 2 * np.pi))
        if D is None:
            out.boundary.append(BoundaryDefect(center, 0, (lo, hi), resolved=False))
        elif D == 0:
            out.spurious.append({"kind": "boundary", "theta": center, "degree": 0})
        else:
            out.boundary.append(BoundaryDefect(center, D, (lo, hi)))
    out.interior.sort(key=lambda d: (np.angle(d.z) % (2 * np.pi), abs(d.z)))
    out.boundary.sort(key=lambda b: b.theta)
    return out


def _merge_arcs(arcs, gap_limit):
    """Union arcs whose circular gap is below ``gap_limit``; returns sorted (lo, hi)."""
    if not arcs:
        return []
    arcs = sorted(((lo % (2 * np.pi), lo % (2 * np.pi) + (hi - lo)) for lo, hi in arcs))
    out = [list(arcs[0])]
    for lo, hi in arcs[1:]:
        if lo - out[-1][1] < gap_limit:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    if len(out) > 1 and out[0][0] + 2 * np.pi - out[-1][1] < gap_limit:
        last = out.pop()
        out[0] = [last[0], max(last[1], out[0][1] + 2 * np.pi)]
    if out[-1][1] - out[0][0] >= 2 * np.pi - gap_limit and len(out) == 1:
        out[0] = [0.0, 2 * np.pi]
    return [tuple(x) for x in out]


def _arc_degrees(vals, g, grid, arcs, interior=()):
    """Degree of each arc, with loop endpoints in the middle of the adjacent good gaps."""
    n = len(arcs)
    degs = []
    for k, (lo, hi) in enumerate(arcs):
        if hi - lo >= 2 * np.pi - 1e-12:
            degs.append(None)
            continue
        prev_hi = arcs[k - 1][1] - (2 * np.pi if k == 0 else 0.0)
        next_lo = arcs[(k + 1) % n][0] + (2 * np.pi if k == n - 1 else 0.0)
        if n == 1:
            prev_hi, next_lo = hi - 2 * np.pi, lo + 2 * np.pi
        cap = 4 * grid.dtheta + 0.25 * (hi - lo)
        margin = (min(0.5 * (lo - prev_hi), cap), min(0.5 * (next_lo - hi), cap))
        try:
            degs.append(boundary_degree(vals, g, (lo, hi), grid, margin=margin, interior=interior))
        except UnresolvedDefect:
            degs.append(None)
    return degs


def _boundary_clusters(vals, g, grid, arcs, merge_gap, interior=()):
    """Boundary clusters as (lo, hi, degree or None).

    Fragments that touch are joined first.  A neighbour closer than
    ``merge_gap`` is absorbed only if one of the pair has zero or
    unresolved degree, so distinct charged arcs are never fused.
    """
    arcs = _merge_arcs(arcs, 1.5 * grid.dtheta)
    degs = _arc_degrees(vals, g, grid, arcs, interior)
    while len(arcs) > 1:
        n = len(arcs)
        best = None
        for k in range(n):
            m = (k + 1) % n
            gap = arcs[m][0] + (2 * np.pi if m == 0 else 0.0) - arcs[k][1]
            weak = degs[k] in (None, 0) or degs[m] in (None, 0)
            if weak and gap < merge_gap and (best is None or gap < best[0]):
                best = (gap, k)
        if best is None:
            break
        k = best[1]
        m = (k + 1) % n
        lo, hi = arcs[k][0], arcs[m][1] + (2 * np.pi if m == 0 else 0.0)
        rest = [arcs[i] for i in range(n) if i not in (k, m)]
        arcs = _merge_arcs(rest + [(lo, hi)], 0.0)
        degs = _arc_degrees(vals, g, grid, arcs, interior)
    return [(lo, hi, d) for (lo, hi), d in zip(arcs, degs)]
