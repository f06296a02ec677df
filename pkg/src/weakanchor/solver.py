"""Energy minimization with Robin anchoring and pinned outer ring."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .energy import AnchoringParams, EnergyBreakdown, el_residual, energy, gradient, hessian
from .field import OrderParameter, canonical_map, smooth_cores, upper_bound_initializer
from .geometry import GeometrySpec, PolarGrid, anchor_values, build_grid, nested_radii
from .vortex import BoundaryDefect, DefectSet, InteriorDefect

log = logging.getLogger(__name__)

INITS = ("multi", "upper_bound", "canonical", "random")


class SolverError(RuntimeError):
    pass


@dataclass
class SolveConfig:
    max_iters: int = 20000
    method: str = "lbfgs"            # "lbfgs" or "flow" (explicit gradient flow)
    tol_r: float | None = None       # default 1e-6 / eps
    tol_e: float | None = None       # default 1e-10 |E|
    init: str = "multi"
    seed: int = 0
    boundary_points: tuple | None = None
    interior_points: tuple | None = None   # complex positions
    history_every: int = 1
    memory: int = 30
    scaled: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.method not in ("lbfgs", "flow"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown initializer {self.init!r}")
        for tol in (self.tol_r, self.tol_e):
            if tol is not None and not tol > 0:
                raise ValueError("tolerances must be positive")

    def residual_tol(self, params: AnchoringParams) -> float:
        return self.tol_r if self.tol_r is not None else 1e-6 / params.eps

    def energy_tol(self, e: float) -> float:
        return self.tol_e if self.tol_e is not None else 1e-10 * max(abs(e), 1e-300)


@dataclass
class HistoryRow:
    iter: int
    breakdown: EnergyBreakdown
    residual_norm: float

    def as_row(self) -> dict:
        b = self.breakdown
        return {"iter": self.iter, "dirichlet": b.dirichlet, "potential": b.potential,
                "anchoring": b.anchoring, "total": b.total, "residual_norm": self.residual_norm}


@dataclass
class SolveReport:
    u: OrderParameter
    history: list[HistoryRow]
    iterations: int
    converged: bool
    residual_norm: float
    breakdown: EnergyBreakdown
    max_abs_u: float
    grad_bound: float
    phi_star: float | None
    branch: str = ""
    branches: dict = field(default_factory=dict)
    message: str = ""

    @property
    def energy(self) -> float:
        return self.breakdown.total


class _Packer:
    """Maps free nodes (origin as one unknown, pinned ring excluded) to a real
    vector.  With ``scaled`` the unknowns are sqrt(mass) * u, a diagonal
    preconditioner that keeps small cells near the origin from stalling."""

    def __init__(self, grid: PolarGrid, scaled: bool = False):
        self.grid = grid
        mask = grid.free_mask()
        if grid.has_origin:
            mask[0, 1:] = False
        self.mask = mask
        self.n = int(mask.sum())
        mass = grid.area_weights.copy()
        if grid.has_origin:
            mass[0, 0] = mass[0].sum()
        root = np.sqrt(mass[mask]) if scaled else np.ones(self.n)
        self.scale = np.concatenate([root, root])

    def pack(self, u: np.ndarray) -> np.ndarray:
        v = u[self.mask]
        return np.concatenate([v.real, v.imag]) * self.scale

    def unpack(self, x: np.ndarray, template: np.ndarray) -> np.ndarray:
        x = x / self.scale
        u = template.copy()
        u[self.mask] = x[:self.n] + 1j * x[self.n:]
        if self.grid.has_origin:
            u[0, :] = u[0, 0]
        return u

    def pack_gradient(self, G: np.ndarray) -> np.ndarray:
        if self.grid.has_origin:
            G = G.copy()
            G[0, 0] = G[0].sum()
        v = G[self.mask]
        return np.concatenate([v.real, v.imag]) / self.scale


def node_gradient_norm(u: np.ndarray, grid: PolarGrid) -> np.ndarray:
    """|grad u| at nodes from centred (one-sided at the ends) differences."""
    ur = np.gradient(u, grid.radii, axis=0)
    ut = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2 * grid.dtheta)
    with np.errstate(divide="ignore", invalid="ignore"):
        tang = np.where(grid.radii[:, None] > 0, ut / grid.radii[:, None], 0.0)
    return np.sqrt(np.abs(ur) ** 2 + np.abs(tang) ** 2)


def far_field_phase(u: np.ndarray, grid: PolarGrid) -> float | None:
    """Phase of the area-weighted mean of u over the outer half of the radial range."""
    if grid.spec.problem != "III":
        return None
    sel = grid.radii >= 0.5 * (grid.radii[0] + grid.radii[-1])
    sel[-1] = False
    m = np.sum(grid.area_weights[sel] * u[sel])
    return float(np.angle(m))


def default_boundary_points(spec: GeometrySpec) -> list[float]:
    """Evenly spaced Gamma angles obeying the far-field angle constraint."""
    n = abs(spec.degree)
    if n == 0:
        return []
    # angles pi - a_k with sum a_k = offset (mod 2 pi)
    a0 = (spec.offset - np.pi * (n - 1)) / n
    return [float((np.pi - (a0 + 2 * np.pi * k / n)) % (2 * np.pi)) for k in range(n)]


def default_interior_points(spec: GeometrySpec) -> list[complex]:
    """Seeds for interior defects: renormalized-energy minimizers where available."""
    from . import renorm

    n = abs(spec.degree)
    if n == 0:
        return []
    if spec.problem == "I":
        rep = renorm.minimize_disk(n)
        pts = np.asarray(rep.positions) * spec.r_outer
    else:
        rep = renorm.minimize_w(n, "interior")
        pts = np.asarray(rep.positions) * spec.r_inner
        if spec.problem == "II":
            mid = 0.5 * (spec.r_inner + spec.r_outer)
            r = np.minimum(np.abs(pts), mid)
            pts = r * np.exp(1j * np.angle(pts))
    # rotate for a nonzero offset so the far field stays 1
    if spec.degree and spec.offset:
        if spec.problem == "I":
            pts = pts * np.exp(1j * spec.offset / spec.degree)
        else:
            pts = pts * np.exp(-1j * spec.offset / n)
    return [complex(p) for p in pts]


def initial_field(spec, grid, params, kind: str, config: SolveConfig) -> OrderParameter:
    if kind == "upper_bound":
        pts = config.boundary_points
        if pts is None:
            pts = default_boundary_points(spec)
        return upper_bound_initializer(spec, grid, params, pts)
    if kind == "canonical":
        pts = config.interior_points
        if pts is None:
            pts = default_interior_points(spec)
        d = 1 if spec.problem == "I" else -1
        d = d * int(np.sign(spec.degree))
        defects = DefectSet(interior=[InteriorDefect(p.real, p.imag, d) for p in pts])
        u = canonical_map(defects, spec, grid, params)
        return smooth_cores(u, defects, params.eps)
    if kind == "random":
        rng = np.random.default_rng(config.seed)
        vals = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
        vals = 0.5 * vals / np.maximum(np.abs(vals), 1.0)
        if grid.has_origin:
            vals[0] = vals[0, 0]
        if grid.dirichlet_row is not None:
            vals[grid.dirichlet_row] = 1.0
        return OrderParameter(vals, grid, params)
    raise ValueError(kind)


def _finish(u: np.ndarray, grid, params, g, history, iters, converged, message) -> SolveReport:
    res = el_residual(u, params, grid, g).sup_norm()
    b = energy(u, params, grid, g)
    mask = grid.free_mask()
    grad = node_gradient_norm(u, grid)
    return SolveReport(
        u=OrderParameter(u, grid, params), history=history, iterations=iters,
        converged=converged, residual_norm=res, breakdown=b,
        max_abs_u=float(np.max(np.abs(u[mask]))),
        grad_bound=float(params.eps * np.max(grad)),
        phi_star=far_field_phase(u, grid), message=message)


def _relax_lbfgs(u0: np.ndarray, grid, params, g, config: SolveConfig) -> SolveReport:
    packer = _Packer(grid, scaled=config.scaled)
    tol_r = config.residual_tol(params)
    cache = {}

    def fun(x):
        u = packer.unpack(x, u0)
        b = energy(u, params, grid, g)
        G = gradient(u, grid, params, g)
        if not np.isfinite(b.total):
            raise SolverError("non-finite energy encountered")
        cache["x"], cache["u"], cache["b"], cache["G"] = x.copy(), u, b, G
        return b.total, packer.pack_gradient(G)

    history: list[HistoryRow] = []
    state = {"it": 0, "converged": False, "last": None}

    def residual_of(u, G):
        return _residual_norm(u, G, grid)

    def record(x):
        if "x" not in cache or not np.array_equal(cache["x"], x):
            fun(x)
        return cache["b"], residual_of(cache["u"], cache["G"])

    b0, r0 = record(packer.pack(u0))
    history.append(HistoryRow(0, b0, r0))
    state["last"] = b0.total

    def callback(intermediate_result):
        state["it"] += 1
        b, r = record(intermediate_result.x)
        if state["it"] % config.history_every == 0:
            history.append(HistoryRow(state["it"], b, r))
        state["last"] = b.total
        if r <= tol_r:
            state["converged"] = True
            raise StopIteration
        # energy has stopped moving at round-off: hand over to Newton
        window = state.setdefault("window", [])
        window.append(b.total)
        if len(window) > 50:
            window.pop(0)
            if window[0] - window[-1] <= 1e-13 * max(1.0, abs(b.total)):
                state["stalled"] = True
                raise StopIteration

    x = packer.pack(u0)
    message = ""
    rounds = 0
    while not state["converged"] and state["it"] < config.max_iters and rounds < 4:
        rounds += 1
        res = minimize(fun, x, jac=True, method="L-BFGS-B", callback=callback,
                       options={"maxiter": config.max_iters - state["it"], "maxfun": 4 * config.max_iters,
                                "maxcor": config.memory, "ftol": 1e-15, "gtol": 1e-300})
        message = str(res.message)
        if np.allclose(res.x, x, rtol=0, atol=0) or state["converged"] or state.get("stalled"):
            x = res.x
            break
        x = res.x
    u = packer.unpack(x, u0)
    if not state["converged"]:
        u = _newton_polish(u, grid, params, g, tol_r)
        x = packer.pack(u)
        cache.clear()
    if history[-1].iter != state["it"]:
        b, r = record(x)
        history.append(HistoryRow(state["it"], b, r))
    rep = _finish(u, grid, params, g, history, state["it"], state["converged"], message)
    if not rep.converged and rep.residual_norm <= tol_r:
        rep.converged = True
    return rep


def _newton_polish(u: np.ndarray, grid, params, g, tol_r: float, max_steps: int = 12):
    """Sparse Newton steps on the free unknowns.  Used once L-BFGS stalls at
    round-off in the energy; a step is kept only if it lowers the residual
    without raising the energy beyond round-off."""
    from scipy import sparse
    from scipy.sparse.linalg import spsolve

    packer = _Packer(grid)
    n_all = u.size
    nodes = np.flatnonzero(packer.mask.ravel())
    # reduced unknown k -> node(s); the origin unknown owns every copy in row 0
    rows, cols = [], []
    for k, node in enumerate(nodes):
        if grid.has_origin and node == 0:
            rows.extend(range(grid.n_theta))
            cols.extend([k] * grid.n_theta)
        else:
            rows.append(node)
            cols.append(k)
    Q = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_all, len(nodes)))
    Q2 = sparse.block_diag([Q, Q]).tocsr()

    def resid(v):
        return _residual_norm(v, gradient(v, grid, params, g), grid)

    r = resid(u)
    e = energy(u, params, grid, g).total
    for _ in range(max_steps):
        if r <= tol_r:
            break
        G = gradient(u, grid, params, g).ravel()
        rhs = -(Q2.T @ np.concatenate([G.real, G.imag]))
        H = (Q2.T @ hessian(u, grid, params) @ Q2).tocsc()
        scale = float(np.abs(H.diagonal()).mean())
        accepted = False
        # Levenberg shift: the disk has a rotational zero mode
        for mu in (0.0, 1e-8, 1e-6, 1e-4, 1e-2):
            try:
                step = spsolve((H + mu * scale * sparse.identity(H.shape[0], format="csc")).tocsc(), rhs)
            except RuntimeError:
                continue
            if not np.all(np.isfinite(step)):
                continue
            full = Q2 @ step
            du = (full[:n_all] + 1j * full[n_all:]).reshape(u.shape)
            for t in (1.0, 0.5, 0.25):
                trial = u + t * du
                r_t = resid(trial)
                e_t = energy(trial, params, grid, g).total
                if r_t < r and e_t <= e + 1e-12 * max(1.0, abs(e)):
                    u, r, e = trial, r_t, e_t
                    accepted = True
                    break
            if accepted:
                break
        if not accepted:
            break
    return u


def _residual_norm(u, G, grid) -> float:
    interior = G / grid.area_weights
    interior[grid.gamma_row] = 0.0
    if grid.dirichlet_row is not None:
        interior[grid.dirichlet_row] = 0.0
    if grid.has_origin:
        interior[0] = G[0].sum() / grid.area_weights[0].sum()
    bnd = G[grid.gamma_row] / grid.boundary_weights
    return float(max(np.abs(interior).max(), np.abs(bnd).max()))


def _relax_flow(u0: np.ndarray, grid, params, g, config: SolveConfig) -> SolveReport:
    """Preconditioned explicit flow u <- u - tau G / w with backtracking."""
    packer = _Packer(grid)
    tol_r = config.residual_tol(params)
    w = grid.area_weights.copy()
    if grid.has_origin:
        w[0, 0] = w[0].sum()
    wvec = np.concatenate([w[packer.mask], w[packer.mask]])
    h = np.min(np.diff(grid.radii))
    tau = 0.2 * min(h * h, params.eps ** 2)
    tau_min = 1e-12 * tau
    u = u0.copy()
    e = energy(u, params, grid, g)
    history = [HistoryRow(0, e, el_residual(u, params, grid, g).sup_norm())]
    converged = False
    it = 0
    message = "max_iters reached"
    while it < config.max_iters:
        G = packer.pack_gradient(gradient(u, grid, params, g))
        x = packer.pack(u)
        while True:
            trial = packer.unpack(x - tau * G / wvec, u)
            e_new = energy(trial, params, grid, g)
            if not np.isfinite(e_new.total):
                raise SolverError("non-finite energy encountered")
            if e_new.total <= e.total:
                break
            tau *= 0.5
            if tau < tau_min:
                raise SolverError(f"energy increase at minimal step (iteration {it})")
        it += 1
        decrease = e.total - e_new.total
        u, e = trial, e_new
        tau *= 1.1
        res = el_residual(u, params, grid, g).sup_norm()
        if it % config.history_every == 0:
            history.append(HistoryRow(it, e, res))
        if res <= tol_r:
            converged, message = True, "residual tolerance met"
            break
        if decrease < config.energy_tol(e.total) * 1e-3:
            message = "stalled"
    if history[-1].iter != it:
        history.append(HistoryRow(it, e, el_residual(u, params, grid, g).sup_norm()))
    return _finish(u, grid, params, g, history, it, converged, message)


def relax(u0: OrderParameter, params: AnchoringParams, config: SolveConfig | None = None) -> SolveReport:
    """Minimize from a given starting field."""
    config = config or SolveConfig()
    grid = u0.grid
    g = anchor_values(grid.spec, grid)
    vals = u0.values.copy()
    if grid.dirichlet_row is not None:
        vals[grid.dirichlet_row] = 1.0
    if grid.has_origin:
        vals[0] = vals[0].mean()
    if config.method == "flow":
        return _relax_flow(vals, grid, params, g, config)
    return _relax_lbfgs(vals, grid, params, g, config)


def solve(spec: GeometrySpec, grid: PolarGrid, params: AnchoringParams,
          config: SolveConfig | None = None, initial: OrderParameter | None = None) -> SolveReport:
    """Minimize the energy.  With ``init='multi'`` both the boundary-vortex and
    the interior-vortex starts are relaxed and the lower energy is kept
    (among converged branches when there are any)."""
    config = config or SolveConfig()
    if grid.spec != spec:
        raise ValueError("grid was built for a different geometry")
    if initial is not None:
        rep = relax(initial, params, config)
        rep.branch = "given"
        rep.branches = {"given": rep.energy}
        return rep
    kinds = ["upper_bound", "canonical"] if config.init == "multi" else [config.init]
    if spec.degree == 0:
        kinds = kinds[:1]
    reports = {}
    for kind in kinds:
        u0 = initial_field(spec, grid, params, kind, config)
        reports[kind] = relax(u0, params, config)
        log.info("branch %s: E=%.10g converged=%s iters=%d", kind, reports[kind].energy,
                 reports[kind].converged, reports[kind].iterations)
    pool = [k for k in reports if reports[k].converged] or list(reports)
    best = min(pool, key=lambda k: reports[k].energy)
    rep = reports[best]
    rep.branch = best
    rep.branches = {k: r.energy for k, r in reports.items()}
    return rep


@dataclass
class AprioriCheck:
    passed: bool
    max_abs_u: float
    c0: list[float]
    c0_ratio: float
    offending: list = field(default_factory=list)


def check_apriori(reports, ratio_limit: float = 3.0) -> AprioriCheck:
    """Maximum principle and the eps-scaled gradient bound over one or several runs."""
    if isinstance(reports, SolveReport):
        reports = [reports]
    offending = []
    worst = 0.0
    for k, rep in enumerate(reports):
        a = np.abs(rep.u.values)
        worst = max(worst, float(a.max()))
        if a.max() > 1 + 1e-8:
            idx = np.unravel_index(int(np.argmax(a)), a.shape)
            offending.append({"run": k, "node": tuple(int(i) for i in idx), "abs_u": float(a.max())})
    c0 = [rep.grad_bound for rep in reports]
    positive = [c for c in c0 if c > 0]
    ratio = max(positive) / min(positive) if positive else 1.0
    passed = not offending and ratio <= ratio_limit
    return AprioriCheck(passed, worst, c0, float(ratio), offending)


@dataclass
class TruncationResult:
    radii: list[float]
    energies: list[float]
    reports: list[SolveReport]
    tol_e: float

    @property
    def monotone(self) -> bool:
        e = self.energies
        return all(e[k + 1] <= e[k] + 2 * self.tol_e for k in range(len(e) - 1))

    @property
    def shrinking(self) -> bool:
        d = np.abs(np.diff(self.energies))
        return bool(np.all(d[1:] <= d[:-1])) if len(d) > 1 else True


def truncation_sweep(spec: GeometrySpec, params: AnchoringParams, radii, n_r: int = 64,
                     n_theta: int = 128, config: SolveConfig | None = None) -> TruncationResult:
    """Minima on nested truncations r_outer = radii[0] < radii[1] < ...

    The grid of each radius extends the previous one, and each solve starts
    from the previous minimizer continued by 1, so the sequence of minima can
    only go down.
    """
    if spec.problem != "III":
        raise ValueError("truncation sweep is for problem III")
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")
    config = config or SolveConfig()
    reports, energies = [], []
    prev = None
    for R in radii:
        sp = GeometrySpec("III", R, spec.degree, spec.offset, spec.r_inner)
        grid = build_grid(sp, n_r, n_theta, radii=nested_radii(sp, n_r, radii[0]))
        if prev is None:
            rep = solve(sp, grid, params, config)
        else:
            vals = np.ones(grid.shape, dtype=complex)
            vals[:prev.shape[0]] = prev
            rep = solve(sp, grid, params, config, initial=OrderParameter(vals, grid, params))
        prev = rep.u.values
        reports.append(rep)
        energies.append(rep.energy)
    tol_e = config.energy_tol(min(energies)) if energies else 0.0
    return TruncationResult(radii, energies, reports, tol_e)
