"""Experiment orchestration: configs, sweeps, the alpha = 1/2 transition probe and reports."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .energy import AnchoringParams
from .geometry import GeometrySpec, build_grid
from .solver import SolveConfig, SolveReport, solve
from .vortex import DefectSet, detect

log = logging.getLogger(__name__)

SWEEP_FIELDS = [
    "index", "problem", "degree", "r_outer", "eps", "alpha", "K", "lam", "n_r", "n_theta",
    "status", "converged", "iterations", "residual_norm", "energy", "dirichlet", "potential",
    "anchoring", "branch", "energy_upper_bound", "energy_canonical", "max_abs_u",
    "I", "J", "classification", "accounting_ok", "defects", "error",
]


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class ExperimentConfig:
    geometry: dict
    eps: list[float]
    alpha: list[float]
    K: list[float] = field(default_factory=lambda: [1.0])
    solver: dict = field(default_factory=dict)
    outputs: str = "runs"
    write_fields: bool = True

    def __post_init__(self):
        self.eps = [float(e) for e in _as_list(self.eps)]
        self.alpha = [float(a) for a in _as_list(self.alpha)]
        self.K = [float(k) for k in _as_list(self.K)]
        for name in ("eps", "alpha", "K"):
            if not getattr(self, name):
                raise ValueError(f"{name} list is empty")
        if len(set(self.eps)) != len(self.eps):
            raise ValueError("eps values must be distinct")
        radii = _as_list(self.geometry.get("r_outer", 8.0))
        if not radii:
            raise ValueError("r_outer list is empty")
        for key in ("n_r", "n_theta"):
            if key not in self.geometry:
                raise ValueError(f"geometry block needs {key}")
        for e, a, k in itertools.product(self.eps, self.alpha, self.K):
            AnchoringParams(e, a, k)
        try:
            SolveConfig(**self.solver)       # validate early
        except TypeError as exc:
            raise ValueError(f"bad solver block: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        anch = d.get("anchoring", {})
        return cls(
            geometry=dict(d["geometry"]),
            eps=anch.get("eps", d.get("eps")),
            alpha=anch.get("alpha", d.get("alpha")),
            K=anch.get("K", d.get("K", [1.0])),
            solver=dict(d.get("solver", {})),
            outputs=d.get("outputs", "runs"),
            write_fields=d.get("write_fields", True),
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"geometry": self.geometry, "anchoring": {"eps": self.eps, "alpha": self.alpha, "K": self.K},
                "solver": self.solver, "outputs": self.outputs, "write_fields": self.write_fields}

    def points(self) -> list[dict]:
        """Sweep points in a fixed order (r_outer, alpha, K, eps)."""
        radii = [float(r) for r in _as_list(self.geometry.get("r_outer", 8.0))]
        out = []
        for k, (R, a, K, e) in enumerate(itertools.product(radii, self.alpha, self.K, self.eps)):
            out.append({"index": k, "r_outer": R, "alpha": a, "K": K, "eps": e})
        return out

    def spec_for(self, point: dict) -> GeometrySpec:
        g = self.geometry
        return GeometrySpec(problem=g.get("problem", "III"), r_outer=point["r_outer"],
                            degree=int(g.get("degree", 2)), offset=float(g.get("offset", 0.0)),
                            r_inner=g.get("r_inner"))


# writers ----------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return v


def write_csv(path, rows: list[dict], fields: list[str] | None = None):
    fields = fields or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})


def write_field_csv(u, path):
    cols = u.table()
    names = list(cols)
    data = np.column_stack([cols[n] for n in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def write_history_csv(report: SolveReport, path):
    write_csv(path, [h.as_row() for h in report.history],
              ["iter", "dirichlet", "potential", "anchoring", "total", "residual_norm"])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def run_report(report: SolveReport, defects: DefectSet) -> dict:
    return {"converged": report.converged, "iters": report.iterations, "energy": report.energy,
            "breakdown": report.breakdown.to_dict(), "residual_norm": report.residual_norm,
            "max_abs_u": report.max_abs_u, "grad_bound": report.grad_bound,
            "defects": defects.to_dict(), "phi_star": report.phi_star,
            "branch": report.branch, "branches": report.branches, "message": report.message}


def save_run(out_dir, report: SolveReport, defects: DefectSet, extra: dict | None = None, fields=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fields:
        write_field_csv(report.u, out / "field.csv")
    write_history_csv(report, out / "energy_history.csv")
    payload = run_report(report, defects)
    if extra:
        payload.update(extra)
    write_json(out / "report.json", payload)
    return payload


# sweeps -----------------------------------------------------------------------

def solve_point(spec: GeometrySpec, params: AnchoringParams, n_r: int, n_theta: int,
                solver: dict | None = None, radial_stretch=None):
    grid = build_grid(spec, n_r, n_theta, radial_stretch=radial_stretch)
    rep = solve(spec, grid, params, SolveConfig(**(solver or {})))
    return rep, detect(rep.u, params=params)


def run_point(config: ExperimentConfig, point: dict, out_dir=None) -> dict:
    """Solve one sweep point; failures are returned as rows with status 'failed'."""
    g = config.geometry
    row = {k: point[k] for k in ("index", "r_outer", "eps", "alpha", "K")}
    row.update(problem=g.get("problem", "III"), degree=int(g.get("degree", 2)),
               n_r=int(g["n_r"]), n_theta=int(g["n_theta"]))
    try:
        spec = config.spec_for(point)
        params = AnchoringParams(point["eps"], point["alpha"], point["K"])
        row["lam"] = params.lam
        rep, ds = solve_point(spec, params, row["n_r"], row["n_theta"], config.solver,
                              g.get("radial_stretch"))
    except Exception as exc:  # recorded, the sweep goes on
        log.warning("point %s failed: %s", point, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return row
    row.update(
        status="ok", converged=rep.converged, iterations=rep.iterations,
        residual_norm=rep.residual_norm, energy=rep.energy, dirichlet=rep.breakdown.dirichlet,
        potential=rep.breakdown.potential, anchoring=rep.breakdown.anchoring, branch=rep.branch,
        energy_upper_bound=rep.branches.get("upper_bound", ""), energy_canonical=rep.branches.get("canonical", ""),
        max_abs_u=rep.max_abs_u, I=ds.I, J=ds.J, classification=ds.classify(spec.degree),
        accounting_ok=ds.accounting_ok, defects=json.dumps(ds.to_dict(), sort_keys=True), error="",
    )
    if out_dir is not None:
        save_run(Path(out_dir) / f"run_{point['index']:04d}", rep, ds,
                 {"point": point, "geometry": spec.to_dict(), "params": params.to_dict()},
                 fields=config.write_fields)
    return row


def _worker(args):
    cfg_dict, point, out_dir = args
    return run_point(ExperimentConfig.from_dict(cfg_dict), point, out_dir)


def worker_count() -> int:
    try:
        n = int(os.environ.get("GL_ANCHOR_THREADS", "1"))
    except ValueError:
        n = 1
    return max(n, 1)


def run_sweep(config: ExperimentConfig, out_dir=None, workers: int | None = None) -> list[dict]:
    """Run every sweep point and write ``sweep.csv``.  Rows are ordered by
    point index, so the CSV does not depend on the worker count."""
    out_dir = Path(out_dir or config.outputs)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.json", config.to_dict())
    points = config.points()
    workers = workers or worker_count()
    if workers <= 1 or len(points) == 1:
        rows = [run_point(config, p, out_dir) for p in points]
    else:
        jobs = [(config.to_dict(), p, str(out_dir)) for p in points]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_worker, jobs))
    rows.sort(key=lambda r: r["index"])
    write_csv(out_dir / "sweep.csv", rows, SWEEP_FIELDS)
    return rows


# transition probe -------------------------------------------------------------

@dataclass
class TransitionRecord:
    alpha: float
    eps: float
    K: list[float]
    classifications: list[str]
    energies: list[float]
    K0_emp: float | None
    K1_emp: float | None
    monotone: bool
    rescaling: dict | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def bracket_ok(self) -> bool:
        if self.K0_emp is None or self.K1_emp is None:
            return True
        return self.K0_emp <= self.K1_emp

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bracket_ok"] = self.bracket_ok
        return d


def _bracket(K, classes):
    bnd = [k for k, c in zip(K, classes) if c == "boundary"]
    inn = [k for k, c in zip(K, classes) if c == "interior"]
    K0 = max(bnd) if bnd else None
    K1 = min(inn) if inn else None
    order = {"boundary": 0, "mixed": 1, "interior": 2}
    ranks = [order.get(c) for c in classes]
    monotone = None not in ranks and all(a <= b for a, b in zip(ranks, ranks[1:]))
    return K0, K1, monotone


def transition_probe(K_grid, eps: float = 0.05, alpha: float = 0.5, degree: int = 2,
                     r_outer: float = 8.0, n_r: int = 64, n_theta: int = 192,
                     solver: dict | None = None, rescale_radius: float | None = 4.0,
                     out_dir=None) -> TransitionRecord:
    """Classify the droplet state along a K grid at alpha = 1/2.

    The rescaling check solves a droplet of radius R at K = 1 and compares it
    with a unit droplet at K = sqrt(R) and eps / R; the two are the same
    continuum problem, and the grids are scaled copies of each other.
    """
    if alpha != 0.5:
        raise ValueError("the transition probe runs at alpha = 1/2 exactly")
    K = sorted(float(k) for k in K_grid)
    if len(K) < 2 or K[-1] / K[0] < 100:
        raise ValueError("K grid must span at least two decades")
    spec = GeometrySpec("III", r_outer=r_outer, degree=degree)
    classes, energies = [], []
    for k in K:
        params = AnchoringParams(eps, alpha, k)
        try:
            rep, ds = solve_point(spec, params, n_r, n_theta, solver)
        except Exception as exc:
            log.warning("K=%g failed: %s", k, exc)
            classes.append("failed")
            energies.append(float("nan"))
            continue
        classes.append(ds.classify(degree))
        energies.append(rep.energy)
        if out_dir is not None:
            save_run(Path(out_dir) / f"K_{k:g}", rep, ds, {"K": k, "eps": eps, "alpha": alpha})
    K0, K1, monotone = _bracket(K, classes)
    rec = TransitionRecord(alpha, eps, K, classes, energies, K0, K1, monotone)
    if not monotone:
        rec.notes.append("classification is not monotone in K (finite-eps effect); review by hand")
    if rescale_radius:
        rec.rescaling = rescaling_check(rescale_radius, eps, degree, r_outer, n_r, n_theta, solver)
    return rec


def rescaling_check(R: float, eps: float, degree: int = 2, r_outer: float = 8.0,
                    n_r: int = 64, n_theta: int = 192, solver: dict | None = None) -> dict:
    """Radius-R droplet at lam = eps^(-1/2) against a unit droplet at K = sqrt(R)."""
    big = GeometrySpec("III", r_outer=R * r_outer, degree=degree, r_inner=R)
    unit = GeometrySpec("III", r_outer=r_outer, degree=degree)
    p_big = AnchoringParams(eps, 0.5, 1.0)
    p_unit = AnchoringParams(eps / R, 0.5, math.sqrt(R))
    rep_b, ds_b = solve_point(big, p_big, n_r, n_theta, solver)
    rep_u, ds_u = solve_point(unit, p_unit, n_r, n_theta, solver)
    cb, cu = ds_b.classify(degree), ds_u.classify(degree)
    return {"radius": R, "K_unit": math.sqrt(R), "eps_unit": eps / R,
            "classification_radius": cb, "classification_unit": cu, "identical": cb == cu,
            "energy_radius": rep_b.energy, "energy_unit": rep_u.energy}


# reports ----------------------------------------------------------------------

def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def slope_fit(rows: list[dict]) -> list[dict]:
    """Least-squares slope of the minimal energy against ln(1/eps) per (problem, degree, alpha, K, r_outer)."""
    groups: dict[tuple, list] = {}
    for r in rows:
        if r.get("status") != "ok":
            continue
        key = (r["problem"], int(r["degree"]), float(r["alpha"]), float(r["K"]), float(r["r_outer"]))
        groups.setdefault(key, []).append((float(r["eps"]), float(r["energy"])))
    out = []
    for (prob, deg, a, K, R), pts in sorted(groups.items()):
        if len(pts) < 2:
            continue
        x = np.log(1 / np.array([p[0] for p in pts]))
        y = np.array([p[1] for p in pts])
        slope, icpt = np.polyfit(x, y, 1)
        target = math.pi * min(2 * a, 1.0) * abs(deg)
        out.append({"problem": prob, "degree": deg, "alpha": a, "K": K, "r_outer": R, "n_eps": len(pts),
                    "slope": float(slope), "intercept": float(icpt), "target": target,
                    "relative_error": abs(slope - target) / target if target else float("nan")})
    return out


def renorm_comparison(rows: list[dict]) -> list[dict]:
    """Detected interior positions of degree-2 droplets against the renormalized-energy minimizers."""
    t_spec = 2 ** 0.25
    t_gen = (7 / 3) ** 0.25
    out = []
    for r in rows:
        if r.get("status") != "ok" or r["problem"] != "III" or int(r["degree"]) != 2:
            continue
        d = json.loads(r["defects"])
        pts = [complex(p["x"], p["y"]) for p in d["interior"]]
        if len(pts) != 2:
            continue
        # rotate so the pair is aligned with the vertical axis
        rot = np.exp(1j * (np.pi / 2 - np.angle(pts[0] - pts[1])))
        t_emp = float(np.mean([abs(p) for p in pts]))
        out.append({"index": r["index"], "eps": r["eps"], "alpha": r["alpha"], "K": r["K"],
                    "x1": (pts[0] * rot).real, "y1": (pts[0] * rot).imag,
                    "x2": (pts[1] * rot).real, "y2": (pts[1] * rot).imag, "t_emp": t_emp,
                    "t_specialized": t_spec, "t_general": t_gen,
                    "err_specialized": t_emp - t_spec, "err_general": t_emp - t_gen})
    return out


def report(run_dir) -> dict:
    """Summarize a sweep directory; writes phase_diagram.csv, defects.csv,
    slope_fit.csv, renorm_comparison.csv, report.json and report.txt."""
    run_dir = Path(run_dir)
    sweep = run_dir / "sweep.csv"
    missing = []
    if not sweep.exists():
        summary = {"status": "no runs", "run_dir": str(run_dir), "missing": ["sweep.csv"]}
        if run_dir.is_dir():
            write_json(run_dir / "report.json", summary)
            (run_dir / "report.txt").write_text(f"no runs found in {run_dir}\n")
        return summary
    rows = _read_csv(sweep)
    ok = [r for r in rows if r.get("status") == "ok"]
    failed = [r for r in rows if r.get("status") != "ok"]
    for r in ok:
        if not (run_dir / f"run_{int(r['index']):04d}" / "report.json").exists():
            missing.append(f"run_{int(r['index']):04d}/report.json")

    phase = [{"alpha": r["alpha"], "K": r["K"], "eps": r["eps"], "r_outer": r["r_outer"],
              "classification": r["classification"]} for r in ok]
    write_csv(run_dir / "phase_diagram.csv", phase, ["alpha", "K", "eps", "r_outer", "classification"])

    defects = []
    for r in ok:
        d = json.loads(r["defects"])
        for p in d["interior"]:
            defects.append({"index": r["index"], "kind": "interior", "x": p["x"], "y": p["y"],
                            "theta": math.atan2(p["y"], p["x"]), "degree": p["d"]})
        for b in d["boundary"]:
            defects.append({"index": r["index"], "kind": "boundary", "x": math.cos(b["theta"]),
                            "y": math.sin(b["theta"]), "theta": b["theta"], "degree": b["D"]})
    write_csv(run_dir / "defects.csv", defects, ["index", "kind", "x", "y", "theta", "degree"])

    slopes = slope_fit(rows)
    write_csv(run_dir / "slope_fit.csv", slopes,
              ["problem", "degree", "alpha", "K", "r_outer", "n_eps", "slope", "intercept", "target", "relative_error"])
    comp = renorm_comparison(rows)
    write_csv(run_dir / "renorm_comparison.csv", comp,
              ["index", "eps", "alpha", "K", "x1", "y1", "x2", "y2", "t_emp", "t_specialized",
               "t_general", "err_specialized", "err_general"])

    summary = {"status": "partial" if (failed or missing) else "complete", "run_dir": str(run_dir),
               "runs": len(rows), "ok": len(ok), "failed": [r["index"] for r in failed],
               "missing": missing, "slopes": slopes, "renorm_comparison": comp,
               "phase_diagram": phase}
    write_json(run_dir / "report.json", summary)
    lines = [f"runs: {len(rows)} ({len(ok)} ok, {len(failed)} failed)"]
    for p in phase:
        lines.append(f"alpha={p['alpha']} K={p['K']} eps={p['eps']}: {p['classification']}")
    for s in slopes:
        lines.append(f"slope alpha={s['alpha']} K={s['K']}: {s['slope']:.4f} (target {s['target']:.4f})")
    for c in comp:
        lines.append(f"run {c['index']}: t_emp={c['t_emp']:.4f} vs 2^(1/4)={c['t_specialized']:.4f}, "
                     f"(7/3)^(1/4)={c['t_general']:.4f}")
    if missing:
        lines.append("missing: " + ", ".join(missing))
    (run_dir / "report.txt").write_text("\n".join(lines) + "\n")
    return summary
