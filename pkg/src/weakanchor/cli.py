"""Command line entry point: solve | sweep | transition | renorm-min | greens-check | report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, renorm
from .energy import AnchoringParams


def _cmd_solve(args) -> int:
    cfg = harness.ExperimentConfig.from_json(args.config)
    points = cfg.points()
    if len(points) > 1:
        logging.warning("config has %d points; solving the first (use 'sweep' for all)", len(points))
    point = points[0]
    spec = cfg.spec_for(point)
    params = AnchoringParams(point["eps"], point["alpha"], point["K"])
    rep, ds = harness.solve_point(spec, params, int(cfg.geometry["n_r"]), int(cfg.geometry["n_theta"]),
                                  cfg.solver, cfg.geometry.get("radial_stretch"))
    payload = harness.save_run(args.out, rep, ds, {"point": point, "geometry": spec.to_dict(),
                                                   "params": params.to_dict()})
    print(json.dumps({k: payload[k] for k in ("converged", "iters", "energy", "defects", "phi_star")}, indent=2))
    return 0 if rep.converged else 1


def _cmd_sweep(args) -> int:
    cfg = harness.ExperimentConfig.from_json(args.config)
    rows = harness.run_sweep(cfg, args.out, workers=args.workers)
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} points, {len(failed)} failed; results in {Path(args.out or cfg.outputs) / 'sweep.csv'}")
    return 0


def _cmd_transition(args) -> int:
    solver = json.loads(args.solver) if args.solver else None
    rec = harness.transition_probe(args.K, eps=args.eps, alpha=args.alpha, degree=args.degree,
                                   r_outer=args.r_outer, n_r=args.n_r, n_theta=args.n_theta,
                                   solver=solver, rescale_radius=args.rescale_radius or None,
                                   out_dir=args.out)
    out = rec.to_dict()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        harness.write_json(Path(args.out) / "transition.json", out)
    print(json.dumps(out, indent=2, default=harness._json_default))
    return 0


def _cmd_renorm_min(args) -> int:
    rep = renorm.minimize_w(args.degree, args.mode, variant=args.variant, offset=args.offset)
    out = rep.to_dict()
    if args.out:
        harness.write_json(args.out, out)
    print(json.dumps(out, indent=2, default=harness._json_default))
    return 0 if rep.converged else 1


def _cmd_greens_check(args) -> int:
    res = renorm.greens_check(args.grid)
    print(json.dumps(res, indent=2))
    return 0 if res["flux_ok"] and res["decay_ok"] and res["harmonic_ok"] else 1


def _cmd_report(args) -> int:
    summary = harness.report(args.run_dir)
    txt = Path(args.run_dir) / "report.txt"
    print(txt.read_text() if txt.exists() else json.dumps(summary, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="weakanchor", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("sweep", help="run every point of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, help="defaults to GL_ANCHOR_THREADS or 1")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("transition", help="K scan at alpha = 1/2")
    p.add_argument("--K", type=float, nargs="+", default=[1e-2, 1e-1, 1.0, 10.0, 100.0])
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--r-outer", type=float, default=8.0)
    p.add_argument("--n-r", type=int, default=64)
    p.add_argument("--n-theta", type=int, default=192)
    p.add_argument("--rescale-radius", type=float, default=4.0, help="0 disables the rescaling check")
    p.add_argument("--solver", help="JSON object of solver options")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_transition)

    p = sub.add_parser("renorm-min", help="minimize a renormalized energy")
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--mode", choices=["interior", "boundary"], default="interior")
    p.add_argument("--variant", choices=["general", "specialized"], default="general")
    p.add_argument("--offset", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_renorm_min)

    p = sub.add_parser("greens-check", help="Green's function checks")
    p.add_argument("--grid", type=int, default=256)
    p.set_defaults(func=_cmd_greens_check)

    p = sub.add_parser("report", help="summarize a sweep directory")
    p.add_argument("run_dir")
    p.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
