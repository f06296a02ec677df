import json
import math

import pytest

from weakanchor import harness
from weakanchor.cli import build_parser, main


def tiny_config(tmp_path, **over):
    d = {
        "geometry": {"problem": "III", "degree": 1, "r_outer": 4.0, "n_r": 16, "n_theta": 48},
        "anchoring": {"eps": [0.2, 0.1], "alpha": [0.8], "K": [1.0]},
        "solver": {"max_iters": 3000},
        "outputs": str(tmp_path / "runs"),
    }
    d.update(over)
    return d


def test_config_validation(tmp_path):
    d = tiny_config(tmp_path)
    cfg = harness.ExperimentConfig.from_dict(d)
    assert [p["eps"] for p in cfg.points()] == [0.2, 0.1]
    assert harness.ExperimentConfig.from_dict(cfg.to_dict()).points() == cfg.points()
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_dict(tiny_config(tmp_path, anchoring={"eps": [], "alpha": [0.5]}))
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_dict(tiny_config(tmp_path, anchoring={"eps": [0.1, 0.1], "alpha": [0.5]}))
    bad = tiny_config(tmp_path)
    del bad["geometry"]["n_r"]
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_dict(bad)
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_dict(tiny_config(tmp_path, anchoring={"eps": [-0.1], "alpha": [0.5]}))


def test_points_order(tmp_path):
    d = tiny_config(tmp_path, anchoring={"eps": [0.2, 0.1], "alpha": [0.25, 0.8], "K": [1.0, 2.0]})
    pts = harness.ExperimentConfig.from_dict(d).points()
    assert len(pts) == 8
    assert [p["index"] for p in pts] == list(range(8))
    keys = [(p["alpha"], p["K"], p["eps"]) for p in pts]
    assert keys[:2] == [(0.25, 1.0, 0.2), (0.25, 1.0, 0.1)]
    assert keys[-1] == (0.8, 2.0, 0.1)


def test_bracket_logic():
    K = [0.01, 0.1, 1.0, 10.0]
    K0, K1, mono = harness._bracket(K, ["boundary", "boundary", "mixed", "interior"])
    assert (K0, K1, mono) == (0.1, 10.0, True)
    K0, K1, mono = harness._bracket(K, ["interior", "boundary", "boundary", "interior"])
    assert not mono
    rec = harness.TransitionRecord(0.5, 0.05, K, ["boundary"] * 4, [1.0] * 4, 10.0, None, True)
    assert rec.bracket_ok and rec.to_dict()["bracket_ok"]
    with pytest.raises(ValueError):
        harness.transition_probe([1.0, 10.0])
    with pytest.raises(ValueError):
        harness.transition_probe([0.01, 100.0], alpha=0.4)


def test_empty_report(tmp_path):
    summary = harness.report(tmp_path)
    assert summary["status"] == "no runs"
    assert (tmp_path / "report.txt").exists()


def test_sweep_is_deterministic_and_reportable(tmp_path):
    cfg = harness.ExperimentConfig.from_dict(tiny_config(tmp_path))
    rows = harness.run_sweep(cfg, tmp_path / "a", workers=1)
    assert all(r["status"] == "ok" for r in rows)
    assert all(r["max_abs_u"] <= 1 + 1e-8 for r in rows)
    first = (tmp_path / "a" / "sweep.csv").read_text()
    harness.run_sweep(cfg, tmp_path / "b", workers=2)
    assert (tmp_path / "b" / "sweep.csv").read_text() == first
    assert (tmp_path / "a" / "run_0000" / "field.csv").exists()
    summary = harness.report(tmp_path / "a")
    assert summary["status"] == "complete"
    assert len(summary["slopes"]) == 1
    for name in ("phase_diagram.csv", "defects.csv", "slope_fit.csv", "renorm_comparison.csv", "report.json"):
        assert (tmp_path / "a" / name).exists()


def test_failed_point_is_recorded(tmp_path):
    cfg = harness.ExperimentConfig.from_dict(tiny_config(tmp_path, anchoring={"eps": [0.1], "alpha": [0.8]}))
    cfg.geometry["n_theta"] = 2       # too coarse for a grid
    row = harness.run_point(cfg, cfg.points()[0])
    assert row["status"] == "failed" and row["error"]


def test_slope_fit_recovers_line():
    rows = [{"status": "ok", "problem": "III", "degree": 2, "alpha": 0.8, "K": 1.0, "r_outer": 8.0,
             "eps": e, "energy": 3.0 + 2 * 3.14159 * math.log(1 / e)} for e in (0.1, 0.05, 0.025)]
    fit = harness.slope_fit(rows)[0]
    assert fit["slope"] == pytest.approx(2 * 3.14159)
    assert fit["relative_error"] < 1e-4


def test_cli_parsing(tmp_path, capsys):
    ap = build_parser()
    args = ap.parse_args(["transition", "--K", "0.01", "1", "--eps", "0.1"])
    assert args.K == [0.01, 1.0] and args.eps == 0.1 and args.alpha == 0.5
    args = ap.parse_args(["renorm-min", "--degree", "2", "--mode", "boundary"])
    assert args.mode == "boundary"
    with pytest.raises(SystemExit):
        ap.parse_args(["renorm-min"])
    assert main(["report", str(tmp_path)]) == 0
    assert "no runs" in capsys.readouterr().out


def test_cli_renorm_min(tmp_path, capsys):
    out = tmp_path / "w.json"
    assert main(["renorm-min", "--degree", "2", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["converged"]
