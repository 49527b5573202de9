from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from paneitz import cli
from paneitz.config import load_config
from paneitz.errors import ConfigError
from paneitz.morse import find_critical_points

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _run(*args):
    return cli.main([str(a) for a in args])


def _json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_help_and_bad_usage():
    assert _run("--help") == cli.EXIT_OK
    assert _run() == cli.EXIT_CONFIG
    assert _run("plot") == cli.EXIT_CONFIG


def test_dimension_below_five_is_a_config_error(tmp_path):
    assert _run("solve", "--n", 4, "--out", tmp_path) == cli.EXIT_CONFIG


def test_unparsable_K_is_an_input_error(tmp_path):
    assert _run("solve", "--K", "1+*x2", "--out", tmp_path) == cli.EXIT_CONFIG
    manifests = list((tmp_path / "manifests").glob("manifest_solve_*.json"))
    assert len(manifests) == 1
    assert _json(manifests[0])["errors"][0]["error_type"] == "ConfigError"


@pytest.mark.slow
def test_solve_writes_reports(tmp_path):
    code = _run("solve", "--n", 5, "--K", "1", "--warm-lambda", 2, "--out", tmp_path)
    assert code == cli.EXIT_OK
    frame = pd.read_csv(tmp_path / "solution.csv")
    assert list(frame.columns) == ["theta", "u", "residual"]
    assert len(frame) == 201
    report = _json(tmp_path / "solve_report.json")
    assert report["n"] == 5
    assert report["solve"]["converged"] is True
    assert report["solve"]["positivity"] is True
    assert report["in_V_eta"] is True
    assert report["negative_part"]["u_minus_norm"] == 0.0
    assert set(report["constants"]) == {"S_n", "c_1", "c_2", "c3_estimate", "c3_reference"}
    manifest = _json(next((tmp_path / "manifests").glob("*.json")))
    assert manifest["stats"]["exit_code"] == 0
    assert {Path(a["path"]).name for a in manifest["artifacts"]} == {"solution.csv", "solve_report.json"}


@pytest.mark.slow
def test_reports_are_byte_identical_across_runs(tmp_path):
    for name in ("a", "b"):
        _run("solve", "--K", "1+0.05*x6", "--seed", 3, "--out", tmp_path / name)
    for report in ("solve_report.json", "solution.csv"):
        assert (tmp_path / "a" / report).read_bytes() == (tmp_path / "b" / report).read_bytes()


@pytest.mark.slow
def test_warm_start_cap_is_recorded(tmp_path):
    _run("solve", "--K", "1", "--warm-lambda", 500, "--out", tmp_path)
    assert _json(tmp_path / "solve_report.json")["warm_lambda"] == pytest.approx(20.1)


@pytest.mark.slow
def test_auto_targets_follow_the_index_window():
    cfg = load_config(CONFIGS / "perturb_synthetic.ini", environ={})
    K = cli._curvature(cfg)
    records = find_critical_points(K, seeds=cfg.seeds, seed=cfg.seed, l=cfg.l)
    targets = cli._select_targets(cfg, records, 6)
    assert len(targets) == 2
    assert all(t.index == 4 for t in targets)
    assert cli._select_targets(cfg, records, 4) == []


@pytest.mark.slow
def test_named_targets_must_exist():
    cfg = load_config(CONFIGS / "perturb_synthetic.ini", {"targets": "y4,y99"}, environ={})
    records = find_critical_points(cli._curvature(cfg), seeds=cfg.seeds, seed=cfg.seed, l=cfg.l)
    with pytest.raises(ConfigError):
        cli._select_targets(cfg, records, 6)


@pytest.mark.slow
def test_verify_on_the_height_function(tmp_path):
    assert _run("verify", "--out", tmp_path) == cli.EXIT_OK
    slopes = _json(tmp_path / "slopes.json")
    assert slopes["failed"] == []
    assert slopes["expansion"]["slope"] >= cli.SLOPE_MIN
    assert slopes["normal_form"]["status"] == "CHECKED"
    consts = _json(tmp_path / "constants.json")
    assert consts["constants_suite"]["factorization_identity"] is True
    frame = pd.read_csv(tmp_path / "expansion.csv")
    assert list(frame.columns) == ["lambda", "J_quad", "J_expansion", "abs_err"]


@pytest.mark.slow
def test_verify_with_constant_K_is_exact(tmp_path):
    assert _run("verify", "--K", "1", "--out", tmp_path) == cli.EXIT_OK
    slopes = _json(tmp_path / "slopes.json")
    assert slopes["expansion"]["status"] == "EXACT"
    assert slopes["gradient"]["status"] == "DEGENERATE"
    assert slopes["normal_form"]["status"] == "NOT_APPLICABLE"


@pytest.mark.slow
def test_morse_report_for_the_height_function(tmp_path):
    code = _run("morse", "--out", tmp_path)
    assessment = _json(tmp_path / "assumptions.json")["assumptions"]
    assert assessment["A0"]["status"] == "PASS"
    assert assessment["m"] == 5
    assert assessment["perturbative_criteria"]["status"] == "FAIL"
    both_fail = assessment["single_bubble_criteria"]["status"] == "FAIL"
    assert code == (cli.EXIT_CRITERION if both_fail else cli.EXIT_OK)


@pytest.mark.slow
def test_flow_ensemble(tmp_path):
    ini = tmp_path / "flow.ini"
    ini.write_text("[flow]\ntrajectories = 4\nlambda_max = 1e4\n", encoding="utf-8")
    code = _run("flow", "--config", ini, "--out", tmp_path / "out")
    summary = _json(tmp_path / "out" / "flow_summary.json")
    assert summary["count"] == 4
    assert summary["violations"] == []
    assert summary["mu"] == pytest.approx(0.5)
    assert len(list((tmp_path / "out" / "trajectories").glob("trajectory_*.csv"))) == 4
    assert code == cli.EXIT_OK
