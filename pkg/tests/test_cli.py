import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from click.testing import CliRunner

from tmflow import cli, runio

SCHEMA = json.loads(
    (Path(__file__).resolve().parents[1] / "docs" / "report.schema.json").read_text()
)


def validate(report):
    jsonschema.validate(report, SCHEMA)


@pytest.fixture
def runner():
    return CliRunner()


def torus_config(tmp_path, **flow):
    kw = dict(N=16, max_time=0.002, preset="wrap-perturbed")
    kw.update(flow)
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"flow": kw}))
    return p


def collar_config(tmp_path, **collar):
    kw = dict(ell0=0.1, T=0.01, X0=6.0, n_s=49, n_theta=32, ell_floor=0.098,
              preset="bubble", bubble_scale=0.5, bubble_radius=2.0,
              max_time=1.0, sample_every=8)
    kw.update(collar)
    p = tmp_path / "collar.json"
    p.write_text(json.dumps({"collar": kw}))
    return p


class TestTorusRun:
    def test_outputs_and_schema(self, runner, tmp_path):
        cfg = torus_config(tmp_path)
        out = tmp_path / "out"
        result = runner.invoke(cli.main, ["run", "--config", str(cfg), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert (out / "history.csv").exists()
        assert (out / "snap_000.bin").exists()
        report = runio.read_json_report(out / "report.json")
        validate(report)
        assert report["kind"] == "run"
        assert report["stop_reason"] == "timeout"

    def test_determinism_byte_identical(self, runner, tmp_path):
        cfg = torus_config(tmp_path)
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        for d in (d1, d2):
            result = runner.invoke(cli.main,
                                   ["run", "--config", str(cfg), "--out", str(d)])
            assert result.exit_code == 0
        assert (d1 / "history.csv").read_bytes() == (d2 / "history.csv").read_bytes()
        assert (d1 / "snap_000.bin").read_bytes() == (d2 / "snap_000.bin").read_bytes()
        assert (d1 / "report.json").read_bytes() == (d2 / "report.json").read_bytes()

    def test_unknown_key_exit_2(self, runner, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"flow": {"N": 16, "stepsize": 0.1}}))
        result = runner.invoke(cli.main,
                               ["run", "--config", str(p), "--out", str(tmp_path / "o")])
        assert result.exit_code == 2
        assert "unknown key" in result.output

    def test_violated_precondition_exit_2(self, runner, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"flow": {"N": 4}}))
        result = runner.invoke(cli.main,
                               ["run", "--config", str(p), "--out", str(tmp_path / "o")])
        assert result.exit_code == 2

    def test_malformed_json_exit_2(self, runner, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{ not json")
        result = runner.invoke(cli.main,
                               ["run", "--config", str(p), "--out", str(tmp_path / "o")])
        assert result.exit_code == 2


class TestCollarRun:
    def test_outputs_and_schema(self, runner, tmp_path):
        cfg = collar_config(tmp_path)
        out = tmp_path / "out"
        result = runner.invoke(cli.main,
                               ["run-collar", "--config", str(cfg), "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = runio.read_json_report(out / "report.json")
        validate(report)
        assert report["kind"] == "collar-run"
        assert report["stop_reason"] == "pinched"


class TestCollarTable:
    def test_identity_column(self, runner, tmp_path):
        out = tmp_path / "table.csv"
        result = runner.invoke(cli.main, [
            "collar-table", "--ell", "0.1,0.2", "--delta", "0.06,0.3",
            "--out", str(out),
        ])
        assert result.exit_code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "ell,delta,X,rho_min,rho_boundary,identity_residual"
        assert len(lines) == 5
        for line in lines[1:]:
            assert float(line.split(",")[-1]) <= 1e-12

    def test_bad_list_exit_2(self, runner):
        result = runner.invoke(cli.main,
                               ["collar-table", "--ell", "0.1,x", "--delta", "0.2"])
        assert result.exit_code == 2


class TestRicciCommand:
    def test_outputs_and_schema(self, runner, tmp_path):
        out = tmp_path / "ricci"
        cfgp = tmp_path / "r.json"
        cfgp.write_text(json.dumps({"grid": {"n_lat": 32, "n_lon": 16}}))
        result = runner.invoke(cli.main, [
            "ricci", "--punctures", "3", "--config", str(cfgp), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        report = runio.read_json_report(out / "report.json")
        validate(report)
        assert report["kind"] == "ricci"
        assert (out / "initial.bin").exists()
        assert (out / "history.csv").exists()

    def test_too_few_punctures_exit_2(self, runner, tmp_path):
        result = runner.invoke(cli.main, [
            "ricci", "--punctures", "2", "--out", str(tmp_path / "o"),
        ])
        assert result.exit_code == 2


class TestAnalyze:
    def test_collar_analysis(self, runner, tmp_path):
        cfg = collar_config(tmp_path, n_theta=64, n_s=97)
        run_dir = tmp_path / "run"
        result = runner.invoke(cli.main,
                               ["run-collar", "--config", str(cfg), "--out", str(run_dir)])
        assert result.exit_code == 0, result.output
        out = tmp_path / "analysis"
        result = runner.invoke(cli.main, [
            "analyze", "--history", str(run_dir / "history.csv"),
            "--snapshots", str(run_dir), "--collar",
            "--singular-time", "0.01", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        report = runio.read_json_report(out / "analysis.json")
        validate(report)
        assert report["kind"] == "analysis"
        assert report["ledger"]["balanced"]
        assert (out / "oscillation.csv").exists()

    def test_torus_analysis_smooth_run(self, runner, tmp_path):
        cfg = torus_config(tmp_path, N=32)
        run_dir = tmp_path / "run"
        result = runner.invoke(cli.main,
                               ["run", "--config", str(cfg), "--out", str(run_dir)])
        assert result.exit_code == 0
        out = tmp_path / "analysis"
        result = runner.invoke(cli.main, [
            "analyze", "--history", str(run_dir / "history.csv"),
            "--snapshots", str(run_dir), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        report = runio.read_json_report(out / "analysis.json")
        validate(report)
        assert report["bubble_set"] == []  # no concentration on a smooth run
        assert report["ledger"]["balanced"]

    def test_missing_snapshots_exit_2(self, runner, tmp_path):
        cfg = torus_config(tmp_path)
        run_dir = tmp_path / "run"
        runner.invoke(cli.main, ["run", "--config", str(cfg), "--out", str(run_dir)])
        empty = tmp_path / "empty"
        empty.mkdir()
        result = runner.invoke(cli.main, [
            "analyze", "--history", str(run_dir / "history.csv"),
            "--snapshots", str(empty), "--out", str(tmp_path / "o"),
        ])
        assert result.exit_code == 2


class TestPipeline:
    def test_collar_scenario(self, runner, tmp_path):
        config = {
            "scenario": "collar",
            "collar": dict(ell0=0.1, T=0.01, X0=6.0, n_s=97, n_theta=64,
                           ell_floor=0.098, preset="bubble", bubble_scale=0.5,
                           bubble_radius=2.0, max_time=1.0, sample_every=8),
            "degeneration": {"genus": 2, "k": 1},
            "continuation": {"genus": 0, "punctures": 3,
                             "grid": {"n_lat": 32, "n_lon": 16}},
        }
        p = tmp_path / "pipe.json"
        p.write_text(json.dumps(config))
        out = tmp_path / "out"
        result = runner.invoke(cli.main,
                               ["pipeline", "--config", str(p), "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = runio.read_json_report(out / "pipeline.json")
        validate(report)
        types = [e["type"] for e in report["events"]]
        assert "collar-pinch" in types
        assert "extinction" in types
        times = [e["time"] for e in report["events"]]
        assert times == sorted(times)
        assert len(set(times)) == len(times)  # strict ordering after tie-break
        assert report["reconstruction"]["punctures"] == 2

    def test_ricci_scenario(self, runner, tmp_path):
        p = tmp_path / "pipe.json"
        p.write_text(json.dumps({
            "scenario": "ricci",
            "continuation": {"genus": 0, "punctures": 3,
                             "grid": {"n_lat": 32, "n_lon": 16}},
        }))
        out = tmp_path / "out"
        result = runner.invoke(cli.main,
                               ["pipeline", "--config", str(p), "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = runio.read_json_report(out / "pipeline.json")
        validate(report)
        assert report["events"][0]["type"] == "extinction"

    def test_unknown_scenario_exit_2(self, runner, tmp_path):
        p = tmp_path / "pipe.json"
        p.write_text(json.dumps({"scenario": "plane"}))
        result = runner.invoke(cli.main,
                               ["pipeline", "--config", str(p), "--out", str(tmp_path / "o")])
        assert result.exit_code == 2
