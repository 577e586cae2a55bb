from __future__ import annotations

import json

import pytest

from acas_sim.cli import EXIT_AUTH, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main


def test_plan_json(capsys):
    assert main(["plan", "--json"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["exhaustive"]["n_doppler_bins"] == 80
    assert out["exhaustive"]["required_cn0"] == pytest.approx(40.12, abs=0.05)
    assert out["handover"]["n_total"] == 7500
    assert out["handover"]["required_cn0"] == pytest.approx(37.66, abs=0.05)
    assert out["complexity_ratio"] == pytest.approx(3.2e6, rel=1e-3)


def test_plan_text(capsys):
    assert main(["plan", "--t-i", "0.008"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "exhaustive" in text and "handover" in text and "complexity ratio" in text


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["fly"]) == EXIT_USAGE
    assert main(["run", "nominal_harsh", "--level", "7"]) == EXIT_USAGE
    assert main(["run", "/nonexistent.yaml"]) == EXIT_USAGE
    assert main(["report", "/nonexistent_dir"]) == EXIT_RUNTIME
    assert main(["plan", "--overall-pfa", "2"]) == EXIT_RUNTIME
    capsys.readouterr()


def test_run_detect_report_roundtrip(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["run", "nominal_harsh", "--epochs", "3", "--out", str(out),
                 "--save-batch", "1"])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["epochs"] == 3 and summary["scenario"] == "nominal_harsh"
    assert (out / "batch_1.iq").exists()

    assert main(["report", str(out)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report == {k: v for k, v in summary.items() if k != "scenario"}

    assert main(["detect", str(out / "batch_1.iq"), "nominal_harsh", "--epoch", "1"]) == EXIT_OK
    det = json.loads(capsys.readouterr().out)
    assert det["detected"] and abs(det["range_offset"]) < 30.0


def test_detect_on_noise_exits_with_auth_code(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "nominal_harsh", "--epochs", "1", "--out", str(out),
                 "--save-batch", "0"]) == EXIT_OK
    capsys.readouterr()
    # A prediction far from the signal finds nothing.
    code = main(["detect", str(out / "batch_0.iq"), "nominal_harsh", "--offset", "2000"])
    assert code == EXIT_AUTH


def test_run_exceeding_the_budget_exits_3(tmp_path, capsys):
    scenario = tmp_path / "jam.yaml"
    scenario.write_text("seed: 3\nduration: 2\nauth_failure_budget: 0.0\n"
                        "channel:\n  cn0: 15.0\n")
    assert main(["run", str(scenario), "--out", str(tmp_path / "o")]) == EXIT_AUTH
    capsys.readouterr()
