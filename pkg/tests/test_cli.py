#!/usr/bin/env python3
"""
Tests for the agentsim command line: outputs, exit codes and error reporting.
"""

import json
import os
import sys

import pandas as pd
import pytest
from click.testing import CliRunner

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from agentsim.cli import EXIT_CONFIG, EXIT_RUNTIME, cli


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def workload(runner, tmp_path):
    path = tmp_path / "triage.ndjson"
    result = runner.invoke(cli, ["generate", "--kind", "triage", "--tasks", "6", "--seed", "3", "-o", str(path)])
    assert result.exit_code == 0, result.output
    return path


def test_version(runner):
    result = runner.invoke(cli, ["--version"])

    assert result.exit_code == 0
    assert "agentsim" in result.output


def test_generate_writes_workload_and_access_trace(runner, tmp_path):
    out = tmp_path / "w.ndjson"
    trace = tmp_path / "access.ndjson"

    result = runner.invoke(cli, ["generate", "-k", "webarena", "--tasks", "4", "-o", str(out),
                                 "--access-trace", str(trace)])

    assert result.exit_code == 0, result.output
    assert "✅ Generated 4 tasks" in result.output
    header = json.loads(out.read_text().splitlines()[0])
    assert header["kind"] == "workload" and header["seed"] == 0 and header["version"]
    assert trace.exists()


def test_run_writes_outputs_with_provenance(runner, workload, tmp_path):
    out = tmp_path / "run"

    result = runner.invoke(cli, ["run", str(workload), "--audit", "--dump-afs", "-o", str(out),
                                 "--policy", "lru", "--seed", "5"])

    assert result.exit_code == 0, result.output
    assert "Event log audit passed" in result.output
    for name in ("events.ndjson", "metrics.json", "metrics.csv", "tasks.csv", "afs.csv"):
        assert (out / name).exists(), name
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["version"]
    assert doc["config"]["policy"]["eviction"] == "lru"
    assert doc["config"]["seed"] == 5
    assert doc["metrics"]["tasks_total"] == 6
    summary = pd.read_csv(out / "metrics.csv")
    assert summary.loc[0, "seed"] == 5 and "version" in summary.columns


def test_run_json_tasks_with_polars(runner, workload, tmp_path):
    out = tmp_path / "run"

    result = runner.invoke(cli, ["run", str(workload), "-o", str(out), "-f", "json", "--polars",
                                 "--ablate", "ttl", "--ablate", "prefetch"])

    assert result.exit_code == 0, result.output
    assert (out / "tasks.json").exists()
    config = json.loads((out / "metrics.json").read_text())["config"]
    assert config["policy"]["ttl"] is False and config["policy"]["prefetch"] is False


def test_run_bad_config_exits_with_config_code(runner, workload, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"cluster": {"workers": 0}}))

    result = runner.invoke(cli, ["run", str(workload), "--config", str(bad), "-o", str(tmp_path / "run")])

    assert result.exit_code == EXIT_CONFIG
    assert "cluster.workers" in result.output


def test_run_unknown_config_key(runner, workload, tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[policy]\nevicton = 'lru'\n")

    result = runner.invoke(cli, ["run", str(workload), "--config", str(bad)])

    assert result.exit_code == EXIT_CONFIG


def test_run_missing_workload_is_usage_error(runner, tmp_path):
    result = runner.invoke(cli, ["run", str(tmp_path / "missing.ndjson")])

    assert result.exit_code == 2


def test_run_bad_choice_is_usage_error(runner, workload):
    result = runner.invoke(cli, ["run", str(workload), "--policy", "fifo"])

    assert result.exit_code == 2


def test_run_corrupt_workload_is_runtime_error(runner, tmp_path):
    path = tmp_path / "broken.ndjson"
    path.write_text("{not json\n")

    result = runner.invoke(cli, ["run", str(path), "-o", str(tmp_path / "run")])

    assert result.exit_code == EXIT_RUNTIME
    assert "❌ Error" in result.output


def test_ratio(runner, workload, tmp_path):
    out = tmp_path / "ratio.csv"

    result = runner.invoke(cli, ["ratio", str(workload), "-o", str(out)])

    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert frame["policy"].tolist() == ["wa-lru", "lru", "prefix-lru", "evict-all"]
    assert (frame["opt_cost"] == frame["opt_cost"].iloc[0]).all()


def test_aeg_reports_accuracy(runner, tmp_path):
    out = tmp_path / "aeg.json"

    result = runner.invoke(cli, ["aeg", "--traces", "200", "-o", str(out)])

    assert result.exit_code == 0, result.output
    assert "held-out accuracy" in result.output
    doc = json.loads(out.read_text())
    assert 0.0 <= doc["accuracy"] <= 1.0
    assert doc["true"]


def test_aeg_bad_holdout(runner):
    result = runner.invoke(cli, ["aeg", "--holdout", "1.5"])

    assert result.exit_code == 2


def test_aeg_too_few_traces(runner):
    result = runner.invoke(cli, ["aeg", "--traces", "10"])

    assert result.exit_code == EXIT_RUNTIME


def test_presets_lists_every_preset(runner):
    result = runner.invoke(cli, ["presets"])

    assert result.exit_code == 0
    for name in ("e2e", "ablation", "ratio", "fairness", "strategy", "sensitivity", "tool-variance", "pattern"):
        assert name in result.output


def test_experiment_pattern(runner, tmp_path):
    result = runner.invoke(cli, ["experiment", "pattern", "--seeds", "1", "-o", str(tmp_path)])

    assert result.exit_code == 0, result.output
    assert (tmp_path / "pattern" / "raw.csv").exists()
    assert (tmp_path / "checkpoints" / "pattern").is_dir()


def test_experiment_bad_cv_list(runner, tmp_path):
    result = runner.invoke(cli, ["experiment", "tool-variance", "--cv", "a,b", "-o", str(tmp_path)])

    assert result.exit_code == 2
