#!/usr/bin/env python3
"""
Tests for experiment statistics, presets and the checkpointing runner.
"""

import math
import os
import sys

import pandas as pd
import pytest
from scipy import stats

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from agentsim.core.errors import ConfigError
from agentsim.experiments import runner
from agentsim.experiments.presets import PRESETS, cell_config, cell_workload, get_preset, run_cell
from agentsim.experiments.runner import checkpoint_path, run_preset
from agentsim.experiments.stats import (
    compare_cells,
    remove_outliers_iqr,
    significance_stars,
    summarize,
    welch_ttest,
)
from agentsim.settings import FairnessPolicy, Strategy
from agentsim.sim.workload import WorkloadSpec


# ---------------------------------------------------------------- stats

def test_welch_matches_scipy():
    a = [10.2, 11.1, 9.8, 10.5, 10.9]
    b = [12.0, 12.4, 11.1, 13.2, 12.8, 12.1]

    t_stat, p_value = welch_ttest(a, b)
    expected = stats.ttest_ind(a, b, equal_var=False)

    assert t_stat == pytest.approx(expected.statistic)
    assert p_value == pytest.approx(expected.pvalue)


def test_welch_degenerate_inputs():
    assert all(math.isnan(x) for x in welch_ttest([1.0], [2.0, 3.0]))
    assert all(math.isnan(x) for x in welch_ttest([1.0, 1.0], [1.0, 1.0]))


@pytest.mark.parametrize("p_value,stars", [(0.2, ""), (0.04, "*"), (0.005, "**"), (0.0001, "***"),
                                           (float("nan"), ""), (None, "")])
def test_significance_stars(p_value, stars):
    assert significance_stars(p_value) == stars


def test_iqr_drops_far_outlier():
    kept, removed = remove_outliers_iqr([1, 2, 3, 4, 100])

    assert kept == [1.0, 2.0, 3.0, 4.0]
    assert removed == 1


def test_iqr_needs_four_values():
    assert remove_outliers_iqr([1, 2, 100]) == ([1.0, 2.0, 100.0], 0)


def test_summarize():
    out = summarize([1, 2, 3, 4, 100])

    assert out == {"mean": 2.5, "std": pytest.approx(1.2909944), "n": 4, "outliers": 1}


def test_compare_cells_against_baseline():
    frame = pd.DataFrame({
        "cell": ["full"] * 4 + ["w/o ttl"] * 4,
        "tct_mean_ms": [100.0, 102.0, 98.0, 101.0, 120.0, 125.0, 118.0, 122.0],
    })

    out = compare_cells(frame, "tct_mean_ms", "full")

    assert out["cell"].tolist() == ["w/o ttl"]
    row = out.iloc[0]
    assert row["diff_pct"] == pytest.approx(100.0 * (121.25 - 100.25) / 100.25)
    assert row["p"] < 0.001 and row["stars"] == "***"


# ---------------------------------------------------------------- presets

def test_unknown_preset():
    with pytest.raises(ConfigError):
        get_preset("nope")


def test_every_preset_has_its_baseline():
    for preset in PRESETS.values():
        if preset.baseline is not None and preset.compare_by == "cell":
            assert preset.cell(preset.baseline)


def test_tool_variance_sweep_override():
    preset = get_preset("tool-variance", cvs=[0.5, 2.0])

    assert [c.name for c in preset.cells] == ["cv=0.5", "cv=2"]
    assert preset.baseline == "cv=0.5"


def test_cell_configs_apply_overrides():
    spec = WorkloadSpec.for_kind("multitenant", horizon_ms=60_000)
    fairness = get_preset("fairness")
    strategy = get_preset("strategy")

    fcfs = cell_config(fairness.cell("fcfs"), spec, 60_000, seed=3)
    bfs = cell_config(strategy.cell("bfs"), spec, 60_000, seed=3)

    assert fcfs.policy.fairness == FairnessPolicy.FCFS
    assert fcfs.cluster.lanes_per_worker == 4
    assert fcfs.seed == 3 and fcfs.warmup_ms == 15_000
    assert bfs.policy.strategy == Strategy.BFS and not bfs.policy.stealing
    assert bfs.cluster.kv_capacity_gb == 16.0 and bfs.max_context_tokens == 8192


def test_strategy_cells_run_a_batch():
    cell = get_preset("strategy").cell("hybrid")

    spec = cell_workload(cell, 60_000)
    cfg = cell_config(cell, spec, 60_000, seed=0)

    assert spec.batch and spec.n_tasks == 64
    assert cfg.warmup_ms == 0.0
    assert cfg.tools["web_api"].latency.mean() == pytest.approx(30_000.0)


@pytest.mark.slow
def test_fairness_preset_favors_tight_slo_tenants():
    """The multi-tenant cells are oversubscribed, so dispatch order shows in SLO attainment."""
    preset = get_preset("fairness")

    for seed in (0, 1):
        afs, fcfs = (run_cell(preset, preset.cell(name), seed, horizon_ms=20 * 60 * 1_000)[0]
                     for name in ("afs", "fcfs"))

        assert afs["slo_light"] is not None and fcfs["slo_light"] is not None
        assert afs["slo_light"] >= fcfs["slo_light"]
        assert afs["tct_mean_ms"] != fcfs["tct_mean_ms"]


# ---------------------------------------------------------------- runner

def test_pattern_preset_checkpoints_and_resumes(tmp_path, monkeypatch):
    preset = get_preset("pattern")

    first = run_preset(preset, seeds=2, out_dir=tmp_path)

    assert len(first.raw) == 6
    for cell in preset.cells:
        for seed in (0, 1):
            assert checkpoint_path(tmp_path, "pattern", cell.name, seed).exists()
    assert (tmp_path / "pattern" / "summary.csv").exists()
    assert (tmp_path / "pattern" / "meta.json").exists()
    assert set(first.comparisons["cell"]) == {"theta_conf=0.5", "theta_conf=0.9"}

    def fail(*args, **kwargs):
        raise AssertionError("checkpoint was not reused")

    monkeypatch.setattr(runner, "run_cell", fail)
    second = run_preset(preset, seeds=2, out_dir=tmp_path)

    pd.testing.assert_frame_equal(first.raw, second.raw)


def test_runner_without_output_dir_writes_nothing(tmp_path, monkeypatch):
    calls = []

    def fake_run_cell(preset, cell, seed, horizon_ms=None, scale=1.0):
        calls.append((cell.name, seed))
        return [{"accuracy": 0.9 + 0.01 * seed, "preset": preset.name, "cell": cell.name, "seed": seed}]

    monkeypatch.setattr(runner, "run_cell", fake_run_cell)
    monkeypatch.chdir(tmp_path)

    result = run_preset(get_preset("pattern"), seeds=3, seed_base=10)

    assert sorted(calls)[:3] == [("theta_conf=0.5", 10), ("theta_conf=0.5", 11), ("theta_conf=0.5", 12)]
    assert list(tmp_path.iterdir()) == []
    assert set(result.summary["metric"]) == {"accuracy"}


def test_runner_rejects_zero_seeds():
    with pytest.raises(ValueError):
        run_preset(get_preset("pattern"), seeds=0)


def test_ratio_preset_compares_prefix_sharing_pairwise(monkeypatch):
    costs = {"wa-lru": 1.2, "prefix-lru": 1.5, "lru": 2.0, "evict-all": 3.0}

    def fake_run_cell(preset, cell, seed, horizon_ms=None, scale=1.0):
        return [{"policy": p, "ratio": r + 0.05 * seed, "preset": preset.name, "cell": cell.name, "seed": seed}
                for p, r in costs.items()]

    monkeypatch.setattr(runner, "run_cell", fake_run_cell)

    result = run_preset(get_preset("ratio"), seeds=3)
    cmp = result.comparisons

    pairs = cmp[(cmp["cell"] == "prefix-lru") & (cmp["baseline"] == "lru")]
    assert sorted(pairs["workload"]) == ["swebench", "webarena"]
    assert all(d == pytest.approx(-25.0, abs=1.0) for d in pairs["diff_pct"])
    assert len(cmp[(cmp["cell"] == "wa-lru") & (cmp["baseline"] == "prefix-lru")]) == 2
    assert len(cmp[cmp["baseline"] == "wa-lru"]) == 6
