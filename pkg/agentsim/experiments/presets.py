"""presets.py : Experiment presets and the per-seed job each cell runs.

A preset is a named grid of cells; every cell runs once per seed. Jobs are plain
module-level functions of picklable arguments so joblib can ship them to workers.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from agentsim import config
from agentsim.aeg.builder import edge_set
from agentsim.aeg.inference import PatternModel, infer_pattern, prediction_accuracy
from agentsim.cache.oracle import build_access_trace, compare_policies, peak_working_set
from agentsim.core.errors import ConfigError
from agentsim.fairness.slo import fairness_deviation
from agentsim.settings import SimConfig, apply_ablation, apply_strategy, config_from_dict
from agentsim.sim.tools import tools_with_cv
from agentsim.sim.workload import (
    TOOL_TEMPLATES,
    WorkloadKind,
    WorkloadSpec,
    generate_workload,
    lanes_for_load,
    tool_traces,
)

LOG = logging.getLogger(__name__)


class JobKind(str, Enum):
    SIM = "sim"  # full simulation, one metrics row
    RATIO = "ratio"  # offline replay, one row per eviction policy
    INFERENCE = "inference"  # pattern inference against a known template


@dataclass(frozen=True)
class Cell:
    """One grid point of a preset."""

    name: str
    workload: str = WorkloadKind.SWEBENCH.value
    overrides: Mapping[str, Any] = field(default_factory=dict)
    ablate: Optional[str] = None
    strategy: Optional[str] = None
    rate_scale: float = config.CONTENDED_RATE_SCALE
    tool_cv: Optional[float] = None
    tool_mean_ms: float = config.TOOL_VARIANCE_MEAN_MS
    batch_tasks: Optional[int] = None  # fixed batch at t=0 instead of Poisson arrivals
    target_load: Optional[float] = None  # size the cluster for this offered load
    theta_conf: float = config.THETA_CONF


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    description: str
    job: JobKind
    cells: Tuple[Cell, ...]
    compare_metric: str = "tct_mean_ms"
    compare_by: str = "cell"
    baseline: Optional[str] = None
    pairs: Tuple[Tuple[str, str], ...] = ()  # extra (candidate, baseline) comparisons
    record_afs: bool = False
    horizon_ms: float = config.EXPERIMENT_HORIZON_MS

    def cell(self, name: str) -> Cell:
        for c in self.cells:
            if c.name == name:
                return c
        raise KeyError(name)


FULL_STACK: Dict[str, Any] = {}
REQUEST_LEVEL = {"policy": {"eviction": "lru", "stealing": False, "fairness": "fcfs", "ttl": False,
                            "prefetch": False, "aeg_mode": "none"}}
STRATEGY_CLUSTER = {"cluster": {"kv_capacity_gb": config.STRATEGY_KV_CAPACITY_GB},
                    "max_context_tokens": config.STRATEGY_MAX_CONTEXT_TOKENS}

SENSITIVITY_RANGES = {
    "alpha": ("policy", "weights", "alpha", (0.2, 0.4)),
    "beta": ("policy", "weights", "beta", (0.4, 0.6)),
    "gamma": ("policy", "weights", "gamma", (0.1, 0.3)),
    "theta": ("policy", None, "theta", (0.6, 0.95)),
    "low": ("ttl", None, "low", (0.6, 0.8)),
    "high": ("ttl", None, "high", (0.85, 0.95)),
    "t_idle": ("steal", None, "t_idle_ms", (50.0, 200.0)),
    "r_max": ("steal", None, "r_max", (1.5, 3.0)),
    "ttl_max": ("ttl", None, "ttl_max_ms", (120_000.0, 600_000.0)),
    "theta_conf": ("policy", None, "theta_conf", (0.5, 0.9)),
}

_DEFAULT_WEIGHTS = {"alpha": config.ALPHA, "beta": config.BETA, "gamma": config.GAMMA}


def _sensitivity_cells() -> Tuple[Cell, ...]:
    cells = [Cell("default")]
    for label, (section, sub, key, values) in SENSITIVITY_RANGES.items():
        for v in values:
            if sub == "weights":
                override = {section: {sub: dict(_DEFAULT_WEIGHTS, **{key: v})}}
            else:
                override = {section: {key: v}}
            cells.append(Cell(f"{label}={v:g}", overrides=override))
    return tuple(cells)


def _tool_variance_cells(cvs: Sequence[float] = config.TOOL_VARIANCE_CVS) -> Tuple[Cell, ...]:
    return tuple(Cell(f"cv={cv:g}", tool_cv=cv) for cv in cvs)


PRESETS: Dict[str, ExperimentPreset] = {p.name: p for p in (
    ExperimentPreset(
        "e2e", "Full policy stack against a request-level baseline on both single-tenant workloads",
        JobKind.SIM,
        (Cell("swebench-full", overrides=FULL_STACK), Cell("swebench-baseline", overrides=REQUEST_LEVEL),
         Cell("webarena-full", "webarena", overrides=FULL_STACK),
         Cell("webarena-baseline", "webarena", overrides=REQUEST_LEVEL)),
        baseline="swebench-full"),
    ExperimentPreset(
        "ablation", "Remove one component at a time",
        JobKind.SIM,
        (Cell("full"),) + tuple(Cell(f"w/o {c}", ablate=c) for c in
                                ("session-affinity", "eviction", "ttl", "prefetch", "stealing", "afs")),
        baseline="full"),
    ExperimentPreset(
        "ratio", "Offline replay cost of each eviction policy relative to Belady",
        JobKind.RATIO, (Cell("swebench"), Cell("webarena", "webarena")),
        compare_metric="ratio", compare_by="policy", baseline="wa-lru",
        pairs=(("prefix-lru", "lru"), ("wa-lru", "prefix-lru"))),
    ExperimentPreset(
        "fairness", "Multi-tenant SLO attainment under AFS, FCFS and uniform dispatch",
        JobKind.SIM,
        tuple(Cell(f, "multitenant", overrides={"policy": {"fairness": f}},
                   rate_scale=config.FAIRNESS_RATE_SCALE, target_load=config.FAIRNESS_TARGET_LOAD)
              for f in ("afs", "fcfs", "uniform")),
        compare_metric="slo_light", baseline="afs", record_afs=True, horizon_ms=30 * 60 * 1_000),
    ExperimentPreset(
        "strategy", "Hybrid against breadth-first and depth-first scheduling",
        JobKind.SIM, tuple(Cell(s, strategy=s, overrides=STRATEGY_CLUSTER, tool_cv=1.0,
                                tool_mean_ms=config.STRATEGY_TOOL_MEAN_MS, batch_tasks=config.STRATEGY_BATCH_TASKS)
                           for s in ("hybrid", "bfs", "dfs")),
        compare_metric="throughput_per_min", baseline="hybrid", horizon_ms=2 * 60 * 60 * 1_000),
    ExperimentPreset(
        "sensitivity", "One parameter at a time over its tested range",
        JobKind.SIM, _sensitivity_cells(), baseline="default"),
    ExperimentPreset(
        "tool-variance", "Tool latency coefficient of variation at a fixed mean",
        JobKind.SIM, _tool_variance_cells(), compare_metric="ttl_coverage", baseline="cv=1"),
    ExperimentPreset(
        "pattern", "Pattern inference from completed traces of a known agent",
        JobKind.INFERENCE,
        tuple(Cell(f"theta_conf={t:g}", WorkloadKind.TRIAGE.value, theta_conf=t) for t in (0.5, 0.7, 0.9)),
        compare_metric="accuracy", baseline="theta_conf=0.7"),
)}


def get_preset(name: str, cvs: Optional[Sequence[float]] = None) -> ExperimentPreset:
    """Look up a preset; ``cvs`` replaces the tool-variance sweep."""
    if name not in PRESETS:
        raise ConfigError([("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")])
    preset = PRESETS[name]
    if cvs and name == "tool-variance":
        cells = _tool_variance_cells(cvs)
        baseline = preset.baseline if any(c.name == preset.baseline for c in cells) else cells[0].name
        preset = replace(preset, cells=cells, baseline=baseline)
    return preset


# ---------------------------------------------------------------------------- jobs

def cell_workload(cell: Cell, horizon_ms: float, scale: float = 1.0) -> WorkloadSpec:
    """Workload spec of one cell: Poisson arrivals over the horizon, or a batch at t=0."""
    spec = WorkloadSpec.for_kind(cell.workload, horizon_ms=horizon_ms).scaled(cell.rate_scale * scale)
    if cell.batch_tasks:
        spec = replace(spec, n_tasks=max(1, round(cell.batch_tasks * scale)), batch=True)
    return spec


def cell_config(cell: Cell, spec: WorkloadSpec, horizon_ms: float, seed: int) -> SimConfig:
    """Resolved configuration of one cell."""
    cfg = config_from_dict(cell.overrides) if cell.overrides else SimConfig()
    warmup = 0.0 if spec.batch else min(config.DEFAULT_WARMUP_MS, horizon_ms / 4)
    cfg = replace(cfg, horizon_ms=horizon_ms, warmup_ms=warmup, seed=seed)
    if cell.target_load is not None:
        lanes = lanes_for_load(spec, cfg.cost, cell.target_load)
        per_worker = config.FAIRNESS_LANES_PER_WORKER
        cluster = replace(cfg.cluster, workers=math.ceil(lanes / per_worker), lanes_per_worker=per_worker)
        cfg = replace(cfg, cluster=cluster)
    if cell.tool_cv is not None:
        cfg = cfg.with_tools(tools_with_cv(cell.tool_mean_ms, cell.tool_cv))
    if cell.ablate:
        cfg = apply_ablation(cfg, cell.ablate)
    if cell.strategy:
        cfg = apply_strategy(cfg, cell.strategy)
    return cfg.validate()


def _sim_job(preset: ExperimentPreset, cell: Cell, seed: int, horizon_ms: float, scale: float) -> List[Dict]:
    from agentsim.sim.engine import run

    spec = cell_workload(cell, horizon_ms, scale)
    cfg = cell_config(cell, spec, horizon_ms, seed)
    tasks = generate_workload(spec, seed, cfg.tools, cfg.cost)
    result = run(cfg, tasks, seed=seed, record_afs=preset.record_afs)
    row = result.metrics.summary_row()
    if preset.record_afs and result.afs_history:
        shares = {t.tenant_id: t.rate_per_min * t.mean_steps for t in spec.tenants}
        deviation = fairness_deviation(result.afs_history, shares)
        row["fairness_deviation_final"] = deviation[-1]["deviation"] if deviation else None
    row["workers"] = cfg.cluster.workers
    return [row]


def _ratio_job(preset: ExperimentPreset, cell: Cell, seed: int, horizon_ms: float, scale: float) -> List[Dict]:
    spec = cell_workload(cell, horizon_ms, scale)
    cfg = SimConfig()
    tasks = generate_workload(spec, seed, cfg.tools, cfg.cost)
    trace = build_access_trace(tasks, cfg.cost, cfg.tools, cfg.ttl, cfg.max_context_tokens)
    largest = max((a.tokens_after for a in trace.accesses), default=0) * trace.bytes_per_token
    capacity = max(int(config.RATIO_CAPACITY_FRACTION * peak_working_set(trace)), largest)
    return compare_policies(trace, capacity, weights=cfg.policy.weights, prefix_fraction=cfg.policy.prefix_fraction)


def _inference_job(preset: ExperimentPreset, cell: Cell, seed: int, horizon_ms: float, scale: float) -> List[Dict]:
    n_train, n_hold = config.PATTERN_TRAIN_TASKS, config.PATTERN_HOLDOUT_TASKS
    spec = WorkloadSpec.for_kind(cell.workload, n_tasks=n_train + n_hold)
    cfg = SimConfig()
    traces = tool_traces(generate_workload(spec, seed, cfg.tools, cfg.cost))
    train, hold = traces[:n_train], traces[n_train:]
    model = PatternModel(spec.tenants[0].template, theta_conf=cell.theta_conf)
    graph = infer_pattern(model, train)
    if not graph:
        return [{"accuracy": None, "edges_match": False, "edges": 0}]
    _start, template = TOOL_TEMPLATES[spec.tenants[0].template]
    true_edges = {(a, b) for a, row in template.items() for b, p in row.items() if p >= cell.theta_conf}
    inferred = set(edge_set(graph))
    return [{"accuracy": prediction_accuracy(graph, hold), "edges_match": inferred == true_edges,
             "edges": len(inferred), "train_tasks": len(train)}]


_JOBS = {JobKind.SIM: _sim_job, JobKind.RATIO: _ratio_job, JobKind.INFERENCE: _inference_job}


def run_cell(preset: ExperimentPreset, cell: Cell, seed: int, horizon_ms: Optional[float] = None,
             scale: float = 1.0) -> List[Dict[str, Any]]:
    """Run one (cell, seed) job and return its rows tagged with preset, cell and seed."""
    horizon = horizon_ms or preset.horizon_ms
    rows = _JOBS[preset.job](preset, cell, seed, horizon, scale)
    return [dict(r, preset=preset.name, cell=cell.name, seed=seed) for r in rows]
