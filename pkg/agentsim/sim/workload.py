"""workload.py : Synthetic agent workloads with Poisson arrivals.

A workload is a list of tasks with their full trajectories sampled up front, so every
policy replays exactly the same work. Workload files are NDJSON: a header line with
the generating spec, seed and version, then one task per line.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from agentsim import config
from agentsim.aeg.builder import AegHint, HintStep, build_from_hints
from agentsim.core.errors import ConfigError
from agentsim.core.model import CostModel, StepPlan, Task, TenantClass, ToolType, expected_duration
from agentsim.core.utils import dumps_canonical
from agentsim.sim.tools import sample_tool_latency

LOG = logging.getLogger(__name__)


class WorkloadKind(str, Enum):
    SWEBENCH = "swebench"
    WEBARENA = "webarena"
    MULTITENANT = "multitenant"
    HOTCOLD = "hotcold"
    TRIAGE = "triage"


# Tool Markov templates: start tool, then tool -> {next tool: prob}. Rows summing below
# one leave the remaining mass for termination; templates used with sampled step
# counts are renormalized over tools.
TOOL_TEMPLATES: Dict[str, Tuple[str, Dict[str, Dict[str, float]]]] = {
    "swe": ("file_ops", {
        "file_ops": {"file_ops": 0.45, "code_execution": 0.50, "web_api": 0.05},
        "code_execution": {"file_ops": 0.80, "code_execution": 0.20},
        "web_api": {"file_ops": 1.0},
        "database": {"file_ops": 1.0},
    }),
    "web": ("web_api", {
        "web_api": {"web_api": 0.75, "database": 0.10, "file_ops": 0.15},
        "database": {"web_api": 0.80, "database": 0.20},
        "file_ops": {"web_api": 0.90, "file_ops": 0.10},
        "code_execution": {"web_api": 1.0},
    }),
    "mixed": ("file_ops", {t: {u: 0.25 for u in config.TOOL_NAMES} for t in config.TOOL_NAMES}),
    # strong pattern with early exits, for inference checks
    "triage": ("file_ops", {
        "file_ops": {"code_execution": 0.90},
        "code_execution": {"database": 0.85},
        "database": {"web_api": 0.80},
        "web_api": {},
    }),
}


@dataclass(frozen=True)
class TenantSpec:
    tenant_id: str
    rate_per_min: float
    mean_steps: float
    max_steps: int
    fixed_steps: bool = False
    tenant_class: Optional[TenantClass] = None
    template: str = "swe"


@dataclass(frozen=True)
class WorkloadSpec:
    kind: WorkloadKind
    tenants: Tuple[TenantSpec, ...]
    horizon_ms: float = config.DEFAULT_HORIZON_MS
    n_tasks: Optional[int] = None  # exact task count; arrivals may run past the horizon
    prompt_range: Tuple[int, int] = config.SWEBENCH_PROMPT
    output_range: Tuple[int, int] = config.SWEBENCH_OUTPUT
    continue_prob: Optional[float] = None  # hinted edge probability; None -> 1 - 1/mean
    home_worker: Optional[int] = None
    batch: bool = False  # every task arrives at t=0
    slo_factor: float = config.SLO_FACTOR

    def validate(self) -> None:
        issues = []
        if not self.tenants:
            issues.append(("tenants", "at least one tenant is required"))
        for i, t in enumerate(self.tenants):
            if t.rate_per_min <= 0:
                issues.append((f"tenants[{i}].rate_per_min", f"must be > 0, got {t.rate_per_min}"))
            if t.max_steps < 1:
                issues.append((f"tenants[{i}].max_steps", "must be >= 1"))
            if not 1 <= t.mean_steps <= t.max_steps:
                issues.append((f"tenants[{i}].mean_steps", f"must be within [1, max_steps], got {t.mean_steps}"))
            if t.template not in TOOL_TEMPLATES:
                issues.append((f"tenants[{i}].template", f"unknown template {t.template!r}"))
        for name, (lo, hi) in (("prompt_range", self.prompt_range), ("output_range", self.output_range)):
            if not 0 <= lo <= hi:
                issues.append((name, f"need 0 <= low <= high, got ({lo}, {hi})"))
        if self.horizon_ms <= 0:
            issues.append(("horizon_ms", "must be > 0"))
        if self.n_tasks is not None and self.n_tasks < 0:
            issues.append(("n_tasks", "must be >= 0"))
        if self.continue_prob is not None and not 0 <= self.continue_prob <= 1:
            issues.append(("continue_prob", "must be within [0, 1]"))
        if self.slo_factor <= 0:
            issues.append(("slo_factor", "must be > 0"))
        if issues:
            raise ConfigError(issues)

    def scaled(self, rate_scale: float) -> "WorkloadSpec":
        return replace(self, tenants=tuple(replace(t, rate_per_min=t.rate_per_min * rate_scale)
                                           for t in self.tenants))

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["tenants"] = [dict(asdict(t), tenant_class=t.tenant_class.value if t.tenant_class else None)
                        for t in self.tenants]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "WorkloadSpec":
        tenants = tuple(TenantSpec(**dict(t, tenant_class=TenantClass(t["tenant_class"]) if t.get("tenant_class") else None))
                        for t in d["tenants"])
        rest = {k: v for k, v in d.items() if k not in ("kind", "tenants")}
        for k in ("prompt_range", "output_range"):
            if k in rest:
                rest[k] = tuple(rest[k])
        return cls(kind=WorkloadKind(d["kind"]), tenants=tenants, **rest)

    @classmethod
    def for_kind(cls, kind: WorkloadKind | str, **overrides) -> "WorkloadSpec":
        """Default spec of each workload kind; keyword overrides replace fields."""
        kind = WorkloadKind(kind)
        rate = config.SINGLE_TENANT_RATE
        if kind == WorkloadKind.SWEBENCH:
            spec = cls(kind, (TenantSpec("swe", rate, config.SWEBENCH_MEAN_STEPS, config.SWEBENCH_MAX_STEPS),))
        elif kind == WorkloadKind.WEBARENA:
            spec = cls(kind, (TenantSpec("web", rate, config.WEBARENA_MEAN_STEPS, config.WEBARENA_MAX_STEPS,
                                         template="web"),),
                       prompt_range=config.WEBARENA_PROMPT, output_range=config.WEBARENA_OUTPUT)
        elif kind == WorkloadKind.MULTITENANT:
            tenants = []
            for cls_name, (count, steps, per_min) in config.MULTITENANT_CLASSES.items():
                for i in range(count):
                    tenants.append(TenantSpec(f"{cls_name}-{i}", per_min, steps, steps, fixed_steps=True,
                                              tenant_class=TenantClass(cls_name), template="mixed"))
            spec = cls(kind, tuple(tenants), prompt_range=config.MULTITENANT_PROMPT,
                       output_range=config.MULTITENANT_OUTPUT, continue_prob=1.0)
        elif kind == WorkloadKind.HOTCOLD:
            spec = cls(kind, (TenantSpec("hot", 30.0, 6, 12),), prompt_range=(1_000, 2_000),
                       output_range=(50, 150), home_worker=0)
        else:
            spec = cls(kind, (TenantSpec("triage", rate, 3.3, 6, template="triage"),),
                       prompt_range=(1_000, 2_000), output_range=(50, 150))
        spec = replace(spec, **overrides) if overrides else spec
        spec.validate()
        return spec


def geometric_p_for_mean(mean: float, max_steps: int) -> float:
    """Success probability of a geometric on [1, max_steps] whose truncated mean is ``mean``."""
    if mean <= 1:
        return 1.0

    def truncated_mean(p: float) -> float:
        q = 1.0 - p
        k = np.arange(1, max_steps + 1)
        w = q ** (k - 1)
        return float(np.sum(k * w) / np.sum(w))

    lo, hi = 1e-9, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if truncated_mean(mid) > mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_steps(rng: np.random.Generator, p: float, max_steps: int) -> int:
    while True:
        n = int(rng.geometric(p))
        if n <= max_steps:
            return n


def _terminates(template: str) -> bool:
    """True when some row of the template leaves mass for ending the task."""
    return any(sum(row.values()) < 1.0 - 1e-9 for row in TOOL_TEMPLATES[template][1].values())


def _walk_tools(rng: np.random.Generator, template: str, n_calls: Optional[int],
                max_steps: int) -> List[str]:
    """Tool calls of one task: ``n_calls`` of them, or until the template terminates."""
    start, chain = TOOL_TEMPLATES[template]
    tools = [start]
    limit = n_calls if n_calls is not None else max_steps - 1
    while len(tools) < limit:
        row = chain.get(tools[-1], {})
        names = sorted(row)
        probs = np.array([row[n] for n in names], dtype=float)
        if n_calls is None:
            # residual mass ends the task
            u = rng.random()
            cum = np.cumsum(probs)
            idx = int(np.searchsorted(cum, u, side="right"))
            if idx >= len(names):
                break
            tools.append(names[idx])
        else:
            if not names:
                names, probs = [start], np.array([1.0])
            tools.append(names[int(rng.choice(len(names), p=probs / probs.sum()))])
    return tools[:limit] if n_calls is not None else tools


def _make_task(rng: np.random.Generator, spec: WorkloadSpec, tenant: TenantSpec, p_geo: float,
               tools: Mapping[str, ToolType], task_id: int, submit: float) -> Task:
    if _terminates(tenant.template) and not tenant.fixed_steps:
        calls = _walk_tools(rng, tenant.template, None, tenant.max_steps)
        n = len(calls) + 1
    else:
        n = int(tenant.mean_steps) if tenant.fixed_steps else sample_steps(rng, p_geo, tenant.max_steps)
        calls = _walk_tools(rng, tenant.template, n - 1, tenant.max_steps) if n > 1 else []
    step_tools: List[Optional[str]] = list(calls) + [None]

    lo_p, hi_p = spec.prompt_range
    lo_o, hi_o = spec.output_range
    trajectory = []
    for i, tool in enumerate(step_tools):
        new = int(rng.integers(lo_p, hi_p + 1))
        out = int(rng.integers(lo_o, hi_o + 1))
        latency = sample_tool_latency(tools[tool], rng) if tool else 0.0
        trajectory.append(StepPlan(node=i, tool=tool, new_tokens=new, output_tokens=out, tool_latency_ms=latency))

    if spec.continue_prob is not None:
        c = spec.continue_prob
    elif tenant.fixed_steps:
        c = 1.0
    else:
        c = max(0.0, 1.0 - 1.0 / tenant.mean_steps)
    expected = ((lo_p + hi_p) // 2, (lo_o + hi_o) // 2)
    hint = AegHint(steps=tuple(
        HintStep(tool=t, continue_prob=0.0 if i == n - 1 else c, tokens=expected)
        for i, t in enumerate(step_tools)))
    return Task(task_id=task_id, tenant_id=tenant.tenant_id, aeg=build_from_hints(hint), current_node=0,
                submit_time=submit, trajectory=trajectory, agent_type=tenant.template,
                tenant_class=tenant.tenant_class, home_worker=spec.home_worker)


def generate_workload(spec: WorkloadSpec, seed: int, tools: Mapping[str, ToolType],
                      cost_model: Optional[CostModel] = None) -> List[Task]:
    """
    Sample a workload.

    Args:
        spec: validated workload spec.
        seed: seed of the single random stream used for everything.
        tools: tool types; tool latencies of every step are drawn here.
        cost_model: used for deadlines (``slo_factor`` times the expected duration).

    Returns:
        Tasks ordered by arrival, with ids assigned in that order.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    cost_model = cost_model or CostModel()

    arrivals: List[Tuple[float, int]] = []
    for ti, tenant in enumerate(spec.tenants):
        mean_gap = 60_000.0 / tenant.rate_per_min
        t = 0.0
        if spec.n_tasks is not None:
            count = spec.n_tasks // len(spec.tenants) + (1 if ti < spec.n_tasks % len(spec.tenants) else 0)
            for _ in range(count):
                arrivals.append((0.0 if spec.batch else round(t, 3), ti))
                t += rng.exponential(mean_gap)
        else:
            while True:
                t += rng.exponential(mean_gap)
                if t >= spec.horizon_ms:
                    break
                arrivals.append((0.0 if spec.batch else round(t, 3), ti))
    arrivals.sort()

    p_geo = {ti: geometric_p_for_mean(t.mean_steps, t.max_steps) for ti, t in enumerate(spec.tenants)}
    tasks = []
    for task_id, (submit, ti) in enumerate(arrivals):
        task = _make_task(rng, spec, spec.tenants[ti], p_geo[ti], tools, task_id, submit)
        task.deadline = submit + spec.slo_factor * expected_duration(task, cost_model)
        tasks.append(task)
    LOG.info(f"Generated {len(tasks)} {spec.kind.value} tasks (seed {seed})")
    return tasks


def tool_traces(tasks: Sequence[Task]) -> List[List[str]]:
    """Tool-type sequence of each task, as consumed by pattern inference."""
    return [[s.tool for s in t.trajectory if s.tool] for t in tasks]


def offered_load(spec: WorkloadSpec, cost_model: CostModel, total_lanes: int) -> float:
    """Expected fraction of lane time the workload keeps busy, assuming full cache reuse."""
    new = sum(spec.prompt_range) / 2.0
    out = sum(spec.output_range) / 2.0
    per_step = cost_model.prefill_ms(new) + cost_model.decode_ms(out)
    demand = sum(t.rate_per_min * t.mean_steps * per_step for t in spec.tenants) / 60_000.0
    return demand / total_lanes


def lanes_for_load(spec: WorkloadSpec, cost_model: CostModel, target: float) -> int:
    """Smallest lane count at which the offered load is at most ``target``."""
    return max(1, math.ceil(offered_load(spec, cost_model, 1) / target))


def write_workload(tasks: Sequence[Task], spec: WorkloadSpec, seed: int, path: Path, version: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"kind": "workload", "spec": spec.to_dict(), "seed": seed, "version": version, "tasks": len(tasks)}
    lines = [dumps_canonical(header)] + [dumps_canonical(t.to_dict()) for t in tasks]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_workload(path: Path) -> Tuple[Dict[str, Any], List[Task]]:
    """Return (header, tasks) of a workload file."""
    try:
        rows = [json.loads(x) for x in Path(path).read_text(encoding="utf-8").splitlines() if x.strip()]
    except (OSError, json.JSONDecodeError) as e:
        raise RuntimeError(f"Error reading workload {path}: {e}") from e
    if not rows or rows[0].get("kind") != "workload":
        raise ConfigError([("workload", f"{path} has no workload header")])
    return rows[0], [Task.from_dict(r) for r in rows[1:]]
