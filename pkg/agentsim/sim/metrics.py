"""metrics.py : Run counters and the metrics report built from a finished simulation."""

from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional

import numpy as np
import pandas as pd
import polars as pl

from agentsim import config
from agentsim.core.utils import records_to_frame
from agentsim.fairness.slo import slo_attainment

if TYPE_CHECKING:
    from agentsim.sim.engine import Simulator


@dataclass
class RunCounters:
    pauses: int = 0
    evicted_pauses: int = 0
    evictions: int = 0
    regen_tokens: int = 0
    recomputed_tokens: int = 0
    prefetch_loads: int = 0
    prefetch_tokens: int = 0
    prefetch_hits: int = 0
    prefetch_correct: int = 0
    prefetch_mispredictions: int = 0
    ttl_calls: int = 0
    ttl_covered: int = 0
    steals: int = 0
    migrations: int = 0
    migrations_aborted: int = 0
    preemptions: int = 0
    useful_byte_us: int = 0


def _ratio(num: float, den: float) -> Optional[float]:
    return float(num) / den if den else None


@dataclass
class MetricsReport:
    """Summary of one run. Ratios with an empty denominator are None."""

    tasks_total: int = 0
    tasks_finished: int = 0
    tasks_unfinished: int = 0
    tct_mean_ms: float = 0.0
    tct_std_ms: float = 0.0
    tct_p50_ms: float = 0.0
    tct_p95_ms: float = 0.0
    throughput_per_min: float = 0.0
    memory_utilization: float = 0.0
    evict_rate: Optional[float] = None
    regen_tokens: int = 0
    recomputed_tokens: int = 0
    prefetch_tokens: int = 0
    prefetch_hits: int = 0
    prefetch_accuracy: Optional[float] = None
    prefetch_mispredictions: int = 0
    ttl_coverage: Optional[float] = None
    steals: int = 0
    steals_per_task: float = 0.0
    migrations: int = 0
    migrations_aborted: int = 0
    preemptions: int = 0
    preemptions_per_task: float = 0.0
    evictions: int = 0
    slo: Dict[str, Optional[float]] = field(default_factory=dict)
    worker_utilization: List[float] = field(default_factory=list)
    busy_ratio: Optional[float] = None
    end_ms: float = 0.0
    per_task: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self, include_tasks: bool = True) -> Dict[str, Any]:
        d = asdict(self)
        if not include_tasks:
            d.pop("per_task")
        return d

    def summary_row(self) -> Dict[str, Any]:
        """Flat scalar view for CSV output; SLO classes become ``slo_<class>`` columns."""
        row = {k: v for k, v in self.to_dict(include_tasks=False).items()
               if k not in ("slo", "worker_utilization")}
        for cls, val in self.slo.items():
            row[f"slo_{cls}"] = val
        return row

    def per_task_frame(self, output_format: str = "pandas") -> pd.DataFrame | pl.DataFrame:
        return records_to_frame(self.per_task, output_format)


def build_metrics(sim: "Simulator") -> MetricsReport:
    cfg = sim.cfg
    c = sim.counters
    end_ms = sim.end_us / config.US_PER_MS
    warmup = cfg.warmup_ms
    tasks = [sim.tasks[k] for k in sorted(sim.tasks)]
    steady = [t for t in tasks if t.submit_time >= warmup]
    finished = [t for t in steady if t.finished]
    tct = np.array([t.finish_time - t.submit_time for t in finished], dtype=float)

    window_min = max(end_ms - warmup, 0.0) / 60_000.0
    capacity = cfg.cluster.kv_capacity_bytes * cfg.cluster.workers
    util = [w.busy_ms / (w.lanes * end_ms) if end_ms > 0 else 0.0 for w in sim.cluster.workers]
    busy = [w.busy_ms for w in sim.cluster.workers]

    per_task = [{
        "task_id": t.task_id,
        "tenant": t.tenant_id,
        "tenant_class": t.tenant_class.value if t.tenant_class else None,
        "submit_ms": t.submit_time,
        "finish_ms": t.finish_time,
        "tct_ms": t.finish_time - t.submit_time if t.finished else None,
        "steps": len(t.trajectory),
        "steps_done": t.steps_done,
        "regen_tokens": sum(r.regen_tokens for r in t.records),
        "cached_tokens": sum(r.cached_tokens for r in t.records),
        "deadline_met": (t.finish_time <= t.deadline) if t.finished else False,
    } for t in tasks]

    return MetricsReport(
        tasks_total=len(tasks),
        tasks_finished=sum(t.finished for t in tasks),
        tasks_unfinished=sum(not t.finished for t in tasks),
        tct_mean_ms=float(tct.mean()) if tct.size else 0.0,
        tct_std_ms=float(tct.std(ddof=1)) if tct.size > 1 else 0.0,
        tct_p50_ms=float(np.percentile(tct, 50)) if tct.size else 0.0,
        tct_p95_ms=float(np.percentile(tct, 95)) if tct.size else 0.0,
        throughput_per_min=len(finished) / window_min if window_min > 0 else 0.0,
        memory_utilization=c.useful_byte_us / (capacity * sim.end_us) if sim.end_us else 0.0,
        evict_rate=_ratio(c.evicted_pauses, c.pauses),
        regen_tokens=c.regen_tokens,
        recomputed_tokens=c.recomputed_tokens,
        prefetch_tokens=c.prefetch_tokens,
        prefetch_hits=c.prefetch_hits,
        prefetch_accuracy=_ratio(c.prefetch_correct, c.prefetch_correct + c.prefetch_mispredictions),
        prefetch_mispredictions=c.prefetch_mispredictions,
        ttl_coverage=_ratio(c.ttl_covered, c.ttl_calls),
        steals=c.steals,
        steals_per_task=c.steals / len(tasks) if tasks else 0.0,
        migrations=c.migrations,
        migrations_aborted=c.migrations_aborted,
        preemptions=c.preemptions,
        preemptions_per_task=c.preemptions / len(tasks) if tasks else 0.0,
        evictions=c.evictions,
        slo=slo_attainment(finished),
        worker_utilization=util,
        busy_ratio=_ratio(max(busy), min(busy)) if busy and min(busy) > 0 else None,
        end_ms=end_ms,
        per_task=per_task,
    )
