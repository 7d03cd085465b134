"""SLO attainment and fairness-deviation accounting."""

from collections import defaultdict
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from agentsim.core.model import Task, TenantClass


def slo_attainment(finished: Sequence[Task]) -> Dict[str, Optional[float]]:
    """
    Fraction of tasks finishing by their deadline, per tenant class and overall.

    Classes with no tasks are reported as None rather than 0.
    """
    groups: Dict[str, List[bool]] = defaultdict(list)
    for t in finished:
        if t.finish_time is None:
            continue
        met = t.finish_time <= t.deadline
        groups["overall"].append(met)
        if t.tenant_class is not None:
            groups[t.tenant_class.value].append(met)
    out: Dict[str, Optional[float]] = {}
    for key in [c.value for c in TenantClass] + ["overall"]:
        vals = groups.get(key)
        out[key] = sum(vals) / len(vals) if vals else None
    return out


def fairness_deviation(history: Sequence[Mapping], demand_shares: Mapping[str, float]) -> List[Dict]:
    """
    Squared deviation of cumulative service from demand-proportional service, per epoch.

    ``history`` holds rows with ``epoch``, ``tenant`` and ``service_ms``; tenants missing
    from ``demand_shares`` get no share.
    """
    by_epoch: Dict[int, Dict[str, float]] = defaultdict(dict)
    for row in history:
        by_epoch[int(row["epoch"])][row["tenant"]] = float(row["service_ms"])
    total_share = sum(demand_shares.values()) or 1.0
    out = []
    for epoch in sorted(by_epoch):
        service = by_epoch[epoch]
        tenants = sorted(set(service) | set(demand_shares))
        s = np.array([service.get(t, 0.0) for t in tenants])
        mu = np.array([demand_shares.get(t, 0.0) / total_share for t in tenants]) * s.sum()
        out.append({"epoch": epoch, "deviation": float(np.sum((s - mu) ** 2))})
    return out
