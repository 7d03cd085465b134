"""Simulation engine, workloads, cost model and run audits.

The engine depends on ``agentsim.settings``, which itself needs ``sim.tools``, so
everything here is imported lazily.
"""

_EXPORTS = {
    "Simulator": "agentsim.sim.engine",
    "SimResult": "agentsim.sim.engine",
    "run": "agentsim.sim.engine",
    "MetricsReport": "agentsim.sim.metrics",
    "audit_log": "agentsim.sim.audit",
    "step_cost": "agentsim.sim.costs",
    "sample_tool_latency": "agentsim.sim.tools",
    "default_tools": "agentsim.sim.tools",
    "generate_workload": "agentsim.sim.workload",
    "WorkloadSpec": "agentsim.sim.workload",
    "WorkloadKind": "agentsim.sim.workload",
}


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        return getattr(importlib.import_module(_EXPORTS[name]), name)
    raise AttributeError(f"module 'agentsim.sim' has no attribute '{name}'")


__all__ = list(_EXPORTS)
