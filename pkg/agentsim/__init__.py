"""Trace-driven simulator and policy library for scheduling multi-step agent inference"""

__version__ = "0.1.0"

# Public names, resolved on first use
_EXPORTS = {
    "SimConfig": "agentsim.settings",
    "load_config": "agentsim.settings",
    "config_from_dict": "agentsim.settings",
    "run": "agentsim.sim.engine",
    "Simulator": "agentsim.sim.engine",
    "SimResult": "agentsim.sim.engine",
    "generate_workload": "agentsim.sim.workload",
    "WorkloadSpec": "agentsim.sim.workload",
    "WorkloadKind": "agentsim.sim.workload",
    "build_from_hints": "agentsim.aeg.builder",
    "infer_pattern": "agentsim.aeg.inference",
    "belady_replay": "agentsim.cache.oracle",
    "competitive_ratio": "agentsim.cache.oracle",
}


def __getattr__(name):
    """Lazy import of the top-level API."""
    if name in _EXPORTS:
        import importlib

        return getattr(importlib.import_module(_EXPORTS[name]), name)
    raise AttributeError(f"module 'agentsim' has no attribute '{name}'")


__all__ = ["__version__", *_EXPORTS]
