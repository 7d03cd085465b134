"""Agent execution graphs: built from hints or inferred from completed tasks."""

from agentsim.aeg.builder import AegHint, HintStep, build_from_hints
from agentsim.aeg.inference import NOT_READY, NotReady, PatternModel, infer_pattern, prediction_accuracy
from agentsim.aeg.reuse import ObservationEma, overlap, reuse_probability

__all__ = [
    "AegHint",
    "HintStep",
    "build_from_hints",
    "NOT_READY",
    "NotReady",
    "PatternModel",
    "infer_pattern",
    "prediction_accuracy",
    "ObservationEma",
    "overlap",
    "reuse_probability",
]
