"""events.py : Simulation event vocabulary and the NDJSON event log."""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional

from agentsim.core.utils import dumps_canonical, records_to_frame


class EventKind(str, Enum):
    """Event kinds, declared in tiebreak order for simultaneous events."""

    TASK_ARRIVE = "TaskArrive"
    MIGRATE_DONE = "MigrateDone"
    PREFETCH_DONE = "PrefetchDone"
    TOOL_DONE = "ToolDone"
    STEP_DONE = "StepDone"
    STEP_START_DECODE = "StepStartDecode"
    STEP_START_PREFILL = "StepStartPrefill"
    TOOL_START = "ToolStart"
    PREFETCH_START = "PrefetchStart"
    EVICT = "Evict"
    STEAL = "Steal"
    PREEMPT = "Preempt"
    TASK_FINISH = "TaskFinish"
    EPOCH_TICK = "EpochTick"

    @property
    def ordinal(self) -> int:
        return _ORDINALS[self]


_ORDINALS = {kind: i for i, kind in enumerate(EventKind)}


@dataclass
class SimEvent:
    time_us: int
    kind: EventKind
    task_id: int = -1
    payload: Dict[str, Any] = field(default_factory=dict)
    seq: int = 0

    @property
    def time_ms(self) -> float:
        return self.time_us / 1000.0

    def sort_key(self):
        return (self.time_us, self.kind.ordinal, self.task_id, self.seq)

    def to_dict(self) -> Dict[str, Any]:
        return {"seq": self.seq, "time_us": self.time_us, "time_ms": self.time_ms,
                "kind": self.kind.value, "task_id": self.task_id, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimEvent":
        return cls(time_us=int(d["time_us"]), kind=EventKind(d["kind"]), task_id=int(d.get("task_id", -1)),
                   payload=dict(d.get("payload", {})), seq=int(d.get("seq", 0)))


class EventLog:
    """Append-only, time-ordered record of a run.

    Events get consecutive sequence numbers as they are appended, which together with
    the time gives the total order of the log.
    """

    def __init__(self, events: Optional[Iterable[SimEvent]] = None):
        self._events: List[SimEvent] = []
        for e in events or ():
            self.append(e)

    def append(self, event: SimEvent) -> SimEvent:
        if self._events and event.time_us < self._events[-1].time_us:
            raise ValueError(
                f"event log must be time-ordered: {event.kind.value} at {event.time_us}us "
                f"after {self._events[-1].time_us}us")
        event.seq = len(self._events)
        self._events.append(event)
        return event

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[SimEvent]:
        return iter(self._events)

    def __getitem__(self, i):
        return self._events[i]

    def of_kind(self, *kinds: EventKind) -> List[SimEvent]:
        wanted = set(kinds)
        return [e for e in self._events if e.kind in wanted]

    def to_ndjson(self) -> str:
        return "".join(dumps_canonical(e.to_dict()) + "\n" for e in self._events)

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ndjson(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Path) -> "EventLog":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise RuntimeError(f"Error reading event log {path}: {e}") from e
        return cls(SimEvent.from_dict(json.loads(line)) for line in lines if line.strip())

    def to_frame(self, output_format: str = "pandas"):
        """Flatten the log into a table (payload keys become ``payload.*`` columns)."""
        return records_to_frame([e.to_dict() for e in self._events], output_format)
