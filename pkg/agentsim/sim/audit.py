"""audit.py : Consistency checks over a finished event log.

Each check returns a list of violation messages; an empty list means the log passed.
Residency is rebuilt from event payloads alone, so the checks also work on logs read
back from ``events.ndjson``.
"""

import logging
from collections import defaultdict
from typing import Dict, List, Optional

from agentsim.core.events import EventKind, EventLog

LOG = logging.getLogger(__name__)

# per task: kinds allowed right after each kind
_NEXT = {
    None: {EventKind.TASK_ARRIVE},
    EventKind.TASK_ARRIVE: {EventKind.STEP_START_PREFILL, EventKind.TASK_FINISH},
    EventKind.STEP_START_PREFILL: {EventKind.STEP_START_DECODE},
    EventKind.STEP_START_DECODE: {EventKind.STEP_DONE},
    EventKind.STEP_DONE: {EventKind.TOOL_START, EventKind.TASK_FINISH},
    EventKind.TOOL_START: {EventKind.TOOL_DONE},
    EventKind.TOOL_DONE: {EventKind.STEP_START_PREFILL},
    EventKind.TASK_FINISH: set(),
}


def check_causality(log: EventLog) -> List[str]:
    """Times never decrease and every task walks arrive, (prefill, decode, done, tool)*, finish."""
    problems = []
    last_time = None
    state: Dict[int, Optional[EventKind]] = defaultdict(lambda: None)
    for e in log:
        if last_time is not None and e.time_us < last_time:
            problems.append(f"seq {e.seq}: time goes back to {e.time_us}us")
        last_time = e.time_us
        if e.kind not in _NEXT or e.task_id < 0:
            continue
        prev = state[e.task_id]
        if e.kind not in _NEXT[prev]:
            problems.append(f"seq {e.seq}: task {e.task_id} {e.kind.value} after "
                            f"{prev.value if prev else 'nothing'}")
        state[e.task_id] = e.kind
    return problems


class _Residency:
    """Per-worker session bytes rebuilt from the log."""

    def __init__(self):
        self.bytes: Dict[int, Dict[int, int]] = defaultdict(dict)
        self.owner: Dict[int, int] = {}
        self.problems: List[str] = []

    def put(self, seq: int, worker: int, sid: int, nbytes: int) -> None:
        other = self.owner.get(sid)
        if other is not None and other != worker:
            self.problems.append(f"seq {seq}: session {sid} resident on workers {other} and {worker}")
            self.bytes[other].pop(sid, None)
        self.bytes[worker][sid] = nbytes
        self.owner[sid] = worker

    def drop(self, worker: int, sid: int) -> None:
        self.bytes[worker].pop(sid, None)
        if self.owner.get(sid) == worker:
            del self.owner[sid]

    def used(self, worker: int) -> int:
        return sum(self.bytes[worker].values())


def _replay_residency(log: EventLog, capacity_bytes: Optional[int]) -> _Residency:
    res = _Residency()
    for e in log:
        p = e.payload
        touched = None
        if e.kind == EventKind.TASK_ARRIVE and "prewarm" in p:
            touched = p["prewarm"]["worker"]
            res.put(e.seq, touched, e.task_id, p["prewarm"]["bytes"])
        elif e.kind in (EventKind.STEP_START_PREFILL, EventKind.PREFETCH_START):
            touched = p["worker"]
            res.put(e.seq, touched, e.task_id, p["bytes"])
        elif e.kind == EventKind.EVICT:
            res.drop(p["worker"], e.task_id)
        elif e.kind == EventKind.MIGRATE_DONE and p.get("moved"):
            nbytes = res.bytes[p["src"]].get(e.task_id, p["bytes"])
            res.drop(p["src"], e.task_id)
            touched = p["dst"]
            res.put(e.seq, touched, e.task_id, nbytes)
        if touched is not None and capacity_bytes is not None and res.used(touched) > capacity_bytes:
            res.problems.append(f"seq {e.seq}: worker {touched} holds {res.used(touched)} bytes "
                                f"> capacity {capacity_bytes}")
    return res


def check_capacity(log: EventLog, capacity_bytes: int) -> List[str]:
    """No worker ever holds more KV bytes than its capacity."""
    return [m for m in _replay_residency(log, capacity_bytes).problems if "capacity" in m]


def check_conservation(log: EventLog) -> List[str]:
    """A session's cache lives on at most one worker at any time."""
    return [m for m in _replay_residency(log, None).problems if "resident on workers" in m]


def check_token_accounting(log: EventLog) -> List[str]:
    """Each prefill splits its prompt into cached and regenerated tokens with nothing lost."""
    problems = []
    for e in log.of_kind(EventKind.STEP_START_PREFILL):
        p = e.payload
        if "prompt" not in p:
            continue
        cached, regen, prompt = p.get("cached", 0), p.get("regen", 0), p["prompt"]
        if cached < 0 or regen < 0 or cached + regen != prompt:
            problems.append(f"seq {e.seq}: task {e.task_id} step {p.get('step')} "
                            f"cached {cached} + regen {regen} != prompt {prompt}")
    return problems


def check_anti_thrash(log: EventLog) -> List[str]:
    """A session is not stolen twice without running in between."""
    problems = []
    stolen_since_run: Dict[int, bool] = {}
    for e in log:
        if e.kind == EventKind.STEAL:
            if stolen_since_run.get(e.task_id):
                problems.append(f"seq {e.seq}: session {e.task_id} stolen again before running")
            stolen_since_run[e.task_id] = True
        elif e.kind in (EventKind.STEP_START_PREFILL, EventKind.STEP_DONE):
            stolen_since_run[e.task_id] = False
    return problems


def audit_log(log: EventLog, capacity_bytes: int) -> Dict[str, List[str]]:
    """Run every check; logs a warning per failing check."""
    results = {
        "causality": check_causality(log),
        "capacity": check_capacity(log, capacity_bytes),
        "conservation": check_conservation(log),
        "token_accounting": check_token_accounting(log),
        "anti_thrash": check_anti_thrash(log),
    }
    for name, problems in results.items():
        if problems:
            LOG.warning(f"Audit {name}: {len(problems)} violation(s), first: {problems[0]}")
    return results
