"""errors.py : Exception types raised across the simulator."""

from typing import Iterable, List, Optional, Tuple


class ConfigError(ValueError):
    """Invalid configuration, workload spec or hint.

    Carries every problem found as ``(field_path, message)`` pairs so callers can
    report them all at once.
    """

    def __init__(self, issues: Iterable[Tuple[str, str]] | str):
        if isinstance(issues, str):
            issues = [("", issues)]
        self.issues: List[Tuple[str, str]] = list(issues)
        super().__init__(self._render())

    def _render(self) -> str:
        lines = [f"{path}: {msg}" if path else msg for path, msg in self.issues]
        return "\n".join(lines)


class HintError(ConfigError):
    """Malformed AEG hint (probabilities out of range or summing above 1)."""


class CapacityError(RuntimeError):
    """A KV-cache demand that cannot be satisfied even after evicting everything."""

    def __init__(self, message: str, worker_id: Optional[int] = None, bytes_needed: int = 0):
        self.worker_id = worker_id
        self.bytes_needed = bytes_needed
        where = f"worker {worker_id}: " if worker_id is not None else ""
        super().__init__(f"{where}{message}")
