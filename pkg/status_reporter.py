"""
Status Reporter - Houdt de voortgang van simulatie runs bij.

Elke status change wordt gelogd, in een in-memory cache bewaard en (optioneel)
als JSON-line weggeschreven naar ``CONSENSUS_STATUS_FILE`` zodat een externe
tool lange runs kan volgen. Rapportage mag een run nooit breken.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class RunStage(Enum):
    """Fases van een simulatie run."""
    VALIDATED = "validated"        # Scenario gevalideerd
    INTEGRATING = "integrating"    # RK4 loop bezig
    SWITCHED = "switched"          # Actieve graaf gewisseld
    COMPLETED = "completed"        # Run afgerond
    FAILED = "failed"              # Divergentie of andere fout


@dataclass
class StatusUpdate:
    """Status update payload."""
    run_id: str
    stage: RunStage
    progress_pct: Optional[int] = None
    message: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    source: str = "consensus-sim"

    def to_json(self) -> str:
        payload = asdict(self)
        payload["stage"] = self.stage.value
        return json.dumps(payload, default=str)


# Configuration
STATUS_FILE = os.getenv("CONSENSUS_STATUS_FILE", "")
STATUS_ENABLED = os.getenv("CONSENSUS_STATUS_ENABLED", "true").lower() == "true"

# Track recent updates per run
_recent_updates: Dict[str, StatusUpdate] = {}


def write_status(update: StatusUpdate, path: str) -> bool:
    """
    Append een update als JSON-line aan ``path``.

    Returns:
        True als de regel geschreven is
    """
    try:
        with open(path, "a", encoding="utf-8") as f:
            f.write(update.to_json() + "\n")
        return True
    except OSError as e:
        logger.warning(f"[StatusReporter] Cannot write status file {path}: {e}")
        return False


def report_status(
    run_id: str,
    stage: RunStage,
    progress_pct: Optional[int] = None,
    message: Optional[str] = None,
    metadata: Optional[Dict[str, Any]] = None,
    error: Optional[str] = None,
    sink: Optional[str] = None,
) -> StatusUpdate:
    """
    Hoofdfunctie om status te rapporteren.

    Args:
        run_id: Run ID (scenario naam)
        stage: Run fase
        progress_pct: Percentage compleet (0-100)
        message: Optioneel status bericht
        metadata: Extra metadata (t, segment, steps, ...)
        error: Error message bij FAILED stage
        sink: JSON-lines bestand; default ``CONSENSUS_STATUS_FILE``

    Voorbeeld:
        report_status("paper-fixed", RunStage.INTEGRATING,
                      progress_pct=50, message="t = 30.0 / 60.0")
    """
    update = StatusUpdate(
        run_id=run_id,
        stage=stage,
        progress_pct=progress_pct,
        message=message,
        metadata=metadata or {},
        error=error,
    )

    if stage == RunStage.FAILED:
        logger.error(f"[Status] {run_id}: {stage.value} - {error}")
    elif stage == RunStage.SWITCHED:
        logger.debug(f"[Status] {run_id}: {stage.value} - {message}")
    else:
        logger.info(f"[Status] {run_id}: {stage.value} ({progress_pct}%) - {message}")

    _recent_updates[run_id] = update

    target = sink if sink is not None else STATUS_FILE
    if STATUS_ENABLED and target:
        write_status(update, target)
    return update


def get_recent_status(run_id: str) -> Optional[StatusUpdate]:
    """Haal meest recente status op voor een run."""
    return _recent_updates.get(run_id)


def clear_status(run_id: str):
    _recent_updates.pop(run_id, None)


# Convenience functies per stage
def report_validated(run_id: str, n_agents: int, controller: str, sink: Optional[str] = None):
    return report_status(run_id, RunStage.VALIDATED,
                         progress_pct=0,
                         message=f"{n_agents} agents, controller {controller}",
                         metadata={"n_agents": n_agents, "controller": controller},
                         sink=sink)


def report_integrating(run_id: str, t: float, t_end: float, sink: Optional[str] = None):
    pct = int(round(100.0 * t / t_end)) if t_end > 0 else 100
    return report_status(run_id, RunStage.INTEGRATING,
                         progress_pct=pct,
                         message=f"t = {t:.3f} / {t_end:.3f}",
                         metadata={"t": t},
                         sink=sink)


def report_switched(run_id: str, t: float, segment: int, sink: Optional[str] = None):
    return report_status(run_id, RunStage.SWITCHED,
                         message=f"graph segment {segment} active from t = {t:.3f}",
                         metadata={"t": t, "segment": segment},
                         sink=sink)


def report_completed(run_id: str, steps: int, duration_sec: Optional[float] = None,
                     sink: Optional[str] = None):
    meta: Dict[str, Any] = {"steps": steps}
    if duration_sec is not None:
        meta["duration_sec"] = round(duration_sec, 2)
    return report_status(run_id, RunStage.COMPLETED,
                         progress_pct=100,
                         message=f"Completed: {steps} steps",
                         metadata=meta,
                         sink=sink)


def report_failed(run_id: str, error: str, t: Optional[float] = None, sink: Optional[str] = None):
    where = f"t = {t:.3f}" if t is not None else "setup"
    return report_status(run_id, RunStage.FAILED,
                         message=f"Failed at {where}: {error[:100]}",
                         metadata={"t": t},
                         error=error,
                         sink=sink)


class RunReporter:
    """
    Context manager voor status reporting van één run.

    Gebruik:
        with RunReporter("paper-fixed", t_end=60.0) as reporter:
            reporter.validated(6, "fixed")
            reporter.progress(t)
            reporter.completed(steps)

    Progress wordt per ``progress_step`` procent gerapporteerd. Een exception in
    de ``with`` body wordt als FAILED gerapporteerd en doorgegeven.
    """

    def __init__(self, run_id: str, t_end: float, sink: Optional[str] = None, progress_step: int = 10):
        self.run_id = run_id
        self.t_end = t_end
        self.sink = sink
        self.progress_step = max(1, progress_step)
        self.history: List[StatusUpdate] = []
        self.start_time: Optional[datetime] = None
        self._next_pct = self.progress_step
        self._last_t: Optional[float] = None

    def __enter__(self):
        self.start_time = datetime.now(timezone.utc)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is not None:
            self.failed(str(exc_val), t=getattr(exc_val, "t", self._last_t))
        return False

    def _keep(self, update: StatusUpdate) -> StatusUpdate:
        self.history.append(update)
        return update

    def validated(self, n_agents: int, controller: str):
        return self._keep(report_validated(self.run_id, n_agents, controller, sink=self.sink))

    def progress(self, t: float):
        self._last_t = t
        if self.t_end <= 0:
            return None
        pct = 100.0 * t / self.t_end
        if pct + 1e-9 < self._next_pct:
            return None
        while self._next_pct <= pct + 1e-9:
            self._next_pct += self.progress_step
        return self._keep(report_integrating(self.run_id, t, self.t_end, sink=self.sink))

    def switched(self, t: float, segment: int):
        return self._keep(report_switched(self.run_id, t, segment, sink=self.sink))

    def completed(self, steps: int):
        duration = (datetime.now(timezone.utc) - self.start_time).total_seconds() if self.start_time else None
        return self._keep(report_completed(self.run_id, steps, duration, sink=self.sink))

    def failed(self, error: str, t: Optional[float] = None):
        return self._keep(report_failed(self.run_id, error, t, sink=self.sink))

    @property
    def stages(self) -> List[RunStage]:
        return [u.stage for u in self.history]
