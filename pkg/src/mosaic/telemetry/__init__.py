from .query import open_run, run_aggregates
from .records import EpisodeRecord, StepRecord
from .store import RunStore, TelemetryError

__all__ = [
    "open_run",
    "run_aggregates",
    "EpisodeRecord",
    "StepRecord",
    "RunStore",
    "TelemetryError",
]
