from .clock import Clock, ManualClock, MonotonicClock
from .supervisor import (
    CheckpointRef,
    ExitReport,
    HandshakeError,
    LivenessEvent,
    RecoveryError,
    Supervisor,
    SupervisorError,
    WorkerDied,
    WorkerError,
    WorkerHandle,
    WorkerSpec,
    WorkerTimeout,
    STATE_BUSY,
    STATE_DEAD,
    STATE_PAUSED,
    STATE_READY,
    STATE_RECOVERING,
    STATE_STARTING,
)

__all__ = [
    "Clock",
    "ManualClock",
    "MonotonicClock",
    "CheckpointRef",
    "ExitReport",
    "HandshakeError",
    "LivenessEvent",
    "RecoveryError",
    "Supervisor",
    "SupervisorError",
    "WorkerDied",
    "WorkerError",
    "WorkerHandle",
    "WorkerSpec",
    "WorkerTimeout",
    "STATE_BUSY",
    "STATE_DEAD",
    "STATE_PAUSED",
    "STATE_READY",
    "STATE_RECOVERING",
    "STATE_STARTING",
]
