from .matrix import (
    FAMILIES,
    InfeasibleMatrix,
    MatrixError,
    MatrixSpec,
    build_matrix,
    composition_of,
    write_matrix,
)
from .script_runner import RunHooks, RunResult, ScriptRunner, run_script, unique_run_dir, winner_of
from .sessions import (
    DEFAULT_MAX_REPLICAS,
    FrameSet,
    IllegalTransition,
    Mailbox,
    ManualSession,
    SessionError,
    STATUS_CREATED,
    STATUS_FAILED,
    STATUS_FINISHED,
    STATUS_PAUSED,
    STATUS_RUNNING,
)

__all__ = [
    "FAMILIES",
    "InfeasibleMatrix",
    "MatrixError",
    "MatrixSpec",
    "build_matrix",
    "composition_of",
    "write_matrix",
    "RunHooks",
    "RunResult",
    "ScriptRunner",
    "run_script",
    "unique_run_dir",
    "winner_of",
    "DEFAULT_MAX_REPLICAS",
    "FrameSet",
    "IllegalTransition",
    "Mailbox",
    "ManualSession",
    "SessionError",
    "STATUS_CREATED",
    "STATUS_FAILED",
    "STATUS_FINISHED",
    "STATUS_PAUSED",
    "STATUS_RUNNING",
]
