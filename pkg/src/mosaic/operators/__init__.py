from .baselines import BASELINE_KINDS, baseline_action
from .handle import (
    ActionResult,
    BindingError,
    BlockedOnHuman,
    HumanActionSource,
    JointActionError,
    OperatorError,
    OperatorHandle,
    bind_operator,
    worker_command,
)
from .paradigm import BADGE_COLOURS, PARADIGM_MODALITY, Paradigm, WorkerAssignment
from .parsing import (
    FALLBACKS,
    GRAMMARS,
    ParseActionError,
    ParsePolicy,
    parse_action,
)

__all__ = [
    "BASELINE_KINDS",
    "baseline_action",
    "ActionResult",
    "BindingError",
    "BlockedOnHuman",
    "HumanActionSource",
    "JointActionError",
    "OperatorError",
    "OperatorHandle",
    "bind_operator",
    "worker_command",
    "BADGE_COLOURS",
    "PARADIGM_MODALITY",
    "Paradigm",
    "WorkerAssignment",
    "FALLBACKS",
    "GRAMMARS",
    "ParseActionError",
    "ParsePolicy",
    "parse_action",
]
