"""Decision-maker paradigms and their slot-level configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .baselines import BASELINE_KINDS


class Paradigm(str, Enum):
    RL = "rl"
    LLM = "llm"
    VLM = "vlm"
    HUMAN = "human"
    BASELINE = "baseline"


# Viewport badge colours; the control surface exposes these per slot.
BADGE_COLOURS = {
    Paradigm.RL: "purple",
    Paradigm.LLM: "blue",
    Paradigm.HUMAN: "orange",
    Paradigm.VLM: "teal",
    Paradigm.BASELINE: "gray",
}

# Observation modality each paradigm consumes.
PARADIGM_MODALITY = {
    Paradigm.RL: "tensor",
    Paradigm.LLM: "text",
    Paradigm.VLM: "text_image",
    Paradigm.HUMAN: "image",
    Paradigm.BASELINE: "text",  # content-free consumers get the cheap modality
}


@dataclass(frozen=True)
class WorkerAssignment:
    """Declarative binding of one paradigm to one agent slot."""

    agent_slot: str
    worker_type: Paradigm
    settings: dict[str, Any] = field(default_factory=dict)
    frozen: bool = False

    def __post_init__(self) -> None:
        if self.worker_type is Paradigm.BASELINE:
            kind = self.settings.get("kind", "random")
            if kind not in BASELINE_KINDS:
                raise ValueError(f"baseline slot {self.agent_slot!r}: unknown kind {kind!r}")

    @property
    def observation_mode(self) -> str:
        return self.settings.get("observation_mode", "egocentric")

    @property
    def max_image_history(self) -> int:
        default = 2 if self.worker_type is Paradigm.VLM else 0
        return int(self.settings.get("max_image_history", default))

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"worker_type": self.worker_type.value, "settings": dict(self.settings)}
        if self.frozen:
            doc["frozen"] = True
        return doc

    @classmethod
    def from_doc(cls, slot: str, doc: dict[str, Any]) -> "WorkerAssignment":
        return cls(
            agent_slot=slot,
            worker_type=Paradigm(doc["worker_type"]),
            settings=dict(doc.get("settings") or {}),
            frozen=bool(doc.get("frozen", False)),
        )
