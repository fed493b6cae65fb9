"""Capability handshake: manifests and session negotiation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .messages import (
    MODALITIES,
    PROTOCOL_VERSION,
    WORKER_KINDS,
    ProtocolMessage,
    parse_version,
)


class NegotiationError(Exception):
    """Handshake rejected; ``unmet`` lists every failed requirement."""

    def __init__(self, unmet: list[str]):
        super().__init__("; ".join(unmet))
        self.unmet = unmet


@dataclass(frozen=True)
class CapabilityManifest:
    """What a worker (or the orchestrator, as a requirement) can do."""

    worker_kind: str
    supported_commands: frozenset[str]
    observation_modalities: frozenset[str]
    max_image_history: int = 0
    schema_version: str = PROTOCOL_VERSION
    env_metadata: dict[str, Any] = field(default_factory=dict)

    def violations(self) -> list[str]:
        out = []
        if self.worker_kind not in WORKER_KINDS:
            out.append(f"unknown worker_kind {self.worker_kind!r}")
        unknown = self.observation_modalities - MODALITIES
        if unknown:
            out.append(f"unknown modalities {sorted(unknown)}")
        if self.max_image_history < 0:
            out.append("max_image_history must be >= 0")
        if self.max_image_history > 0 and "image" not in self.observation_modalities:
            out.append("max_image_history > 0 requires the image modality")
        if not {"reset", "stop"} <= self.supported_commands:
            out.append("supported_commands must include reset and stop")
        return out

    @classmethod
    def from_message(cls, msg: ProtocolMessage) -> "CapabilityManifest":
        if msg.name != "handshake":
            raise NegotiationError([f"expected handshake, got {msg.name!r}"])
        return cls(
            worker_kind=msg.payload["worker_kind"],
            supported_commands=frozenset(msg.payload["supported_commands"]),
            observation_modalities=frozenset(msg.payload["observation_modalities"]),
            max_image_history=msg.payload["max_image_history"],
            schema_version=msg.payload["schema_version"],
            env_metadata=msg.get("env_metadata") or {},
        )

    def to_payload(self) -> dict[str, Any]:
        return {
            "worker_kind": self.worker_kind,
            "supported_commands": sorted(self.supported_commands),
            "observation_modalities": sorted(self.observation_modalities),
            "max_image_history": self.max_image_history,
            "schema_version": self.schema_version,
            "env_metadata": self.env_metadata,
        }


@dataclass(frozen=True)
class NegotiatedSession:
    """Outcome of a successful handshake."""

    worker_kind: str
    schema_version: str
    modalities: frozenset[str]
    supported_commands: frozenset[str]
    env_metadata: dict[str, Any]


def negotiate(handshake: CapabilityManifest, required: CapabilityManifest) -> NegotiatedSession:
    """Intersect a worker's manifest with the orchestrator's requirements."""
    unmet = handshake.violations()
    try:
        ours = parse_version(required.schema_version)
        theirs = parse_version(handshake.schema_version)
        if ours[0] != theirs[0]:
            unmet.append(
                f"major version mismatch: worker {handshake.schema_version}, "
                f"orchestrator {required.schema_version}"
            )
    except ValueError as exc:
        unmet.append(f"bad schema_version: {exc}")
        theirs = ours = (0, 0, 0)
    missing = required.supported_commands - handshake.supported_commands
    if missing:
        unmet.append(f"missing commands {sorted(missing)}")
    lacking = required.observation_modalities - handshake.observation_modalities
    if lacking:
        unmet.append(f"missing modality {sorted(lacking)}")
    if required.worker_kind != handshake.worker_kind:
        unmet.append(
            f"worker_kind mismatch: expected {required.worker_kind!r}, got {handshake.worker_kind!r}"
        )
    if unmet:
        raise NegotiationError(unmet)
    agreed = min(ours, theirs)
    return NegotiatedSession(
        worker_kind=handshake.worker_kind,
        schema_version=".".join(str(p) for p in agreed),
        modalities=handshake.observation_modalities & (required.observation_modalities or MODALITIES),
        supported_commands=frozenset(handshake.supported_commands),
        env_metadata=dict(handshake.env_metadata),
    )
