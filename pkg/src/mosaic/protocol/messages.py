"""Worker wire protocol: message types, framing, validation.

One message per UTF-8 line. Commands carry a ``cmd`` key, responses a
``resp`` key; both carry ``correlation_id`` and a semantic version under
``v``. All remaining top-level keys are the payload. Unknown payload keys at
the same major version are preserved through decode/encode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any

from .canonical import MAX_LINE_BYTES, CanonicalError, canonical_line, canonical_loads

PROTOCOL_VERSION = "1.0.0"

COMMAND_NAMES = frozenset({"reset", "step", "stop", "select_action", "restore", "train"})
RESPONSE_NAMES = frozenset({"ready", "step_result", "episode_end", "error", "heartbeat", "handshake"})

_RESERVED_KEYS = frozenset({"cmd", "resp", "correlation_id", "v"})

WORKER_KINDS = frozenset({"rl", "llm", "vlm", "human", "baseline"})
MODALITIES = frozenset({"tensor", "text", "image"})

# Required payload fields per message name: field -> type predicate name.
# Mirrors the published JSON Schema documents under schemas/v1/.
_NUMBER = (int, Decimal, float)
_REQUIRED: dict[str, dict[str, Any]] = {
    "reset": {"seed": int},
    "step": {},
    "stop": {},
    "select_action": {"observation": dict},
    "restore": {"state": dict},
    "train": {},
    "ready": {"seed": int, "observation_shape": list},
    "step_result": {},  # action/raw_text checked below (at least one required)
    "episode_end": {"total_reward": _NUMBER, "episode_length": int},
    "error": {"message": str},
    "heartbeat": {},
    "handshake": {
        "worker_kind": str,
        "supported_commands": list,
        "observation_modalities": list,
        "max_image_history": int,
        "schema_version": str,
    },
}


class ProtocolError(Exception):
    """Base class for wire protocol failures."""


class EncodeError(ProtocolError):
    """A message cannot be serialized; names the offending key."""


@dataclass
class DecodeError(ProtocolError):
    """A line could not be decoded into a valid message.

    ``failure_class`` is one of ``syntax``, ``unknown-name``, ``schema``,
    ``version``.
    """

    failure_class: str
    detail: str
    raw_line: str = ""
    field: str | None = None

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return f"{self.failure_class}: {self.detail}"


@dataclass(frozen=True)
class ProtocolMessage:
    """One framed command or typed response on the worker wire."""

    kind: str  # "command" | "response"
    name: str
    correlation_id: int
    payload: dict[str, Any] = field(default_factory=dict)
    protocol_version: str = PROTOCOL_VERSION

    def get(self, key: str, default: Any = None) -> Any:
        return self.payload.get(key, default)


def command(name: str, correlation_id: int, **payload: Any) -> ProtocolMessage:
    return ProtocolMessage("command", name, correlation_id, payload)


def response(name: str, correlation_id: int, **payload: Any) -> ProtocolMessage:
    return ProtocolMessage("response", name, correlation_id, payload)


def parse_version(version: str) -> tuple[int, int, int]:
    parts = version.split(".")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ValueError(f"not a semantic version: {version!r}")
    return int(parts[0]), int(parts[1]), int(parts[2])


def _check_payload(name: str, payload: dict[str, Any]) -> str | None:
    """Return the offending field name if the payload violates the schema."""
    for key, typ in _REQUIRED[name].items():
        if key not in payload:
            return key
        value = payload[key]
        if isinstance(value, bool) and typ is int:
            return key
        if not isinstance(value, typ):
            return key
    if name == "reset" and payload["seed"] < 0:
        return "seed"
    if name == "step_result":
        action = payload.get("action")
        raw_text = payload.get("raw_text")
        if action is None and raw_text is None:
            return "action"
        if action is not None and (isinstance(action, bool) or not isinstance(action, int)):
            return "action"
        if raw_text is not None and not isinstance(raw_text, str):
            return "raw_text"
    if name == "episode_end" and payload["episode_length"] < 1:
        return "episode_length"
    return None


def encode_message(msg: ProtocolMessage) -> bytes:
    """Serialize a message to one canonical line (with trailing newline)."""
    if msg.kind == "command":
        if msg.name not in COMMAND_NAMES:
            raise EncodeError(f"unknown command name {msg.name!r}")
        doc: dict[str, Any] = {"cmd": msg.name}
    elif msg.kind == "response":
        if msg.name not in RESPONSE_NAMES:
            raise EncodeError(f"unknown response name {msg.name!r}")
        doc = {"resp": msg.name}
    else:
        raise EncodeError(f"unknown message kind {msg.kind!r}")
    bad = _RESERVED_KEYS.intersection(msg.payload)
    if bad:
        raise EncodeError(f"payload key {sorted(bad)[0]!r} shadows a framing key")
    offending = _check_payload(msg.name, msg.payload)
    if offending is not None:
        raise EncodeError(f"invalid or missing field {offending!r} for {msg.name!r}")
    doc.update(msg.payload)
    doc["correlation_id"] = msg.correlation_id
    doc["v"] = msg.protocol_version
    try:
        return canonical_line(doc)
    except CanonicalError as exc:
        raise EncodeError(str(exc)) from exc


def decode_message(line: str | bytes) -> ProtocolMessage:
    """Decode one line into a validated message; raises DecodeError on any failure."""
    if isinstance(line, bytes):
        if len(line) > MAX_LINE_BYTES:
            raise DecodeError("syntax", "line exceeds framing limit", "")
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("syntax", f"not UTF-8: {exc}", "") from exc
    raw = line.rstrip("\n")
    if len(raw) > MAX_LINE_BYTES:
        raise DecodeError("syntax", "line exceeds framing limit", raw[:256])
    if "\n" in raw:
        raise DecodeError("syntax", "embedded newline", raw[:256])
    try:
        doc = canonical_loads(raw)
    except ValueError as exc:
        raise DecodeError("syntax", f"invalid JSON: {exc}", raw[:256]) from exc
    if not isinstance(doc, dict):
        raise DecodeError("schema", "top level is not an object", raw[:256])

    if "cmd" in doc and "resp" in doc:
        raise DecodeError("schema", "both cmd and resp present", raw[:256])
    if "cmd" in doc:
        kind, name, names = "command", doc.pop("cmd"), COMMAND_NAMES
    elif "resp" in doc:
        kind, name, names = "response", doc.pop("resp"), RESPONSE_NAMES
    else:
        raise DecodeError("schema", "neither cmd nor resp present", raw[:256], field="cmd")
    if not isinstance(name, str) or name not in names:
        raise DecodeError("unknown-name", f"unknown {kind} name {name!r}", raw[:256])

    version = doc.pop("v", None)
    if not isinstance(version, str):
        raise DecodeError("schema", "missing version key 'v'", raw[:256], field="v")
    try:
        major, _, _ = parse_version(version)
    except ValueError as exc:
        raise DecodeError("version", str(exc), raw[:256], field="v") from exc
    if major != parse_version(PROTOCOL_VERSION)[0]:
        raise DecodeError("version", f"major version {major} not supported", raw[:256], field="v")

    correlation_id = doc.pop("correlation_id", None)
    if isinstance(correlation_id, bool) or not isinstance(correlation_id, int) or correlation_id < 0:
        raise DecodeError("schema", "missing or invalid correlation_id", raw[:256], field="correlation_id")

    offending = _check_payload(name, doc)
    if offending is not None:
        raise DecodeError("schema", f"invalid or missing field {offending!r} for {name!r}", raw[:256], field=offending)
    return ProtocolMessage(kind, name, correlation_id, doc, version)
