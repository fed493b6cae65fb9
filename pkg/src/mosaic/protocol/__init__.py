from .canonical import (
    MAX_LINE_BYTES,
    CanonicalError,
    canonical_dumps,
    canonical_line,
    canonical_loads,
    fixed_reward,
)
from .messages import (
    COMMAND_NAMES,
    MODALITIES,
    PROTOCOL_VERSION,
    RESPONSE_NAMES,
    WORKER_KINDS,
    DecodeError,
    EncodeError,
    ProtocolError,
    ProtocolMessage,
    command,
    decode_message,
    encode_message,
    parse_version,
    response,
)
from .negotiate import CapabilityManifest, NegotiatedSession, NegotiationError, negotiate

__all__ = [
    "MAX_LINE_BYTES",
    "CanonicalError",
    "canonical_dumps",
    "canonical_line",
    "canonical_loads",
    "fixed_reward",
    "COMMAND_NAMES",
    "MODALITIES",
    "PROTOCOL_VERSION",
    "RESPONSE_NAMES",
    "WORKER_KINDS",
    "DecodeError",
    "EncodeError",
    "ProtocolError",
    "ProtocolMessage",
    "command",
    "decode_message",
    "encode_message",
    "parse_version",
    "response",
    "CapabilityManifest",
    "NegotiatedSession",
    "NegotiationError",
    "negotiate",
]
