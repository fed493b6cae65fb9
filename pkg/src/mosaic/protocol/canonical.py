"""Canonical one-line JSON encoding shared by the wire protocol and telemetry.

Every document the platform emits — protocol messages, telemetry records,
event frames — goes through ``canonical_line`` so that equal documents always
produce equal bytes: keys sorted by codepoint, compact separators, UTF-8,
exactly one trailing newline.

Decimals are emitted as plain JSON number literals (``1.000`` stays
``1.000``), and ``canonical_loads`` parses JSON floats back into Decimal, so
fixed-precision values survive decode/encode round trips byte-for-byte.
"""

from __future__ import annotations

import json
import math
from decimal import Decimal
from typing import Any

# Hard framing limit: a serialized line longer than this is an error on both
# the encode and decode side (protects the supervisor from runaway workers).
MAX_LINE_BYTES = 1 << 20


class CanonicalError(ValueError):
    """A document cannot be canonically serialized."""


# C-accelerated string escaping; keeps non-ASCII raw, matching ensure_ascii=False.
_escape_string = json.encoder.encode_basestring


def _encode_value(value: Any, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, Decimal):
        if not value.is_finite():
            raise CanonicalError("non-finite Decimal is not serializable")
        out.append(str(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise CanonicalError("non-finite float is not serializable")
        out.append(repr(value))
    elif isinstance(value, str):
        out.append(_escape_string(value))
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode_value(item, out)
        out.append("]")
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise CanonicalError(f"non-string key {key!r}")
            if i:
                out.append(",")
            out.append(_escape_string(key))
            out.append(":")
            _encode_value(value[key], out)
        out.append("}")
    else:
        raise CanonicalError(f"value of type {type(value).__name__} is not serializable")


def _reject_default(value: Any) -> Any:
    raise TypeError(f"fast path cannot encode {type(value).__name__}")


def canonical_dumps(doc: Any) -> str:
    """Serialize ``doc`` to canonical compact JSON (no newline).

    Decimal-free documents go through the C encoder, which emits the same
    bytes as the explicit walk (sorted keys, compact separators, repr
    floats); documents holding Decimals take the explicit walk so their
    literals survive digit-for-digit.
    """
    try:
        return json.dumps(
            doc,
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
            allow_nan=False,
            default=_reject_default,
        )
    except ValueError as exc:
        raise CanonicalError(str(exc)) from exc
    except TypeError:
        out: list[str] = []
        _encode_value(doc, out)
        return "".join(out)


def canonical_line(doc: Any) -> bytes:
    """Serialize ``doc`` to one UTF-8 line including the ``\\n`` terminator."""
    data = (canonical_dumps(doc) + "\n").encode("utf-8")
    if len(data) > MAX_LINE_BYTES:
        raise CanonicalError(f"line of {len(data)} bytes exceeds {MAX_LINE_BYTES}")
    return data


def canonical_loads(text: str | bytes) -> Any:
    """Parse JSON, mapping number literals with a fraction/exponent to Decimal."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return json.loads(text, parse_float=Decimal)


def fixed_reward(value: Any) -> Decimal:
    """Quantize a reward to the platform-wide 3-fractional-digit grid."""
    return Decimal(value).quantize(Decimal("0.001"))
