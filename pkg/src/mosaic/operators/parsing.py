"""Deterministic text-to-action parsing.

The reference grammars are documented in docs/parsing.md; the fixture corpus
under fixtures/parse_corpus.json was scored by hand against that document.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass

from ..envcore.actions import ActionSpace

GRAMMARS = ("strict_integer", "labeled_keyword", "json_field")
FALLBACKS = ("error", "noop", "random_logged")

PARSED = "parsed"
FELL_BACK_NOOP = "fell_back_noop"
FELL_BACK_RANDOM = "fell_back_random"
ERROR = "error"

_INT_RE = re.compile(r"^[+-]?\d+$")
_ACTION_RE = re.compile(r"ACTION:\s*([A-Za-z0-9_-]+)", re.IGNORECASE)


class ParseActionError(ValueError):
    """Unparseable text under fallback=error; carries the offending text."""

    def __init__(self, text: str, reason: str):
        super().__init__(f"{reason}: {text!r}")
        self.text = text
        self.reason = reason


@dataclass(frozen=True)
class ParsePolicy:
    grammar: str = "labeled_keyword"
    fallback: str = "noop"

    def __post_init__(self) -> None:
        if self.grammar not in GRAMMARS:
            raise ValueError(f"unknown grammar {self.grammar!r}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"unknown fallback {self.fallback!r}")


def _try_parse(text: str, space: ActionSpace, grammar: str) -> int | None:
    if grammar == "strict_integer":
        stripped = text.strip()
        if not _INT_RE.match(stripped):
            return None
        value = int(stripped)
        return value if space.contains(value) else None

    if grammar == "labeled_keyword":
        matches = _ACTION_RE.findall(text)
        if not matches or space.labels is None:
            return None
        token = matches[-1].lower()  # last ACTION: token wins
        for i, label in enumerate(space.labels):
            if label.lower() == token:
                return i
        return None

    # json_field: the whole text is one JSON object with an "action" field
    # holding either an in-range integer or a known label.
    try:
        doc = json.loads(text)
    except ValueError:
        return None
    if not isinstance(doc, dict) or "action" not in doc:
        return None
    value = doc["action"]
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value if space.contains(value) else None
    if isinstance(value, str) and space.labels is not None:
        for i, label in enumerate(space.labels):
            if label.lower() == value.lower():
                return i
    return None


def parse_action(
    text: str,
    space: ActionSpace,
    policy: ParsePolicy,
    fallback_rng: random.Random | None = None,
    null_action: int = 0,
) -> tuple[int, str]:
    """Map agent text to an action; returns (action, outcome).

    Pure in (text, space, policy, rng state): the dedicated fallback stream
    is consumed only on the random fallback path.
    """
    action = _try_parse(text, space, policy.grammar)
    if action is not None:
        return action, PARSED
    if policy.fallback == "noop":
        return null_action, FELL_BACK_NOOP
    if policy.fallback == "random_logged":
        if fallback_rng is None:
            raise ValueError("random_logged fallback requires a dedicated rng stream")
        return fallback_rng.randrange(space.n), FELL_BACK_RANDOM
    raise ParseActionError(text, f"unparseable under {policy.grammar}")
