"""Built-in scripted text-policy worker (the language-agent stand-in).

Reads the frozen v1 observation sentences, applies fixed rules, and answers
in chat style with a final ``ACTION: <label>`` token for the orchestrator's
parser. The multimodal flavour additionally acknowledges attached frames;
decisions stay text-driven so behaviour is deterministic.

Rule set v1:
- "You are standing on the goal."            -> stay
- "The goal is N step(s) ahead."             -> forward
- "Nearest opponent is N steps D [and ...]." -> move along the axis with the
  larger step count toward the opponent; first-mentioned axis on ties
- otherwise                                  -> stay
"""

from __future__ import annotations

import argparse
import re
import sys
from typing import Any

from .runtime import Policy, run_worker

_MOVE_RE = re.compile(r"(\d+) steps? (up|down|left|right)")
_GOAL_RE = re.compile(r"The goal is (\d+) steps? ahead")


def rule_v1(text: str) -> tuple[str, str]:
    """Map an observation sentence set to (label, short rationale)."""
    if "You are standing on the goal." in text:
        return "stay", "Already on the goal, holding position."
    if _GOAL_RE.search(text):
        return "forward", "The goal lies ahead, advancing."
    moves = _MOVE_RE.findall(text)
    if moves:
        best = max(moves, key=lambda m: int(m[0]))  # max is stable: ties keep the first
        return best[1], f"Closing the {best[1]} gap of {best[0]}."
    return "stay", "Nothing actionable in view."


class ScriptedTextPolicy(Policy):
    def __init__(self, kind: str):
        if kind not in ("llm", "vlm"):
            raise ValueError(f"kind must be llm or vlm, got {kind!r}")
        self.worker_kind = kind
        self.modalities = ("text",) if kind == "llm" else ("text", "image")
        self.max_image_history = 0 if kind == "llm" else 2
        self.labels: list[str] = []

    def on_reset(self, seed: int, env_metadata: dict[str, Any]) -> None:
        space = env_metadata.get("action_space") or {}
        self.labels = list(space.get("labels") or [])

    def decide(self, observation: dict[str, Any], info: dict[str, Any]) -> str:
        text = observation.get("text") or ""
        label, rationale = rule_v1(text)
        if label not in self.labels and self.labels:
            label = self.labels[0]
        parts = [rationale]
        images = observation.get("images")
        if images is not None:
            parts.append(f"I considered {len(images)} frame{'s' if len(images) != 1 else ''}.")
        parts.append(f"ACTION: {label}")
        return " ".join(parts)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="scripted text-policy worker")
    parser.add_argument("--kind", choices=("llm", "vlm"), default="llm")
    args = parser.parse_args(argv)
    return run_worker(ScriptedTextPolicy(args.kind))


if __name__ == "__main__":
    sys.exit(main())
