"""Built-in frozen-policy worker operating on tensor observations.

Stands in for a trained RL policy: deterministic, parameter-free, and
freezable by construction (there is nothing to mutate). Policies:

- ``forward``: always picks the action labelled "forward" (corridor).
- ``greedy_tag``: egocentric chase; moves to shrink the larger axis offset
  to the nearest opponent, vertical axis on ties (tag grids).
- ``stay``: always the null action.
"""

from __future__ import annotations

import argparse
import sys
from typing import Any

from .runtime import Policy, run_worker

POLICIES = ("forward", "greedy_tag", "stay")


def greedy_tag_action(shape: list[int], data: list[int], labels: list[str]) -> str:
    """Pick a chase move from a (h, w, 3) egocentric view; returns a label."""
    h, w, _ = shape
    cx, cy = w // 2, h // 2
    best: tuple[int, int, int] | None = None  # (dist, dy, dx)
    for y in range(h):
        for x in range(w):
            if data[(y * w + x) * 3 + 2]:  # opponent channel
                dx, dy = x - cx, y - cy
                dist = abs(dx) + abs(dy)
                if best is None or dist < best[0]:
                    best = (dist, dy, dx)
    if best is None:
        return "stay"
    _, dy, dx = best
    if abs(dy) >= abs(dx) and dy != 0:
        return "up" if dy < 0 else "down"
    if dx != 0:
        return "left" if dx < 0 else "right"
    return "stay"


class ScriptedPolicy(Policy):
    worker_kind = "rl"
    modalities = ("tensor",)

    def __init__(self, policy: str):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.policy = policy
        self.labels: list[str] = []
        self.null_action = 0

    def on_reset(self, seed: int, env_metadata: dict[str, Any]) -> None:
        space = env_metadata.get("action_space") or {}
        self.labels = list(space.get("labels") or [])
        self.null_action = int(space.get("null_action", 0))

    def _label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            return self.null_action

    def decide(self, observation: dict[str, Any], info: dict[str, Any]) -> int:
        if self.policy == "stay":
            return self.null_action
        if self.policy == "forward":
            return self._label_index("forward")
        shape = observation.get("shape") or []
        data = observation.get("data") or []
        if len(shape) != 3 or not data:
            return self.null_action
        return self._label_index(greedy_tag_action(shape, data, self.labels))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="frozen scripted policy worker")
    parser.add_argument("--policy", choices=POLICIES, default="greedy_tag")
    args = parser.parse_args(argv)
    return run_worker(ScriptedPolicy(args.policy))


if __name__ == "__main__":
    sys.exit(main())
