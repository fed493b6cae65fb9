"""Built-in baseline worker: random, noop, or cycling behaviour.

The random kind draws exactly one ``randrange(n)`` per decision from
``random.Random(seed)``, the platform-wide draw discipline for uniform
baselines.
"""

from __future__ import annotations

import argparse
import random
import sys
from typing import Any

from .runtime import Policy, run_worker


class BaselinePolicy(Policy):
    worker_kind = "baseline"
    modalities = ("tensor", "text")

    def __init__(self, kind: str):
        if kind not in ("random", "noop", "cycle"):
            raise ValueError(f"unknown baseline kind {kind!r}")
        self.kind = kind
        self.rng = random.Random(0)
        self.n_actions = 1
        self.null_action = 0
        self.steps = 0

    def on_reset(self, seed: int, env_metadata: dict[str, Any]) -> None:
        space = env_metadata.get("action_space") or {}
        self.n_actions = int(space.get("n", 1))
        self.null_action = int(space.get("null_action", 0))
        self.rng = random.Random(seed)
        self.steps = 0

    def decide(self, observation: dict[str, Any], info: dict[str, Any]) -> int:
        if self.kind == "random":
            action = self.rng.randrange(self.n_actions)
        elif self.kind == "noop":
            action = self.null_action
        else:
            action = self.steps % self.n_actions
        self.steps += 1
        return action

    def fast_forward(self, decision_count: int) -> None:
        for _ in range(decision_count):
            self.decide({}, {})


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="baseline worker")
    parser.add_argument("--kind", choices=("random", "noop", "cycle"), default="random")
    args = parser.parse_args(argv)
    return run_worker(BaselinePolicy(args.kind))


if __name__ == "__main__":
    sys.exit(main())
