"""Baseline policies: uniform random, no-op, and cycling.

The random baseline draws exactly one ``randrange(n)`` from its dedicated
seeded stream per decision. Out-of-process baseline workers follow the same
draw discipline, so in-process and subprocess baselines produce identical
action streams for the same seed.
"""

from __future__ import annotations

import random

from ..envcore.actions import ActionSpace

BASELINE_KINDS = ("random", "noop", "cycle")


def baseline_action(
    kind: str,
    space: ActionSpace,
    step_index: int,
    rng: random.Random | None = None,
    null_action: int = 0,
) -> int:
    if kind == "random":
        if rng is None:
            raise ValueError("random baseline requires a seeded rng stream")
        return rng.randrange(space.n)
    if kind == "noop":
        return null_action
    if kind == "cycle":
        return step_index % space.n
    raise ValueError(f"unknown baseline kind {kind!r}")
