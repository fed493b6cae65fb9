"""Discrete action space shared by every paradigm after parsing."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ActionSpace:
    """Integer actions 0..n-1 with optional unique labels."""

    n: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("action space must have at least one action")
        if self.labels is not None:
            if len(self.labels) != self.n:
                raise ValueError("labels length must equal n")
            if len(set(self.labels)) != self.n:
                raise ValueError("labels must be unique")

    def contains(self, action: int) -> bool:
        return isinstance(action, int) and not isinstance(action, bool) and 0 <= action < self.n

    def index_of(self, label: str) -> int | None:
        if self.labels is None:
            return None
        try:
            return self.labels.index(label)
        except ValueError:
            return None
