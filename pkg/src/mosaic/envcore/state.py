"""Environment state value type and its canonical binary encoding.

The encoding is the determinism primitive for environments: equal states
produce equal bytes, checkpoints store these bytes, and tests hash them.
Layout is versioned and field-ordered; see docs/state_encoding.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

_MAGIC = b"MOS1"
_VERSION = 1


class StateCodecError(ValueError):
    """Canonical state bytes are malformed or from an unknown version."""


@dataclass(frozen=True)
class Transition:
    """Per-slot outcome of one environment step."""

    slot: str
    reward: int
    terminated: bool
    truncated: bool
    info: dict[str, Any] = field(default_factory=dict)
    observation: dict[str, Any] | None = None


@dataclass(frozen=True)
class EnvState:
    """Immutable snapshot of a grid-world episode.

    Treat every mapping field as frozen: stepping functions copy, they never
    mutate in place.
    """

    task_id: str
    width: int
    height: int
    grid: bytes  # width*height cell codes, row-major; 0 empty, 1 goal
    slots: tuple[str, ...]  # canonical (lexicographic) order
    positions: Mapping[str, tuple[int, int]]
    orientations: Mapping[str, int]
    team_of: Mapping[str, str]
    score: Mapping[str, int]
    pending_penalty: Mapping[str, int]  # turn-based attribution lag, see docs/envs.md
    step_index: int
    episode_index: int
    rng_state: int
    turn_index: int
    done: bool

    def evolve(self, **changes: Any) -> "EnvState":
        return replace(self, **changes)

    def cell(self, x: int, y: int) -> int:
        return self.grid[y * self.width + x]


def _pack_str(out: bytearray, s: str) -> None:
    data = s.encode("utf-8")
    if len(data) > 0xFFFF:
        raise StateCodecError("string field too long")
    out += struct.pack(">H", len(data))
    out += data


def encode_state(state: EnvState) -> bytes:
    """Serialize to the canonical byte string."""
    out = bytearray()
    out += _MAGIC
    out += struct.pack(">H", _VERSION)
    _pack_str(out, state.task_id)
    out += struct.pack(">HH", state.width, state.height)
    out += struct.pack(">IIQ", state.step_index, state.episode_index, state.rng_state)
    out += struct.pack(">H?", state.turn_index, state.done)
    out += struct.pack(">H", len(state.slots))
    for slot in state.slots:
        x, y = state.positions[slot]
        _pack_str(out, slot)
        out += struct.pack(">HHBh", x, y, state.orientations[slot], state.pending_penalty.get(slot, 0))
        _pack_str(out, state.team_of[slot])
    teams = sorted(state.score)
    out += struct.pack(">H", len(teams))
    for team in teams:
        _pack_str(out, team)
        out += struct.pack(">q", state.score[team])
    if len(state.grid) != state.width * state.height:
        raise StateCodecError("grid size does not match dimensions")
    out += state.grid
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise StateCodecError("truncated state bytes")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack(">H")
        return self.take(n).decode("utf-8")


def decode_state(data: bytes) -> EnvState:
    """Inverse of encode_state; raises StateCodecError on malformed input."""
    r = _Reader(data)
    if r.take(4) != _MAGIC:
        raise StateCodecError("bad magic")
    (version,) = r.unpack(">H")
    if version != _VERSION:
        raise StateCodecError(f"unsupported state version {version}")
    task_id = r.string()
    width, height = r.unpack(">HH")
    step_index, episode_index, rng_state = r.unpack(">IIQ")
    turn_index, done = r.unpack(">H?")
    (n_slots,) = r.unpack(">H")
    slots, positions, orientations, team_of, pending = [], {}, {}, {}, {}
    for _ in range(n_slots):
        slot = r.string()
        x, y, orient, pen = r.unpack(">HHBh")
        team = r.string()
        slots.append(slot)
        positions[slot] = (x, y)
        orientations[slot] = orient
        team_of[slot] = team
        if pen:
            pending[slot] = pen
    (n_teams,) = r.unpack(">H")
    score = {}
    for _ in range(n_teams):
        team = r.string()
        (score[team],) = r.unpack(">q")
    grid = r.take(width * height)
    if r.pos != len(r.data):
        raise StateCodecError("trailing bytes")
    return EnvState(
        task_id=task_id,
        width=width,
        height=height,
        grid=grid,
        slots=tuple(slots),
        positions=positions,
        orientations=orientations,
        team_of=team_of,
        score=score,
        pending_penalty=pending,
        step_index=step_index,
        episode_index=episode_index,
        rng_state=rng_state,
        turn_index=turn_index,
        done=done,
    )
