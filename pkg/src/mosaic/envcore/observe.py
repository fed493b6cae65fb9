"""Per-paradigm observation serialization.

Payloads are plain wire-ready dicts with exactly the fields their modality
implies. Text templates are frozen v1 strings: text-policy workers key off
them, so any wording change is a schema version bump.
"""

from __future__ import annotations

import base64
import hashlib
from typing import Any, Sequence

from ..protocol.canonical import canonical_line
from .envs import CorridorEnv, Env, TeamTagEnv
from .render import render_cells
from .state import EnvState

MODALITY_FIELDS = {
    "tensor": ("modality", "shape", "data"),
    "text": ("modality", "text"),
    "text_image": ("modality", "text", "images"),
    "image": ("modality", "image"),
}


class ObservationError(ValueError):
    pass


def obs_digest(payload: dict[str, Any]) -> str:
    return hashlib.sha256(canonical_line(payload)).hexdigest()[:16]


def _image_doc(frame) -> dict[str, Any]:
    h, w, c = frame.shape
    return {"shape": [int(h), int(w), int(c)], "b64": base64.b64encode(frame.tobytes()).decode("ascii")}


def _toroidal_offset(delta: int, size: int) -> int:
    """Shortest signed offset on a ring (positive = down/right)."""
    delta %= size
    if delta > size // 2:
        delta -= size
    return delta


def _steps_phrase(n: int, pos_word: str, neg_word: str) -> str | None:
    if n == 0:
        return None
    word = pos_word if n > 0 else neg_word
    n = abs(n)
    return f"{n} step{'s' if n != 1 else ''} {word}"


def _tensor_corridor(env: CorridorEnv, state: EnvState, slot: str) -> list[int]:
    agent_x = state.positions[slot][0]
    data = []
    for x in range(env.length):
        data.append(1 if x == agent_x else 0)
        data.append(state.cell(x, 0))
    return data


def _tensor_teamtag(env: TeamTagEnv, state: EnvState, slot: str) -> list[int]:
    # Egocentric full-board view: torus-shifted so the observer sits at the
    # center cell; channels (self, teammate, opponent), row-major.
    w, h = env.width, env.height
    cx, cy = w // 2, h // 2
    sx, sy = state.positions[slot]
    data = [0] * (w * h * 3)
    my_team = state.team_of[slot]
    for other, (x, y) in state.positions.items():
        vx = (x - sx + cx) % w
        vy = (y - sy + cy) % h
        if other == slot:
            channel = 0
        elif state.team_of[other] == my_team:
            channel = 1
        else:
            channel = 2
        data[(vy * w + vx) * 3 + channel] = 1
    return data


def _text_corridor(env: CorridorEnv, state: EnvState, slot: str) -> str:
    x = state.positions[slot][0]
    goal = env.length - 1
    if x == goal:
        return "You are standing on the goal."
    n = goal - x
    return (
        f"You are in a corridor of length {env.length}. "
        f"The goal is {n} step{'s' if n != 1 else ''} ahead."
    )


def _text_teamtag(env: TeamTagEnv, state: EnvState, slot: str, observation_mode: str) -> str:
    team = state.team_of[slot]
    sx, sy = state.positions[slot]
    opponents = [s for s in state.slots if state.team_of[s] != team]
    best: tuple[int, str] | None = None
    for opp in opponents:
        ox, oy = state.positions[opp]
        dx = _toroidal_offset(ox - sx, env.width)
        dy = _toroidal_offset(oy - sy, env.height)
        dist = abs(dx) + abs(dy)
        if best is None or dist < best[0]:
            phrases = [
                p
                for p in (
                    _steps_phrase(dy, "down", "up"),
                    _steps_phrase(dx, "right", "left"),
                )
                if p
            ]
            best = (dist, " and ".join(phrases))
    parts = [f"You are {slot} on team {team}."]
    if best is not None:
        parts.append(f"Nearest opponent is {best[1]}.")
    if observation_mode == "visible_teammates":
        parts.append(f"You are at ({sx}, {sy}).")
        for mate in state.slots:
            if mate != slot and state.team_of[mate] == team:
                mx, my = state.positions[mate]
                parts.append(f"Your teammate {mate} is at ({mx}, {my}).")
    return " ".join(parts)


def serialize_obs(
    env: Env,
    state: EnvState,
    slot: str,
    modality: str,
    observation_mode: str = "egocentric",
    max_image_history: int = 0,
    frame_history: Sequence[Any] | None = None,
) -> dict[str, Any]:
    """Build the observation payload for one slot.

    ``frame_history`` supplies up to ``max_image_history`` prior cell-resolution
    frames (oldest first, current frame last); the engine owns that buffer.
    """
    if slot not in env.slots:
        raise ObservationError(f"unknown slot {slot!r}")
    if modality not in MODALITY_FIELDS:
        raise ObservationError(f"unsupported modality {modality!r}")
    if observation_mode not in ("egocentric", "visible_teammates"):
        raise ObservationError(f"unknown observation_mode {observation_mode!r}")

    if modality == "tensor":
        if isinstance(env, CorridorEnv):
            data = _tensor_corridor(env, state, slot)
        elif isinstance(env, TeamTagEnv):
            data = _tensor_teamtag(env, state, slot)
        else:
            raise ObservationError(f"no tensor layout for {env.task_id}")
        shape = list(env.tensor_shape())
        return {"modality": "tensor", "shape": shape, "data": data}

    if modality in ("text", "text_image"):
        if isinstance(env, CorridorEnv):
            text = _text_corridor(env, state, slot)
        elif isinstance(env, TeamTagEnv):
            text = _text_teamtag(env, state, slot, observation_mode)
        else:
            raise ObservationError(f"no text template for {env.task_id}")
        if modality == "text":
            return {"modality": "text", "text": text}
        frames = list(frame_history or [])[-max_image_history:] if max_image_history > 0 else []
        if max_image_history > 0 and not frames:
            frames = [render_cells(state)]
        return {
            "modality": "text_image",
            "text": text,
            "images": [_image_doc(f) for f in frames],
        }

    return {"modality": "image", "image": _image_doc(render_cells(state))}
