"""ASCII and RGB renders; pure functions of the state."""

from __future__ import annotations

import numpy as np

from .state import EnvState

TILE = 16

# Fixed palette, RGB. Slot glyph/colour assignment is positional within the
# canonical slot order of each team.
EMPTY = (28, 28, 32)
GOAL = (250, 200, 60)
SOLO_AGENT = (80, 160, 255)
TEAM_COLOURS = {
    "blue": [(70, 130, 250), (110, 170, 255)],
    "red": [(250, 90, 70), (255, 140, 120)],
    "solo": [SOLO_AGENT, SOLO_AGENT],
}
GLYPHS = {"blue": "bB", "red": "rR", "solo": "aA"}


def _slot_marker(state: EnvState, slot: str) -> tuple[str, tuple[int, int, int]]:
    team = state.team_of[slot]
    members = [s for s in state.slots if state.team_of[s] == team]
    idx = members.index(slot) % 2
    glyphs = GLYPHS.get(team, "xX")
    colours = TEAM_COLOURS.get(team, [SOLO_AGENT, SOLO_AGENT])
    return glyphs[idx], colours[idx]


def render_ascii(state: EnvState) -> str:
    """One character per cell, rows joined by newlines."""
    rows = []
    occupants = {pos: slot for slot, pos in state.positions.items()}
    for y in range(state.height):
        row = []
        for x in range(state.width):
            slot = occupants.get((x, y))
            if slot is not None:
                row.append(_slot_marker(state, slot)[0])
            elif state.cell(x, y) == 1:
                row.append("G")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows)


def render_cells(state: EnvState) -> np.ndarray:
    """Cell-resolution RGB frame, shape (height, width, 3), dtype uint8."""
    img = np.empty((state.height, state.width, 3), dtype=np.uint8)
    img[:, :] = EMPTY
    for y in range(state.height):
        for x in range(state.width):
            if state.cell(x, y) == 1:
                img[y, x] = GOAL
    for slot, (x, y) in state.positions.items():
        img[y, x] = _slot_marker(state, slot)[1]
    return img


def render_rgb(state: EnvState, tile: int = TILE) -> np.ndarray:
    """Display-resolution RGB frame, (height*tile, width*tile, 3)."""
    return np.kron(render_cells(state), np.ones((tile, tile, 1), dtype=np.uint8))
