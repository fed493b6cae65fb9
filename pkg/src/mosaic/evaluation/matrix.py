"""Experiment matrix generation: adversarial rows A1-A7, cooperative C1-C8.

Rows fix the per-team paradigm composition for N=4 agents split 2/2. Team A
occupies the blue slots, team B the red slots. Every policy-backed
assignment is frozen: evaluation never mutates parameters, which keeps the
paradigm variable isolated from any co-adaptation effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..config import SCHEMA_VERSION, RunConfig
from ..envcore import get_env
from ..operators import Paradigm, WorkerAssignment

# Composition atoms: paradigm, baseline kind, co-trained marker.
_RL = ("rl", None, "solo")
_RL_CO = ("rl", None, "co_trained")
_LLM = ("llm", None, None)
_VLM = ("vlm", None, None)
_RANDOM = ("baseline", "random", None)
_NOOP = ("baseline", "noop", None)

ADVERSARIAL_ROWS: list[tuple[str, list[tuple], list[tuple]]] = [
    ("A1", [_RL, _RL], [_RL, _RL]),
    ("A2", [_LLM, _LLM], [_LLM, _LLM]),
    ("A3", [_VLM, _VLM], [_VLM, _VLM]),
    ("A4", [_RL, _RL], [_LLM, _LLM]),
    ("A5", [_RL, _RL], [_VLM, _VLM]),
    ("A6", [_LLM, _LLM], [_VLM, _VLM]),
    ("A7", [_RL, _RL], [_RANDOM, _RANDOM]),
]

COOPERATIVE_ROWS: list[tuple[str, list[tuple], list[tuple]]] = [
    ("C1", [_RL, _LLM], [_RL, _RANDOM]),
    ("C2", [_RL, _LLM], [_RL, _NOOP]),
    ("C3", [_RL, _VLM], [_RL, _RANDOM]),
    ("C4", [_RL, _VLM], [_RL, _NOOP]),
    ("C5", [_RL, _RL], [_RL, _RL]),
    ("C6", [_RL, _LLM], [_RL_CO, _RL_CO]),
    ("C7", [_RL, _VLM], [_RL_CO, _RL_CO]),
    ("C8", [_RL, _LLM], [_RL, _VLM]),
]

FAMILIES = {"adversarial": ADVERSARIAL_ROWS, "cooperative": COOPERATIVE_ROWS}

DEFAULT_TASK = "mosaic/TeamTag-2vs2-v1"


class MatrixError(ValueError):
    pass


class InfeasibleMatrix(MatrixError):
    def __init__(self, family: str, blocked: dict[str, str]):
        rows = ", ".join(f"{row} ({why})" for row, why in sorted(blocked.items()))
        super().__init__(f"{family} matrix infeasible: {rows}")
        self.blocked = blocked


@dataclass(frozen=True)
class MatrixSpec:
    """Pool sizes per paradigm; a row is feasible when each team's demand
    for a paradigm fits its pool (frozen policies may appear on both sides)."""

    family: str
    task: str = DEFAULT_TASK
    n_rl: int = 2
    n_llm: int = 2
    n_vlm: int = 2
    n_h: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise MatrixError(f"unknown family {self.family!r}; known: {sorted(FAMILIES)}")

    def pool(self, paradigm: str) -> int:
        return {"rl": self.n_rl, "llm": self.n_llm, "vlm": self.n_vlm, "human": self.n_h}.get(
            paradigm, 10**9  # baselines are unlimited
        )


def _team_demand(team: list[tuple]) -> dict[str, int]:
    demand: dict[str, int] = {}
    for paradigm, _, _ in team:
        if paradigm != "baseline":
            demand[paradigm] = demand.get(paradigm, 0) + 1
    return demand


def _assignment(slot: str, atom: tuple, pool_index: int) -> WorkerAssignment:
    paradigm, kind, training = atom
    if paradigm == "rl":
        settings: dict[str, Any] = {
            "policy": "greedy_tag",
            "agent_id": f"rl_{pool_index}",
            "training": training,
        }
        return WorkerAssignment(slot, Paradigm.RL, settings, frozen=True)
    if paradigm == "llm":
        return WorkerAssignment(slot, Paradigm.LLM, {"rules": "v1", "agent_id": f"llm_{pool_index}"})
    if paradigm == "vlm":
        return WorkerAssignment(
            slot, Paradigm.VLM,
            {"rules": "v1", "max_image_history": 2, "agent_id": f"vlm_{pool_index}"},
        )
    return WorkerAssignment(slot, Paradigm.BASELINE, {"kind": kind})


def build_matrix(spec: MatrixSpec) -> list[RunConfig]:
    """Expand one family into concrete run configs, row for row."""
    env = get_env(spec.task)
    teams = sorted(env.teams)  # team A = first, team B = second
    if len(teams) != 2:
        raise MatrixError(f"task {spec.task} does not define two teams")
    team_a_slots = list(env.teams[teams[0]])
    team_b_slots = list(env.teams[teams[1]])

    rows = FAMILIES[spec.family]
    blocked: dict[str, str] = {}
    for row_id, team_a, team_b in rows:
        for side, team in (("A", team_a), ("B", team_b)):
            for paradigm, need in _team_demand(team).items():
                if need > spec.pool(paradigm):
                    blocked[row_id] = f"team {side} needs {need} {paradigm}, pool has {spec.pool(paradigm)}"
    if blocked:
        raise InfeasibleMatrix(spec.family, blocked)

    configs = []
    for row_id, team_a, team_b in rows:
        assignments = []
        for slots, team in ((team_a_slots, team_a), (team_b_slots, team_b)):
            counters: dict[str, int] = {}
            for slot, atom in zip(slots, team):
                index = counters.get(atom[0], 0)
                counters[atom[0]] = index + 1
                assignments.append(_assignment(slot, atom, index))
        assignments.sort(key=lambda a: a.agent_slot)
        configs.append(
            RunConfig(
                operator_id=row_id,
                env_name="mosaic",
                task=spec.task,
                assignments=tuple(assignments),
                schema_version=SCHEMA_VERSION,
            )
        )
    return configs


def write_matrix(spec: MatrixSpec, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for config in build_matrix(spec):
        path = out / f"{config.operator_id}.config"
        path.write_bytes(config.canonical_bytes())
        paths.append(path)
    return paths


def composition_of(config: RunConfig) -> dict[str, list[str]]:
    """Per-team multiset of paradigms (baselines tagged by kind), sorted."""
    env = get_env(config.task)
    out: dict[str, list[str]] = {}
    for team, members in sorted(env.teams.items()):
        atoms = []
        for slot in members:
            a = config.assignment(slot)
            if a.worker_type is Paradigm.BASELINE:
                atoms.append(f"baseline:{a.settings.get('kind', 'random')}")
            else:
                atoms.append(a.worker_type.value)
        out[team] = sorted(atoms)
    return out
