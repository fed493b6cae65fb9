"""Run configuration documents: loading, validation, canonical digests."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .envcore.registry import task_ids
from .operators.paradigm import WorkerAssignment
from .protocol.canonical import canonical_line, canonical_loads
from .protocol.schemas import validation_errors

SCHEMA_VERSION = "1.0.0"


class ConfigError(ValueError):
    """Invalid configuration; message carries field-path diagnostics."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class RunConfig:
    """Declarative description of one scripted evaluation run."""

    operator_id: str
    env_name: str
    task: str
    assignments: tuple[WorkerAssignment, ...]  # canonical slot order
    episodes: int | None = None
    schema_version: str = SCHEMA_VERSION

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(a.agent_slot for a in self.assignments)

    def assignment(self, slot: str) -> WorkerAssignment:
        for a in self.assignments:
            if a.agent_slot == slot:
                return a
        raise KeyError(slot)

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "schema_version": self.schema_version,
            "operator_id": self.operator_id,
            "env_name": self.env_name,
            "task": self.task,
            "player_workers": {a.agent_slot: a.to_doc() for a in self.assignments},
        }
        if self.episodes is not None:
            doc["episodes"] = self.episodes
        return doc

    def canonical_bytes(self) -> bytes:
        return canonical_line(self.to_doc())

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def run_id(self, seed: int, episodes: int) -> str:
        """Deterministic run identity: telemetry byte-reproducibility requires
        that identical invocations agree on every recorded field."""
        material = self.canonical_bytes() + f"|seed={seed}|episodes={episodes}".encode()
        return "r" + hashlib.sha256(material).hexdigest()[:16]


def parse_run_config(doc: Any) -> RunConfig:
    problems = validation_errors("run_config", doc)
    if problems:
        raise ConfigError(problems)
    task = doc["task"]
    if task not in task_ids():
        raise ConfigError([f"task: unknown task {task!r}; known: {task_ids()}"])
    assignments = []
    for slot in sorted(doc["player_workers"]):
        try:
            assignments.append(WorkerAssignment.from_doc(slot, doc["player_workers"][slot]))
        except ValueError as exc:
            raise ConfigError([f"player_workers/{slot}: {exc}"]) from exc
    return RunConfig(
        operator_id=doc["operator_id"],
        env_name=doc["env_name"],
        task=task,
        assignments=tuple(assignments),
        episodes=doc.get("episodes"),
        schema_version=doc["schema_version"],
    )


def load_run_config(path: str | Path) -> RunConfig:
    raw = Path(path).read_text("utf-8")
    if not raw.strip():
        raise ConfigError(["<root>: empty config file"])
    try:
        doc = canonical_loads(raw)
    except ValueError as exc:
        raise ConfigError([f"<root>: invalid JSON: {exc}"]) from exc
    return parse_run_config(doc)


@dataclass(frozen=True)
class ManualSessionConfig:
    """Side-by-side replica session: one operator per replica, shared seed."""

    env_name: str
    task: str
    operators: tuple[RunConfig, ...] = field(default_factory=tuple)
    schema_version: str = SCHEMA_VERSION


def parse_manual_session_config(doc: Any) -> ManualSessionConfig:
    problems = validation_errors("manual_session_config", doc)
    if problems:
        raise ConfigError(problems)
    task = doc["task"]
    if task not in task_ids():
        raise ConfigError([f"task: unknown task {task!r}; known: {task_ids()}"])
    operators = []
    for i, op in enumerate(doc["operators"]):
        run_doc = {
            "schema_version": doc["schema_version"],
            "operator_id": op["operator_id"],
            "env_name": doc["env_name"],
            "task": task,
            "player_workers": op["player_workers"],
        }
        try:
            operators.append(parse_run_config(run_doc))
        except ConfigError as exc:
            raise ConfigError([f"operators/{i}/{p}" for p in exc.problems]) from exc
    return ManualSessionConfig(
        env_name=doc["env_name"],
        task=task,
        operators=tuple(operators),
        schema_version=doc["schema_version"],
    )
