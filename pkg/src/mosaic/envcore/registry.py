"""Task registry: task ids to environment constructors."""

from __future__ import annotations

from typing import Callable

from .envs import CorridorEnv, Env, TeamTagEnv
from .state import EnvState


class UnknownTaskError(KeyError):
    pass


_REGISTRY: dict[str, Callable[[], Env]] = {
    "mosaic/Corridor-v1": CorridorEnv,
    "mosaic/TeamTag-2vs2-v1": TeamTagEnv,
}


def task_ids() -> list[str]:
    return sorted(_REGISTRY)


def get_env(task_id: str) -> Env:
    try:
        return _REGISTRY[task_id]()
    except KeyError:
        raise UnknownTaskError(f"unknown task {task_id!r}; known: {task_ids()}") from None


def make_env(task_id: str, seed: int, episode_index: int = 0) -> tuple[Env, EnvState]:
    """Instantiate a registered task; the state is fully determined by (task_id, seed)."""
    env = get_env(task_id)
    return env, env.initial_state(seed, episode_index)
