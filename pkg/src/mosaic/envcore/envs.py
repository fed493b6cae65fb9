"""Built-in deterministic grid worlds: Corridor and TeamTag.

Dynamics are documented rule-for-rule in docs/envs.md; tests hand-simulate
from that document. All stochasticity flows through the SplitMix64 state
carried in EnvState.rng_state.
"""

from __future__ import annotations

from typing import Mapping

from . import rng
from .actions import ActionSpace
from .state import EnvState, Transition


class EnvError(ValueError):
    """Illegal step request (bad slot, bad action, out of turn)."""


class Env:
    """Stateless rule bundle; all episode data lives in EnvState values."""

    task_id: str
    slots: tuple[str, ...]
    teams: dict[str, tuple[str, ...]]
    action_space: ActionSpace
    null_action: int = 0
    horizon: int

    def initial_state(self, seed: int, episode_index: int = 0) -> EnvState:
        raise NotImplementedError

    def metadata(self) -> dict:
        """Env description shipped to workers inside the reset command."""
        return {
            "task_id": self.task_id,
            "action_space": {
                "n": self.action_space.n,
                "labels": list(self.action_space.labels or ()),
                "null_action": self.null_action,
            },
            "observation_shape": list(self.tensor_shape()),
            "slots": list(self.slots),
            "teams": {team: list(members) for team, members in self.teams.items()},
            "horizon": self.horizon,
        }

    def tensor_shape(self) -> tuple[int, int, int]:
        raise NotImplementedError

    def team_partition(self) -> dict[str, tuple[str, ...]]:
        return dict(self.teams)

    # -- stepping ----------------------------------------------------------

    def _check_action(self, slot: str, action: int) -> None:
        if slot not in self.slots:
            raise EnvError(f"unknown slot {slot!r}")
        if not self.action_space.contains(action):
            raise EnvError(f"action {action!r} out of range for {slot}")

    def step_parallel(self, state: EnvState, actions: Mapping[str, int]) -> tuple[EnvState, list[Transition]]:
        if state.done:
            raise EnvError("episode already finished")
        if state.turn_index != 0:
            raise EnvError("cannot step_parallel mid turn cycle")
        if set(actions) != set(self.slots):
            missing = sorted(set(self.slots) - set(actions))
            extra = sorted(set(actions) - set(self.slots))
            raise EnvError(f"joint action must cover slots exactly (missing={missing}, extra={extra})")
        for slot in self.slots:
            self._check_action(slot, actions[slot])
        rewards = {slot: 0 for slot in self.slots}
        infos: dict[str, dict] = {slot: {} for slot in self.slots}
        work = _Work(state)
        for slot in self.slots:
            if work.cancelled.get(slot):
                infos[slot]["cancelled"] = "tagged_before_acting"
                continue
            self._apply(work, slot, actions[slot], rewards, infos)
        next_state, terminated, truncated = self._finish_step(work)
        transitions = [
            Transition(
                slot=slot,
                reward=rewards[slot],
                terminated=terminated,
                truncated=truncated,
                info=infos[slot],
            )
            for slot in self.slots
        ]
        return next_state, transitions

    def step_aec(self, state: EnvState, slot: str, action: int) -> tuple[EnvState, Transition, str]:
        if state.done:
            raise EnvError("episode already finished")
        expected = self.slots[state.turn_index]
        if slot != expected:
            raise EnvError(f"out of turn: expected {expected!r}, got {slot!r}")
        self._check_action(slot, action)
        rewards = {s: 0 for s in self.slots}
        infos: dict[str, dict] = {s: {} for s in self.slots}
        # Turn-based sub-steps resolve against current occupancy: any standing
        # opponent is taggable, and a freshly respawned agent acts from its
        # new cell when its turn comes. See docs/envs.md.
        work = _Work(state, aec=True)
        self._apply(work, slot, action, rewards, infos)
        # Per-slot reward attribution: the actor's own gain now, plus any
        # penalty owed from being tagged since its previous turn.
        pending = dict(state.pending_penalty)
        reward = rewards[slot] + pending.pop(slot, 0)
        for victim, delta in rewards.items():
            if victim != slot and delta:
                pending[victim] = pending.get(victim, 0) + delta
        last_in_cycle = state.turn_index == len(self.slots) - 1
        if last_in_cycle:
            work.state = work.state.evolve(pending_penalty=pending)
            next_state, terminated, truncated = self._finish_step(work)
        else:
            next_state = work.state.evolve(
                positions=work.positions,
                score=work.score,
                rng_state=work.rng_state,
                turn_index=state.turn_index + 1,
                pending_penalty=pending,
            )
            terminated = truncated = False
        transition = Transition(slot, reward, terminated, truncated, infos[slot])
        next_slot = self.slots[next_state.turn_index] if not next_state.done else ""
        return next_state, transition, next_slot

    # Hooks implemented by concrete envs.
    def _apply(self, work: "_Work", slot: str, action: int, rewards: dict, infos: dict) -> None:
        raise NotImplementedError

    def _finish_step(self, work: "_Work") -> tuple[EnvState, bool, bool]:
        raise NotImplementedError


class _Work:
    """Mutable scratch while resolving one step; folded back into a value."""

    def __init__(self, state: EnvState, aec: bool = False):
        self.state = state
        self.aec = aec
        self.positions = dict(state.positions)
        self.score = dict(state.score)
        self.rng_state = state.rng_state
        # Slots whose pending action was cancelled by a tag this step.
        self.cancelled: dict[str, bool] = {}
        # Start-of-step positions: only agents still standing there are taggable.
        self.start_positions = dict(state.positions)
        self.terminated = False


class CorridorEnv(Env):
    """Single agent walks a 1-D hallway to the goal on the far end.

    Actions: 0 stay, 1 forward (+x), 2 back (-x); moves clamp at the walls.
    Reward 1 on entering the goal cell, which terminates the episode.
    """

    ACTIONS = ("stay", "forward", "back")

    def __init__(self, task_id: str = "mosaic/Corridor-v1", length: int = 5):
        self.task_id = task_id
        self.length = length
        self.slots = ("agent_0",)
        self.teams = {"solo": ("agent_0",)}
        self.action_space = ActionSpace(3, self.ACTIONS)
        self.horizon = 4 * length

    def tensor_shape(self) -> tuple[int, int, int]:
        return (1, self.length, 2)  # channels: agent, goal

    def initial_state(self, seed: int, episode_index: int = 0) -> EnvState:
        grid = bytearray(self.length)
        grid[self.length - 1] = 1  # goal cell
        return EnvState(
            task_id=self.task_id,
            width=self.length,
            height=1,
            grid=bytes(grid),
            slots=self.slots,
            positions={"agent_0": (0, 0)},
            orientations={"agent_0": 0},
            team_of={"agent_0": "solo"},
            score={"solo": 0},
            pending_penalty={},
            step_index=0,
            episode_index=episode_index,
            rng_state=rng.seed_state(seed),
            turn_index=0,
            done=False,
        )

    def _apply(self, work: _Work, slot: str, action: int, rewards: dict, infos: dict) -> None:
        x, y = work.positions[slot]
        if action == 1:
            x = min(x + 1, self.length - 1)
        elif action == 2:
            x = max(x - 1, 0)
        entered_goal = (x, y) != work.positions[slot] and x == self.length - 1
        work.positions[slot] = (x, y)
        if entered_goal:
            rewards[slot] = 1
            work.score["solo"] = work.score.get("solo", 0) + 1
            work.terminated = True

    def _finish_step(self, work: _Work) -> tuple[EnvState, bool, bool]:
        step_index = work.state.step_index + 1
        terminated = work.terminated
        truncated = not terminated and step_index >= self.horizon
        next_state = work.state.evolve(
            positions=work.positions,
            score=work.score,
            rng_state=work.rng_state,
            step_index=step_index,
            turn_index=0,
            done=terminated or truncated,
        )
        return next_state, terminated, truncated


class TeamTagEnv(Env):
    """2v2 tag on a toroidal grid.

    Actions: 0 stay, 1 up, 2 down, 3 left, 4 right. Moves resolve one slot
    at a time in canonical slot order. Entering the cell of an opponent who
    is still standing on its start-of-step cell tags it: the opponent
    respawns on a seeded free cell (its pending action is cancelled), the
    mover takes the cell, mover reward +1, victim reward -1, team scores
    follow. Any other occupied target blocks the move. Episodes never
    terminate; they truncate at the horizon.
    """

    ACTIONS = ("stay", "up", "down", "left", "right")
    DELTAS = {0: (0, 0), 1: (0, -1), 2: (0, 1), 3: (-1, 0), 4: (1, 0)}

    def __init__(
        self,
        task_id: str = "mosaic/TeamTag-2vs2-v1",
        width: int = 7,
        height: int = 7,
        horizon: int = 200,
    ):
        self.task_id = task_id
        self.width = width
        self.height = height
        self.slots = ("blue_0", "blue_1", "red_0", "red_1")
        self.teams = {"blue": ("blue_0", "blue_1"), "red": ("red_0", "red_1")}
        self.action_space = ActionSpace(5, self.ACTIONS)
        self.horizon = horizon
        self._team_of = {s: ("blue" if s.startswith("blue") else "red") for s in self.slots}

    def tensor_shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, 3)  # channels: self, teammate, opponent

    def initial_state(self, seed: int, episode_index: int = 0) -> EnvState:
        state = rng.seed_state(seed)
        taken: set[tuple[int, int]] = set()
        positions: dict[str, tuple[int, int]] = {}
        for slot in self.slots:
            while True:
                state, cell = rng.next_below(state, self.width * self.height)
                pos = (cell % self.width, cell // self.width)
                if pos not in taken:
                    taken.add(pos)
                    positions[slot] = pos
                    break
        return EnvState(
            task_id=self.task_id,
            width=self.width,
            height=self.height,
            grid=bytes(self.width * self.height),
            slots=self.slots,
            positions=positions,
            orientations={s: 0 for s in self.slots},
            team_of=dict(self._team_of),
            score={"blue": 0, "red": 0},
            pending_penalty={},
            step_index=0,
            episode_index=episode_index,
            rng_state=state,
            turn_index=0,
            done=False,
        )

    def _respawn(self, work: _Work) -> tuple[int, int]:
        occupied = set(work.positions.values())
        while True:
            work.rng_state, cell = rng.next_below(work.rng_state, self.width * self.height)
            pos = (cell % self.width, cell // self.width)
            if pos not in occupied:
                return pos

    def _apply(self, work: _Work, slot: str, action: int, rewards: dict, infos: dict) -> None:
        dx, dy = self.DELTAS[action]
        if dx == 0 and dy == 0:
            return
        x, y = work.positions[slot]
        target = ((x + dx) % self.width, (y + dy) % self.height)
        occupant = next((s for s, p in work.positions.items() if p == target and s != slot), None)
        if occupant is None:
            work.positions[slot] = target
            return
        opponent = self._team_of[occupant] != self._team_of[slot]
        taggable = work.aec or (
            work.start_positions[occupant] == target and not work.cancelled.get(occupant)
        )
        if opponent and taggable:
            work.positions[occupant] = self._respawn(work)
            work.cancelled[occupant] = True
            work.positions[slot] = target
            rewards[slot] += 1
            rewards[occupant] -= 1
            work.score[self._team_of[slot]] += 1
            work.score[self._team_of[occupant]] -= 1
            infos[slot]["tagged"] = occupant
            infos[occupant]["tagged_by"] = slot
        else:
            infos[slot]["blocked_by"] = occupant

    def _finish_step(self, work: _Work) -> tuple[EnvState, bool, bool]:
        step_index = work.state.step_index + 1
        truncated = step_index >= self.horizon
        next_state = work.state.evolve(
            positions=work.positions,
            score=work.score,
            rng_state=work.rng_state,
            step_index=step_index,
            turn_index=0,
            done=truncated,
        )
        return next_state, False, truncated
