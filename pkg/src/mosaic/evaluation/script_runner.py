"""Script mode: one shared environment driven to completion without a user.

The telemetry step stream is a pure function of (config, seed, episodes):
run ids are config digests, session ids are fixed, records carry no clock,
and joint actions always commit in canonical slot order. Worker faults are
recovered at barrier boundaries by rewinding every worker to the barrier's
opening snapshot, so a recovered run's records match an uninterrupted one
byte-for-byte.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable

from .. import __version__
from ..config import RunConfig
from ..envcore import EnvState, derive_seed, get_env, obs_digest, render_cells, serialize_obs
from ..operators import JointActionError, OperatorError, OperatorHandle, bind_operator
from ..protocol import fixed_reward
from ..supervisor import (
    RecoveryError,
    Supervisor,
    SupervisorError,
    WorkerHandle,
    STATE_DEAD,
)
from ..telemetry import EpisodeRecord, RunStore, StepRecord

SESSION_ID = "s0"


@dataclass
class RunResult:
    run_id: str
    run_dir: Path
    status: str  # finished | failed
    episodes_completed: int
    per_team_return_sum: dict[str, str]
    win_counts: dict[str, int]
    draws: int
    wall_time_s: float
    failure: str | None = None

    def to_doc(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "status": self.status,
            "episodes_completed": self.episodes_completed,
            "per_team_return_sum": dict(self.per_team_return_sum),
            "win_counts": dict(self.win_counts),
            "draws": self.draws,
            "wall_time_s": round(self.wall_time_s, 3),
            **({"failure": self.failure} if self.failure else {}),
        }


@dataclass
class RunHooks:
    """Test and daemon seams; all optional."""

    on_barrier: Callable[[int, int], None] | None = None  # (episode, step) after commit
    on_episode: Callable[[EpisodeRecord], None] | None = None
    on_event: Callable[[str, dict[str, Any]], None] | None = None


def winner_of(team_scores: dict[str, int]) -> str:
    """Strictly greatest score among at least two teams wins; otherwise draw."""
    if len(team_scores) < 2:
        return "draw"
    best = max(team_scores.values())
    leaders = [team for team, score in team_scores.items() if score == best]
    return leaders[0] if len(leaders) == 1 else "draw"


def unique_run_dir(runs_root: Path, run_id: str) -> Path:
    """Deterministic run ids may repeat across invocations; directories must
    not. The exclusive mkdir makes the claim atomic under concurrent runs."""
    runs_root.mkdir(parents=True, exist_ok=True)
    candidate = runs_root / run_id
    n = 1
    while True:
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            n += 1
            candidate = runs_root / f"{run_id}-{n}"


class ScriptRunner:
    def __init__(
        self,
        config: RunConfig,
        seed: int,
        episodes: int,
        runs_root: str | Path = "runs",
        request_timeout: float = 30.0,
        heartbeat_interval: float = 60.0,
        liveness_window: float = 300.0,
        checkpoint_every_steps: int = 100,
        max_restarts: int = 2,
        hooks: RunHooks | None = None,
    ):
        if seed < 0:
            raise ValueError("seed must be >= 0")
        if episodes < 1:
            raise ValueError("episodes must be >= 1")
        self.config = config
        self.seed = seed
        self.episodes = episodes
        self.runs_root = Path(runs_root)
        self.request_timeout = request_timeout
        self.heartbeat_interval = heartbeat_interval
        self.liveness_window = liveness_window
        self.max_restarts = max_restarts
        self.hooks = hooks or RunHooks()

        self.run_id = config.run_id(seed, episodes)
        self.run_dir = unique_run_dir(self.runs_root, self.run_id)
        self.store = RunStore(self.run_dir, self.run_id)
        self.supervisor = Supervisor(
            logs_dir=self.run_dir / "workers",
            checkpoints_dir=self.run_dir / "checkpoints",
            checkpoint_every_steps=checkpoint_every_steps,
        )
        self.env = get_env(config.task)
        self.operator: OperatorHandle | None = None
        self._episode_actions: list[dict[str, int]] = []
        self._episode_seed = 0
        self._episode_index = 0
        self._global_steps = 0
        self._last_truncated = False

    # -- events ------------------------------------------------------------

    def _emit(self, kind: str, **payload: Any) -> None:
        if self.hooks.on_event is not None:
            self.hooks.on_event(kind, payload)

    # -- recovery ----------------------------------------------------------

    def _replayer_for(self, slot_name: str, upto: int) -> Callable[[WorkerHandle], None]:
        """Re-drive one worker through the current episode's recorded prefix."""
        slot = self.operator.slots[slot_name]  # type: ignore[union-attr]
        actions = list(self._episode_actions[:upto])
        episode_seed = self._episode_seed
        episode_index = self._episode_index

        def replay(handle: WorkerHandle) -> None:
            state = self.env.initial_state(episode_seed, episode_index)
            frames: list = []
            for joint in actions:
                history = None
                if slot.assignment.max_image_history > 0:
                    frames.append(render_cells(state))
                    history = frames[-slot.assignment.max_image_history :]
                observation = serialize_obs(
                    self.env,
                    state,
                    slot_name,
                    slot.modality,
                    observation_mode=slot.assignment.observation_mode,
                    max_image_history=slot.assignment.max_image_history,
                    frame_history=history,
                )
                self.supervisor.command(
                    handle, "select_action", timeout=self.request_timeout,
                    observation=observation, info={},
                )
                state, _ = self.env.step_parallel(state, joint)

        return replay

    def _recover_barrier(self, snapshots: dict[str, dict[str, Any]]) -> None:
        """After a failed joint action: respawn the dead, rewind the living."""
        assert self.operator is not None
        for slot_name, handle in self.operator.worker_handles().items():
            snapshot = snapshots[slot_name]
            if handle.state == STATE_DEAD:
                self.supervisor.recover(
                    handle,
                    replayer=self._replayer_for(slot_name, int(snapshot["episode_steps"])),
                    state_doc=snapshot,
                )
                self._emit("worker-recovered", slot=slot_name, worker_id=handle.worker_id)
            else:
                self.supervisor.restore_state(handle, snapshot)

    # -- main loop -----------------------------------------------------------

    def run(self) -> RunResult:
        started = time.time()
        manifest = {
            "run_id": self.run_id,
            "config_digest": self.config.digest(),
            "seed": self.seed,
            "episodes_requested": self.episodes,
            "created_at": started,
            "finished_at": None,
            "software_version": __version__,
            "status": "running",
            "workers": {},
        }
        self.store.write_manifest(manifest)
        (self.run_dir / "config.json").write_bytes(self.config.canonical_bytes())

        team_sums: dict[str, Decimal] = {t: Decimal("0.000") for t in self.env.teams}
        win_counts: dict[str, int] = {}
        draws = 0
        episodes_done = 0
        failure: str | None = None

        try:
            self.operator = bind_operator(
                self.supervisor,
                self.env,
                self.config,
                self.seed,
                request_timeout=self.request_timeout,
                heartbeat_interval=self.heartbeat_interval,
                liveness_window=self.liveness_window,
                max_restarts=self.max_restarts,
            )
            manifest["workers"] = {
                slot: {
                    "worker_id": h.worker_id,
                    "worker_kind": h.session.worker_kind if h.session else None,
                    "schema_version": h.session.schema_version if h.session else None,
                }
                for slot, h in self.operator.worker_handles().items()
            }
            self.store.write_manifest(manifest)
            self._emit("status-changed", status="running", run_id=self.run_id)

            for episode in range(self.episodes):
                self._episode_index = episode
                self._episode_seed = derive_seed(self.seed, f"episode/{episode}")
                self._episode_actions = []
                self.operator.reset_frames()
                state = self.env.initial_state(self._episode_seed, episode)
                totals: dict[str, Decimal] = {s: Decimal("0.000") for s in self.env.slots}
                while not state.done:
                    state = self._barrier(state, episode, totals)
                episodes_done += 1
                record = self._finish_episode(state, episode, totals)
                for slot_name, value in record.total_reward.items():
                    team_sums[state.team_of[slot_name]] += value
                if record.winner == "draw":
                    draws += 1
                else:
                    win_counts[record.winner] = win_counts.get(record.winner, 0) + 1
            status = "finished"
        except (SupervisorError, JointActionError, OperatorError, RecoveryError) as exc:
            failure = str(exc)
            status = "failed"
        finally:
            if self.operator is not None:
                self.operator.close()
            self.supervisor.stop_all()

        self.store.flush()
        if status == "finished":
            self.store.finalize()
        else:
            self.store.close()
        manifest["status"] = status
        manifest["finished_at"] = time.time()
        self.store.write_manifest(manifest)
        result = RunResult(
            run_id=self.run_id,
            run_dir=self.run_dir,
            status=status,
            episodes_completed=episodes_done,
            per_team_return_sum={t: str(v) for t, v in sorted(team_sums.items())},
            win_counts=dict(sorted(win_counts.items())),
            draws=draws,
            wall_time_s=time.time() - started,
            failure=failure,
        )
        self.store.write_result(result.to_doc())
        self._emit("status-changed", status=status, run_id=self.run_id)
        return result

    def _barrier(self, state: EnvState, episode: int, totals: dict[str, Decimal]) -> EnvState:
        assert self.operator is not None
        observations = self.operator.build_observations(state)
        digests = {slot: obs_digest(observations[slot]) for slot in self.env.slots}
        snapshots = {
            slot: self.supervisor.snapshot_shadow(handle)
            for slot, handle in self.operator.worker_handles().items()
        }
        attempts = 0
        while True:
            try:
                results = self.operator.select_actions(observations)
                break
            except JointActionError as exc:
                attempts += 1
                self._emit("barrier-failed", episode=episode, step=state.step_index,
                           failures=exc.failures, attempt=attempts)
                if attempts > self.max_restarts:
                    raise
                self._recover_barrier(snapshots)

        joint = {slot: r.action for slot, r in results.items()}
        next_state, transitions = self.env.step_parallel(state, joint)
        self._episode_actions.append(joint)
        self._last_truncated = any(t.truncated for t in transitions)
        for transition in transitions:
            slot_name = transition.slot
            result = results[slot_name]
            reward = fixed_reward(transition.reward)
            totals[slot_name] += reward
            self.store.append_step(
                StepRecord(
                    run_id=self.run_id,
                    session_id=SESSION_ID,
                    episode_index=episode,
                    step_index=state.step_index,
                    slot=slot_name,
                    paradigm=self.operator.slots[slot_name].paradigm.value,
                    action=result.action,
                    reward=reward,
                    terminated=transition.terminated,
                    truncated=transition.truncated,
                    obs_digest=digests[slot_name],
                    raw_text=result.raw_text,
                    parse_outcome=result.parse_outcome,
                )
            )
        self._global_steps += 1
        if self.supervisor.checkpoint_every_steps and (
            self._global_steps % self.supervisor.checkpoint_every_steps == 0
        ):
            for handle in self.operator.worker_handles().values():
                self.supervisor.checkpoint(handle)
        if self.hooks.on_barrier is not None:
            self.hooks.on_barrier(episode, state.step_index)
        self._emit("telemetry-appended", stream="steps", episode=episode,
                   step=state.step_index, count=len(transitions))
        return next_state

    def _finish_episode(self, state: EnvState, episode: int, totals: dict[str, Decimal]) -> EpisodeRecord:
        record = EpisodeRecord(
            run_id=self.run_id,
            session_id=SESSION_ID,
            episode_index=episode,
            total_reward={s: totals[s] for s in self.env.slots},
            episode_length=state.step_index,
            team_scores={t: state.score[t] for t in sorted(state.score)},
            winner=winner_of(dict(state.score)),
            truncated=self._last_truncated,
        )
        self.store.append_episode(record)
        for handle in self.operator.worker_handles().values():  # type: ignore[union-attr]
            self.supervisor.checkpoint(handle)
        if self.hooks.on_episode is not None:
            self.hooks.on_episode(record)
        self._emit("episode-finished", episode=episode,
                   winner=record.winner, length=record.episode_length)
        return record


def run_script(
    config: RunConfig,
    seed: int,
    episodes: int,
    runs_root: str | Path = "runs",
    **kwargs: Any,
) -> RunResult:
    return ScriptRunner(config, seed, episodes, runs_root, **kwargs).run()
