"""Manual mode: lock-step replica sessions for side-by-side comparison.

Every operator drives its own environment replica built from the identical
(task, seed); one ``step`` call advances every replica exactly once (the
barrier). A replica whose episode ends is auto-reset with the same seed so
the barrier count stays uniform. Each replica writes its own telemetry
store; streams are byte-deterministic except for the session id.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable

from ..config import ManualSessionConfig
from ..envcore import EnvState, get_env, obs_digest, render_ascii, render_cells
from ..operators import (
    BADGE_COLOURS,
    BlockedOnHuman,
    JointActionError,
    OperatorError,
    OperatorHandle,
    Paradigm,
    bind_operator,
)
from ..protocol import canonical_line, fixed_reward
from ..supervisor import Supervisor, SupervisorError
from ..telemetry import EpisodeRecord, RunStore, StepRecord
from .script_runner import winner_of

STATUS_CREATED = "created"
STATUS_RUNNING = "running"
STATUS_PAUSED = "paused"
STATUS_FINISHED = "finished"
STATUS_FAILED = "failed"

_VERBS = {
    "start": {STATUS_CREATED: STATUS_RUNNING},
    "pause": {STATUS_RUNNING: STATUS_PAUSED},
    "resume": {STATUS_PAUSED: STATUS_RUNNING},
    "stop": {
        STATUS_CREATED: STATUS_FINISHED,
        STATUS_RUNNING: STATUS_FINISHED,
        STATUS_PAUSED: STATUS_FINISHED,
    },
}

DEFAULT_MAX_REPLICAS = 6


class SessionError(Exception):
    pass


class IllegalTransition(SessionError):
    pass


class Mailbox:
    """Pending human actions, one per (replica-qualified) slot, latest wins."""

    def __init__(self) -> None:
        self._pending: dict[str, tuple[int, int]] = {}  # slot -> (action, barrier)
        self._lock = threading.Lock()

    def submit(self, slot: str, action: int, barrier: int) -> bool:
        """Returns True when an unconsumed action was replaced."""
        with self._lock:
            replaced = slot in self._pending
            self._pending[slot] = (action, barrier)
            return replaced

    def peek(self, slot: str) -> int | None:
        with self._lock:
            entry = self._pending.get(slot)
            return entry[0] if entry else None

    def take(self, slot: str) -> int | None:
        with self._lock:
            entry = self._pending.pop(slot, None)
            return entry[0] if entry else None


class _ReplicaMailboxView:
    """Adapts the session mailbox to one replica's bare slot names."""

    def __init__(self, mailbox: Mailbox, replica_index: int):
        self.mailbox = mailbox
        self.prefix = f"r{replica_index}."

    def peek(self, slot: str) -> int | None:
        return self.mailbox.peek(self.prefix + slot)

    def take(self, slot: str) -> int | None:
        return self.mailbox.take(self.prefix + slot)


@dataclass
class Replica:
    index: int
    operator: OperatorHandle
    state: EnvState
    store: RunStore
    run_id: str
    episode_index: int = 0
    totals: dict[str, Decimal] = field(default_factory=dict)

    @property
    def slot_prefix(self) -> str:
        return f"r{self.index}."


@dataclass(frozen=True)
class FrameSet:
    barrier: int
    replicas: list[dict[str, Any]]  # {replica, operator_id, ascii, badges}


class ManualSession:
    """A live lock-step evaluation across up to N replicas."""

    def __init__(
        self,
        session_id: str,
        config: ManualSessionConfig,
        seed: int,
        session_dir: str | Path,
        max_replicas: int = DEFAULT_MAX_REPLICAS,
        request_timeout: float = 30.0,
        heartbeat_interval: float = 60.0,
        liveness_window: float = 300.0,
        on_event: Callable[[str, dict[str, Any]], None] | None = None,
    ):
        if not 1 <= len(config.operators) <= max_replicas:
            raise SessionError(
                f"replica count must be in 1..{max_replicas}, got {len(config.operators)}"
            )
        if seed < 0:
            raise SessionError("seed must be >= 0")
        self.session_id = session_id
        self.config = config
        self.seed = seed
        self.session_dir = Path(session_dir)
        self.request_timeout = request_timeout
        self.heartbeat_interval = heartbeat_interval
        self.liveness_window = liveness_window
        self.on_event = on_event or (lambda kind, payload: None)
        self.mailbox = Mailbox()
        self.supervisor = Supervisor(logs_dir=self.session_dir / "workers")
        self.status = STATUS_CREATED
        self.barrier_step = 0
        self.replicas: list[Replica] = []
        self.frames: dict[int, FrameSet] = {}
        self.failure: str | None = None
        self._lock = threading.Lock()  # session command queue equivalent

    # -- identity ---------------------------------------------------------

    def _base_run_id(self) -> str:
        material = canonical_line(
            {
                "task": self.config.task,
                "seed": self.seed,
                "operators": [op.to_doc() for op in self.config.operators],
            }
        )
        return "m" + hashlib.sha256(material).hexdigest()[:16]

    # -- lifecycle ----------------------------------------------------------

    def control(self, verb: str, barrier: int | None = None) -> dict[str, Any]:
        """Apply one lifecycle verb; ``step`` drives a single barrier."""
        with self._lock:
            if verb == "step":
                return self._step_locked(barrier)
            transitions = _VERBS.get(verb)
            if transitions is None:
                raise SessionError(f"unknown verb {verb!r}")
            if self.status not in transitions:
                raise IllegalTransition(f"cannot {verb} while {self.status}")
            if verb == "start":
                self._open()
            if verb == "stop":
                self._finalize()
            self.status = transitions[self.status]
            self.on_event("status-changed", {"status": self.status})
            return {"status": self.status, "barrier": self.barrier_step}

    def _open(self) -> None:
        base = self._base_run_id()
        try:
            for i, op_config in enumerate(self.config.operators):
                run_id = f"{base}.r{i}"
                store = RunStore(self.session_dir / "replicas" / f"r{i}", run_id)
                operator = bind_operator(
                    self.supervisor,
                    get_env(self.config.task),
                    op_config,
                    self.seed,
                    human_source=_ReplicaMailboxView(self.mailbox, i),
                    request_timeout=self.request_timeout,
                    heartbeat_interval=self.heartbeat_interval,
                    liveness_window=self.liveness_window,
                )
                state = operator.env.initial_state(self.seed, 0)
                self.replicas.append(
                    Replica(
                        index=i,
                        operator=operator,
                        state=state,
                        store=store,
                        run_id=run_id,
                        totals={s: Decimal("0.000") for s in operator.env.slots},
                    )
                )
        except (OperatorError, SupervisorError) as exc:
            self._shutdown_workers()
            raise SessionError(f"replica {len(self.replicas)}: {exc}") from exc
        self._capture_frames()

    def badge_metadata(self, replica: Replica) -> list[dict[str, str]]:
        return [
            {
                "slot": name,
                "paradigm": slot.paradigm.value,
                "colour": BADGE_COLOURS[slot.paradigm],
            }
            for name, slot in replica.operator.slots.items()
        ]

    def _capture_frames(self) -> None:
        entries = []
        for replica in self.replicas:
            entries.append(
                {
                    "replica": replica.index,
                    "operator_id": replica.operator.config.operator_id,
                    "ascii": render_ascii(replica.state),
                    "badges": self.badge_metadata(replica),
                    "episode_index": replica.episode_index,
                    "step_index": replica.state.step_index,
                }
            )
        self.frames[self.barrier_step] = FrameSet(self.barrier_step, entries)

    def rgb_frame(self, barrier: int, replica_index: int) -> Any:
        """Display-resolution render for one replica at the current barrier.

        Only the live barrier can be rendered at display resolution (states
        are not retained per barrier); ascii history is kept in FrameSets.
        """
        if barrier != self.barrier_step:
            raise SessionError("rgb renders are available for the current barrier only")
        return render_cells(self.replicas[replica_index].state)

    # -- stepping -----------------------------------------------------------------

    def blocked_slots(self) -> list[str]:
        blocked = []
        for replica in self.replicas:
            for name, slot in replica.operator.slots.items():
                if slot.paradigm is Paradigm.HUMAN and self.mailbox.peek(replica.slot_prefix + name) is None:
                    blocked.append(replica.slot_prefix + name)
        return blocked

    def _step_locked(self, barrier: int | None) -> dict[str, Any]:
        if self.status != STATUS_RUNNING:
            raise IllegalTransition(f"cannot step while {self.status}")
        if barrier is not None and barrier != self.barrier_step:
            raise IllegalTransition(
                f"barrier conflict: session is at {self.barrier_step}, request was for {barrier}"
            )
        blocked = self.blocked_slots()
        if blocked:
            self.on_event("blocked", {"slots": blocked})
            return {"status": "blocked", "slots": blocked, "barrier": self.barrier_step}

        # Phase 1: every replica's joint action; nothing advances on failure.
        joint_results = []
        try:
            for replica in self.replicas:
                observations = replica.operator.build_observations(replica.state)
                digests = {s: obs_digest(o) for s, o in observations.items()}
                results = replica.operator.select_actions(observations)
                joint_results.append((replica, results, digests))
        except (JointActionError, OperatorError, SupervisorError) as exc:
            self.status = STATUS_FAILED
            self.failure = str(exc)
            self._shutdown_workers()
            self.on_event("status-changed", {"status": self.status, "failure": self.failure})
            raise SessionError(f"barrier {self.barrier_step} failed: {exc}") from exc

        # Phase 2: commit every replica exactly one step.
        emitted = []
        for replica, results, digests in joint_results:
            emitted.extend(self._commit(replica, results, digests))
        self.barrier_step += 1
        self._capture_frames()
        self.on_event(
            "barrier-completed",
            {"barrier": self.barrier_step, "records": len(emitted)},
        )
        return {"status": self.status, "barrier": self.barrier_step, "records": len(emitted)}

    def _commit(self, replica: Replica, results, digests) -> list[StepRecord]:
        env = replica.operator.env
        joint = {s: r.action for s, r in results.items()}
        state, transitions = env.step_parallel(replica.state, joint)
        records = []
        for transition in transitions:
            result = results[transition.slot]
            reward = fixed_reward(transition.reward)
            replica.totals[transition.slot] += reward
            record = StepRecord(
                run_id=replica.run_id,
                session_id=self.session_id,
                episode_index=replica.episode_index,
                step_index=replica.state.step_index,
                slot=replica.slot_prefix + transition.slot,
                paradigm=replica.operator.slots[transition.slot].paradigm.value,
                action=result.action,
                reward=reward,
                terminated=transition.terminated,
                truncated=transition.truncated,
                obs_digest=digests[transition.slot],
                raw_text=result.raw_text,
                parse_outcome=result.parse_outcome,
            )
            replica.store.append_step(record)
            records.append(record)
        replica.state = state
        if state.done:
            self._auto_reset(replica, any(t.truncated for t in transitions))
        return records

    def _auto_reset(self, replica: Replica, truncated: bool) -> None:
        env = replica.operator.env
        replica.store.append_episode(
            EpisodeRecord(
                run_id=replica.run_id,
                session_id=self.session_id,
                episode_index=replica.episode_index,
                total_reward={replica.slot_prefix + s: replica.totals[s] for s in env.slots},
                episode_length=replica.state.step_index,
                team_scores={t: replica.state.score[t] for t in sorted(replica.state.score)},
                winner=winner_of(dict(replica.state.score)),
                truncated=truncated,
            )
        )
        self.on_event(
            "episode-finished",
            {"replica": replica.index, "episode": replica.episode_index},
        )
        replica.episode_index += 1
        replica.totals = {s: Decimal("0.000") for s in env.slots}
        replica.operator.reset_frames()
        replica.state = env.initial_state(self.seed, replica.episode_index)

    # -- teardown -------------------------------------------------------------------

    def _shutdown_workers(self) -> None:
        for replica in self.replicas:
            replica.operator.close()
        self.supervisor.stop_all()

    def _finalize(self) -> None:
        self._shutdown_workers()
        for replica in self.replicas:
            replica.store.finalize()

    # -- introspection -----------------------------------------------------------------

    def describe(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "status": self.status,
            "barrier": self.barrier_step,
            "task": self.config.task,
            "seed": self.seed,
            "replicas": [
                {
                    "replica": r.index,
                    "operator_id": r.operator.config.operator_id,
                    "run_id": r.run_id,
                    "episode_index": r.episode_index,
                    "step_index": r.state.step_index,
                    "badges": self.badge_metadata(r),
                }
                for r in self.replicas
            ],
            **({"failure": self.failure} if self.failure else {}),
        }
