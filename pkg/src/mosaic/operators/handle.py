"""Operator: the agent-level interface over worker-backed slots.

Binds every agent slot of an environment to one decision source — a worker
subprocess for rl/llm/vlm/baseline slots, the session's pending-action
mailbox for human slots — and exposes the uniform ``select_action`` /
``select_actions`` contract over all of them.
"""

from __future__ import annotations

import random
import sys
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Protocol

from ..envcore import Env, derive_seed, render_cells, serialize_obs
from ..protocol import CapabilityManifest
from ..protocol import command as make_command
from ..supervisor import Supervisor, WorkerHandle, WorkerSpec
from .parsing import ParseActionError, ParsePolicy, parse_action
from .paradigm import PARADIGM_MODALITY, Paradigm, WorkerAssignment

if TYPE_CHECKING:
    from ..config import RunConfig


class OperatorError(Exception):
    pass


class BindingError(OperatorError):
    pass


class BlockedOnHuman(OperatorError):
    def __init__(self, slots: list[str]):
        super().__init__(f"waiting on human action for {', '.join(slots)}")
        self.slots = slots


class JointActionError(OperatorError):
    """A joint action failed atomically; per-slot diagnostics attached."""

    def __init__(self, failures: dict[str, str]):
        super().__init__("; ".join(f"{s}: {m}" for s, m in sorted(failures.items())))
        self.failures = failures


class HumanActionSource(Protocol):
    """Pending-action mailbox owned by the control surface."""

    def peek(self, slot: str) -> int | None: ...

    def take(self, slot: str) -> int | None: ...


@dataclass
class ActionResult:
    action: int
    raw_text: str | None = None
    parse_outcome: str | None = None


@dataclass
class _Slot:
    assignment: WorkerAssignment
    paradigm: Paradigm
    modality: str
    worker: WorkerHandle | None
    parse_policy: ParsePolicy
    fallback_rng: random.Random
    frames: deque = field(default_factory=lambda: deque(maxlen=4))


def worker_command(assignment: WorkerAssignment) -> tuple[str, ...]:
    """Resolve the executable for a slot; settings.command overrides."""
    custom = assignment.settings.get("command")
    if custom:
        return tuple(custom)
    kind = assignment.worker_type
    if kind is Paradigm.BASELINE:
        return (sys.executable, "-m", "mosaic.workers.baseline",
                "--kind", assignment.settings.get("kind", "random"))
    if kind is Paradigm.RL:
        return (sys.executable, "-m", "mosaic.workers.scripted_policy",
                "--policy", assignment.settings.get("policy", "greedy_tag"))
    if kind in (Paradigm.LLM, Paradigm.VLM):
        return (sys.executable, "-m", "mosaic.workers.scripted_text", "--kind", kind.value)
    raise BindingError(f"paradigm {kind.value} does not spawn a worker")


def required_manifest(assignment: WorkerAssignment, modality: str) -> CapabilityManifest:
    needs = {"tensor"} if modality == "tensor" else set()
    if modality in ("text", "text_image"):
        needs.add("text")
    if modality in ("text_image", "image"):
        needs.add("image")
    return CapabilityManifest(
        worker_kind=assignment.worker_type.value,
        supported_commands=frozenset({"reset", "stop", "select_action"}),
        observation_modalities=frozenset(needs),
    )


class OperatorHandle:
    """All slots of one environment behind the unified decision interface."""

    def __init__(
        self,
        supervisor: Supervisor,
        env: Env,
        config: RunConfig,
        seed: int,
        request_timeout: float = 30.0,
    ):
        self.supervisor = supervisor
        self.env = env
        self.config = config
        self.seed = seed
        self.request_timeout = request_timeout
        self.slots: dict[str, _Slot] = {}
        self.human_source: HumanActionSource | None = None

    # -- binding ---------------------------------------------------------------

    def bind(
        self,
        human_source: HumanActionSource | None = None,
        heartbeat_interval: float = 60.0,
        liveness_window: float = 300.0,
        worker_env: dict[str, str] | None = None,
        max_restarts: int = 2,
    ) -> "OperatorHandle":
        config_slots = set(self.config.slots)
        env_slots = set(self.env.slots)
        if config_slots != env_slots:
            missing = sorted(env_slots - config_slots)
            unknown = sorted(config_slots - env_slots)
            problems = []
            if missing:
                problems.append(f"missing assignment for {', '.join(missing)}")
            if unknown:
                problems.append(f"unknown slot {', '.join(unknown)}")
            raise BindingError("; ".join(problems))
        self.human_source = human_source
        try:
            for slot_name in self.env.slots:  # canonical order
                assignment = self.config.assignment(slot_name)
                paradigm = assignment.worker_type
                modality = PARADIGM_MODALITY[paradigm]
                policy_doc = assignment.settings.get("parse_policy") or {}
                parse_policy = ParsePolicy(
                    grammar=policy_doc.get("grammar", "labeled_keyword"),
                    fallback=policy_doc.get("fallback", "noop"),
                )
                fallback_rng = random.Random(derive_seed(self.seed, f"fallback/{slot_name}"))
                worker: WorkerHandle | None = None
                if paradigm is Paradigm.HUMAN:
                    if human_source is None:
                        raise BindingError(f"{slot_name}: human slot needs a pending-action mailbox")
                else:
                    spec = WorkerSpec(
                        command=worker_command(assignment),
                        worker_kind=paradigm.value,
                        env_vars=dict(worker_env or {}),
                        heartbeat_interval=heartbeat_interval,
                        liveness_window=liveness_window,
                        max_restarts=max_restarts,
                    )
                    worker = self.supervisor.spawn_worker(spec, required_manifest(assignment, modality))
                    self._reset_worker(worker, slot_name, assignment)
                self.slots[slot_name] = _Slot(
                    assignment=assignment,
                    paradigm=paradigm,
                    modality=modality,
                    worker=worker,
                    parse_policy=parse_policy,
                    fallback_rng=fallback_rng,
                )
                if assignment.max_image_history > 0:
                    self.slots[slot_name].frames = deque(maxlen=assignment.max_image_history)
        except Exception:
            self.close()
            raise
        return self

    def _reset_worker(self, worker: WorkerHandle, slot_name: str, assignment: WorkerAssignment) -> None:
        metadata = self.env.metadata()
        metadata["slot"] = slot_name
        metadata["observation_mode"] = assignment.observation_mode
        self.supervisor.command(
            worker,
            "reset",
            timeout=self.request_timeout,
            seed=derive_seed(self.seed, f"slot/{slot_name}"),
            env_metadata=metadata,
        )

    # -- observations ------------------------------------------------------------

    def build_observations(self, state) -> dict[str, dict[str, Any]]:
        """Serialized observation per slot, in canonical slot order.

        Idempotent per (episode, step): a retried barrier must not grow the
        multimodal frame history twice.
        """
        frame = None
        step_key = (state.episode_index, state.step_index)
        repeat = getattr(self, "_last_frame_key", None) == step_key
        self._last_frame_key = step_key
        observations: dict[str, dict[str, Any]] = {}
        for slot_name in self.env.slots:
            slot = self.slots[slot_name]
            history = None
            if slot.assignment.max_image_history > 0:
                if frame is None:
                    frame = render_cells(state)
                if not repeat:
                    slot.frames.append(frame)
                history = list(slot.frames)
            observations[slot_name] = serialize_obs(
                self.env,
                state,
                slot_name,
                slot.modality,
                observation_mode=slot.assignment.observation_mode,
                max_image_history=slot.assignment.max_image_history,
                frame_history=history,
            )
        return observations

    # -- decisions ----------------------------------------------------------------

    def _interpret(self, slot: _Slot, slot_name: str, reply) -> ActionResult:
        payload = reply.payload
        raw_text = payload.get("raw_text")
        if raw_text is not None and slot.paradigm in (Paradigm.LLM, Paradigm.VLM):
            try:
                action, outcome = parse_action(
                    raw_text,
                    self.env.action_space,
                    slot.parse_policy,
                    slot.fallback_rng,
                    null_action=self.env.null_action,
                )
            except ParseActionError as exc:
                raise OperatorError(f"{slot_name}: {exc}") from exc
            return ActionResult(action, raw_text, outcome)
        action = payload.get("action")
        if action is None or not self.env.action_space.contains(action):
            raise OperatorError(f"{slot_name}: worker returned invalid action {action!r}")
        return ActionResult(action, raw_text, None)

    def _human_result(self, slot_name: str, consume: bool) -> ActionResult:
        assert self.human_source is not None
        action = self.human_source.take(slot_name) if consume else self.human_source.peek(slot_name)
        if action is None:
            raise BlockedOnHuman([slot_name])
        if not self.env.action_space.contains(action):
            raise OperatorError(f"{slot_name}: human action {action!r} out of range")
        return ActionResult(action)

    def select_action(self, agent_id: str, observation: dict[str, Any], info: dict[str, Any] | None = None) -> ActionResult:
        """One agent acts (turn-based mode)."""
        if agent_id not in self.slots:
            raise OperatorError(f"unbound slot {agent_id!r}")
        slot = self.slots[agent_id]
        if slot.paradigm is Paradigm.HUMAN:
            return self._human_result(agent_id, consume=True)
        assert slot.worker is not None
        reply = self.supervisor.command(
            slot.worker,
            "select_action",
            timeout=self.request_timeout,
            observation=observation,
            info=info or {},
        )
        return self._interpret(slot, agent_id, reply)

    def select_actions(self, observations: dict[str, dict[str, Any]]) -> dict[str, ActionResult]:
        """All agents act simultaneously; fails atomically with per-slot
        diagnostics; results are assembled in canonical slot order."""
        expected = set(self.env.slots)
        if set(observations) != expected:
            raise OperatorError(
                f"observations must cover slots exactly: got {sorted(observations)}"
            )
        blocked = [
            name
            for name in self.env.slots
            if self.slots[name].paradigm is Paradigm.HUMAN
            and (self.human_source is None or self.human_source.peek(name) is None)
        ]
        if blocked:
            raise BlockedOnHuman(blocked)

        worker_slots = [n for n in self.env.slots if self.slots[n].worker is not None]
        requests = []
        for name in worker_slots:
            handle = self.slots[name].worker
            assert handle is not None
            requests.append(
                (
                    handle,
                    make_command(
                        "select_action",
                        handle.next_correlation_id(),
                        observation=observations[name],
                        info={},
                    ),
                )
            )
        replies = self.supervisor.request_many(requests, timeout=self.request_timeout)

        results: dict[str, ActionResult] = {}
        failures: dict[str, str] = {}
        for name, reply in zip(worker_slots, replies):
            if isinstance(reply, Exception):
                failures[name] = str(reply)
                continue
            try:
                results[name] = self._interpret(self.slots[name], name, reply)
            except OperatorError as exc:
                failures[name] = str(exc)
        if failures:
            raise JointActionError(failures)
        for name in self.env.slots:
            if self.slots[name].paradigm is Paradigm.HUMAN:
                results[name] = self._human_result(name, consume=True)
        return {name: results[name] for name in self.env.slots}

    def reset_frames(self) -> None:
        """Clear multimodal frame history at an episode boundary."""
        for slot in self.slots.values():
            slot.frames.clear()
        self._last_frame_key = None

    # -- lifecycle -------------------------------------------------------------------

    def worker_handles(self) -> dict[str, WorkerHandle]:
        return {n: s.worker for n, s in self.slots.items() if s.worker is not None}

    def close(self) -> None:
        for slot in self.slots.values():
            if slot.worker is not None:
                self.supervisor.stop_worker(slot.worker)


def bind_operator(
    supervisor: Supervisor,
    env: Env,
    config: RunConfig,
    seed: int,
    human_source: HumanActionSource | None = None,
    request_timeout: float = 30.0,
    **bind_options: Any,
) -> OperatorHandle:
    handle = OperatorHandle(supervisor, env, config, seed, request_timeout)
    return handle.bind(human_source=human_source, **bind_options)
