"""Single-threaded runtime loop shared by the built-in workers.

Reads commands line by line from stdin, writes typed responses to stdout,
and emits heartbeats from the same loop whenever the pipe stays quiet for
one interval (``MOSAIC_HEARTBEAT_SECS``; 0 disables them). stdout carries
protocol traffic only; diagnostics go to stderr.
"""

from __future__ import annotations

import os
import select
import sys
from decimal import Decimal
from typing import Any

from ..protocol import (
    DecodeError,
    ProtocolMessage,
    decode_message,
    encode_message,
    response,
)


class Policy:
    """One decision-maker behind the wire protocol."""

    worker_kind = "baseline"
    modalities: tuple[str, ...] = ("tensor", "text")
    max_image_history = 0

    def on_reset(self, seed: int, env_metadata: dict[str, Any]) -> None:
        raise NotImplementedError

    def decide(self, observation: dict[str, Any], info: dict[str, Any]) -> int | str:
        """Return an action index, or raw text for text paradigms."""
        raise NotImplementedError

    def fast_forward(self, decision_count: int) -> None:
        """Re-derive internal state after a restore; default is stateless."""


class _LineSource:
    """Line reader that never blocks past the heartbeat deadline."""

    def __init__(self, fd: int):
        self.fd = fd
        self.buf = b""
        self.eof = False

    def next_line(self, timeout: float | None) -> bytes | None:
        """One line without the terminator; None on timeout; b"" on EOF."""
        while True:
            nl = self.buf.find(b"\n")
            if nl >= 0:
                line, self.buf = self.buf[:nl], self.buf[nl + 1 :]
                return line
            if self.eof:
                return b"" if not self.buf else self._drain()
            ready, _, _ = select.select([self.fd], [], [], timeout)
            if not ready:
                return None
            chunk = os.read(self.fd, 65536)
            if not chunk:
                self.eof = True
                continue
            self.buf += chunk

    def _drain(self) -> bytes:
        line, self.buf = self.buf, b""
        return line


class WorkerRuntime:
    def __init__(self, policy: Policy):
        self.policy = policy
        self.out = sys.stdout.buffer
        self.heartbeat_secs = float(os.environ.get("MOSAIC_HEARTBEAT_SECS", "60"))
        self.env_metadata: dict[str, Any] = {}
        self.seed = 0
        self.decision_count = 0
        self.episode_steps = 0
        self.total_reward = Decimal("0.000")
        self.episode_done = False
        self.was_reset = False

    def _write(self, msg: ProtocolMessage) -> None:
        self.out.write(encode_message(msg))
        self.out.flush()

    def _error(self, correlation_id: int, message: str) -> None:
        self._write(response("error", correlation_id, message=message))

    def _observation_shape(self) -> list[int]:
        shape = self.env_metadata.get("observation_shape")
        return list(shape) if isinstance(shape, list) else []

    def _handle_reset(self, msg: ProtocolMessage) -> None:
        self.seed = msg.payload["seed"]
        self.env_metadata = msg.get("env_metadata") or {}
        self.decision_count = 0
        self.episode_steps = 0
        self.total_reward = Decimal("0.000")
        self.episode_done = False
        self.was_reset = True
        self.policy.on_reset(self.seed, self.env_metadata)
        self._write(
            response(
                "ready",
                msg.correlation_id,
                seed=self.seed,
                observation_shape=self._observation_shape(),
                env_metadata=self.env_metadata,
            )
        )

    def _emit_decision(self, msg: ProtocolMessage, extra: dict[str, Any]) -> None:
        decision = self.policy.decide(msg.get("observation") or {}, msg.get("info") or {})
        self.decision_count += 1
        self.episode_steps += 1
        if isinstance(decision, str):
            self._write(response("step_result", msg.correlation_id, raw_text=decision, **extra))
        else:
            self._write(response("step_result", msg.correlation_id, action=int(decision), **extra))

    def _handle_select_action(self, msg: ProtocolMessage) -> None:
        if not self.was_reset:
            self._error(msg.correlation_id, "select_action before reset")
            return
        self._emit_decision(msg, {})

    def _handle_step(self, msg: ProtocolMessage) -> None:
        """Episode-accounting step: the payload feeds back the reward for the
        previous action; terminated=true closes the episode."""
        if not self.was_reset:
            self._error(msg.correlation_id, "step before reset")
            return
        if self.episode_done:
            self._write(
                response(
                    "episode_end",
                    msg.correlation_id,
                    total_reward=self.total_reward,
                    episode_length=max(self.episode_steps, 1),
                )
            )
            return
        reward = msg.get("reward")
        if reward is not None:
            self.total_reward += Decimal(reward)
        if msg.get("terminated") is True:
            self.episode_done = True
            self._write(
                response(
                    "episode_end",
                    msg.correlation_id,
                    total_reward=self.total_reward,
                    episode_length=max(self.episode_steps, 1),
                )
            )
            return
        self._emit_decision(msg, {"reward": reward if reward is not None else 0, "terminated": False})

    def _handle_restore(self, msg: ProtocolMessage) -> None:
        state = msg.payload["state"]
        try:
            self.seed = int(state["seed"])
            self.decision_count = int(state["decision_count"])
            self.episode_steps = int(state["episode_steps"])
            self.total_reward = Decimal(state["total_reward"])
        except (KeyError, ValueError, TypeError) as exc:
            self._error(msg.correlation_id, f"bad restore state: {exc}")
            return
        self.episode_done = False
        self.policy.on_reset(self.seed, self.env_metadata)
        self.policy.fast_forward(self.decision_count)
        self._write(
            response(
                "ready",
                msg.correlation_id,
                seed=self.seed,
                observation_shape=self._observation_shape(),
                env_metadata={"restored": True},
            )
        )

    def run(self) -> int:
        self._write(
            response(
                "handshake",
                0,
                worker_kind=self.policy.worker_kind,
                supported_commands=["reset", "step", "stop", "select_action", "restore"],
                observation_modalities=sorted(self.policy.modalities),
                max_image_history=self.policy.max_image_history,
                schema_version="1.0.0",
                env_metadata={},
            )
        )
        source = _LineSource(sys.stdin.fileno())
        timeout = self.heartbeat_secs if self.heartbeat_secs > 0 else None
        while True:
            line = source.next_line(timeout)
            if line is None:
                self._write(response("heartbeat", 0))
                continue
            if line == b"":
                return 0  # orchestrator closed our stdin
            try:
                msg = decode_message(line)
            except DecodeError as exc:
                self._error(0, f"undecodable command: {exc.failure_class}")
                continue
            if msg.kind != "command":
                self._error(msg.correlation_id, "expected a command")
                continue
            if msg.name == "stop":
                return 0
            try:
                if msg.name == "reset":
                    self._handle_reset(msg)
                elif msg.name == "select_action":
                    self._handle_select_action(msg)
                elif msg.name == "step":
                    self._handle_step(msg)
                elif msg.name == "restore":
                    self._handle_restore(msg)
                else:  # train is reserved but rejected by every built-in
                    self._error(msg.correlation_id, f"unsupported command {msg.name!r}")
            except Exception as exc:  # keep the loop alive on policy bugs
                print(f"worker error: {exc!r}", file=sys.stderr)
                self._error(msg.correlation_id, f"worker failure: {exc}")


def run_worker(policy: Policy) -> int:
    return WorkerRuntime(policy).run()
