"""Subprocess worker supervision.

Each worker runs in its own process group with stdout reserved for protocol
traffic and stderr captured to a log file. Pipe reading is pull-based: the
thread that wants a response reads the pipe directly, consuming heartbeats
into liveness bookkeeping along the way; ``pump``/``monitor`` keep liveness
fresh while workers sit idle. All liveness arithmetic uses an injectable
clock.
"""

from __future__ import annotations

import logging
import os
import select
import signal
import subprocess
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable

from ..protocol import (
    MAX_LINE_BYTES,
    CapabilityManifest,
    DecodeError,
    NegotiatedSession,
    ProtocolMessage,
    canonical_line,
    canonical_loads,
    command,
    decode_message,
    encode_message,
)
from ..protocol.negotiate import negotiate
from .clock import Clock, MonotonicClock

log = logging.getLogger(__name__)

STATE_STARTING = "starting"
STATE_READY = "ready"
STATE_BUSY = "busy"
STATE_PAUSED = "paused"
STATE_DEAD = "dead"
STATE_RECOVERING = "recovering"

_LIVE_STATES = (STATE_READY, STATE_BUSY, STATE_PAUSED)

DEFAULT_HEARTBEAT_INTERVAL = 60.0
DEFAULT_LIVENESS_WINDOW = 300.0


class SupervisorError(Exception):
    pass


class WorkerError(SupervisorError):
    """The worker answered with an error response."""


class WorkerDied(SupervisorError):
    pass


class WorkerTimeout(SupervisorError):
    pass


class HandshakeError(SupervisorError):
    pass


class RecoveryError(SupervisorError):
    pass


@dataclass(frozen=True)
class WorkerSpec:
    """How to launch and supervise one worker subprocess."""

    command: tuple[str, ...]
    worker_kind: str
    env_vars: dict[str, str] = field(default_factory=dict)
    working_dir: str | None = None
    heartbeat_interval: float = DEFAULT_HEARTBEAT_INTERVAL
    liveness_window: float = DEFAULT_LIVENESS_WINDOW
    max_restarts: int = 2
    startup_timeout: float = 10.0

    def __post_init__(self) -> None:
        if not self.command:
            raise ValueError("empty worker command")
        if self.liveness_window < 2 * self.heartbeat_interval:
            raise ValueError("liveness_window must be at least twice heartbeat_interval")
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be >= 0")


@dataclass(frozen=True)
class LivenessEvent:
    worker_id: str
    kind: str  # missed_heartbeat | dead | permanent_failure
    silence: float
    at: float


@dataclass(frozen=True)
class ExitReport:
    worker_id: str
    path: str  # protocol | forced
    returncode: int | None


@dataclass(frozen=True)
class CheckpointRef:
    worker_id: str
    episode_index: int
    step_index: int
    seed: int
    state_blob: bytes
    digest: str
    created_at: float
    path: Path | None = None

    def verify(self) -> bool:
        import hashlib

        return hashlib.sha256(self.state_blob).hexdigest() == self.digest


class _PipeSource:
    """Buffered line reader over a pipe fd with select-based timeouts.

    One hop fewer than a reader thread: the thread that wants the response
    reads the pipe itself, which roughly halves wakeups per round trip.
    """

    def __init__(self, fd: int, max_line: int = MAX_LINE_BYTES + 4096):
        self.fd = fd
        self.buf = bytearray()
        self.eof = False
        self.max_line = max_line

    def next_line(self, timeout: float | None) -> bytes | None:
        """One line incl. terminator; None on timeout; b"" on EOF."""
        scan_from = 0
        while True:
            nl = self.buf.find(b"\n", scan_from)
            if nl >= 0:
                line = bytes(self.buf[: nl + 1])
                del self.buf[: nl + 1]
                return line
            if len(self.buf) > self.max_line:
                raise OverflowError("line exceeds framing limit")
            if self.eof:
                self.buf.clear()
                return b""
            scan_from = len(self.buf)
            ready, _, _ = select.select([self.fd], [], [], timeout)
            if not ready:
                return None
            chunk = os.read(self.fd, 131072)
            if not chunk:
                self.eof = True
                continue
            self.buf += chunk


class WorkerHandle:
    """Live view of one supervised worker. Owned by the supervisor."""

    def __init__(self, worker_id: str, spec: WorkerSpec):
        self.worker_id = worker_id
        self.spec = spec
        self.state = STATE_STARTING
        self.proc: subprocess.Popen | None = None
        self.process_group_id: int | None = None
        self.session: NegotiatedSession | None = None
        self.last_heartbeat: float = 0.0
        self.restarts_used = 0
        self.source: _PipeSource | None = None
        self._stray_lines: deque[bytes] = deque()  # drained by pump, served first
        self.lock = threading.Lock()
        self.io_lock = threading.Lock()  # one pipe reader at a time
        self._next_correlation = 1
        self._warned_intervals = 0
        self._exit_report: ExitReport | None = None
        # Shadow of worker-visible accounting, kept current from traffic;
        # doubles as the restore payload.
        self.shadow: dict[str, Any] = {}
        self.last_reset: dict[str, Any] = {}

    def next_correlation_id(self) -> int:
        with self.lock:
            cid = self._next_correlation
            self._next_correlation += 1
            return cid

    @property
    def episode_index(self) -> int:
        return int(self.shadow.get("episode_index", 0))

    @property
    def step_index(self) -> int:
        return int(self.shadow.get("episode_steps", 0))


class Supervisor:
    """Spawns, supervises, checkpoints, and recovers worker subprocesses."""

    def __init__(
        self,
        clock: Clock | None = None,
        logs_dir: str | Path | None = None,
        checkpoints_dir: str | Path | None = None,
        checkpoint_every_steps: int = 100,
    ):
        self.clock = clock or MonotonicClock()
        self.logs_dir = Path(logs_dir) if logs_dir else None
        self.checkpoints_dir = Path(checkpoints_dir) if checkpoints_dir else None
        self.checkpoint_every_steps = checkpoint_every_steps
        self.workers: dict[str, WorkerHandle] = {}
        self._checkpoints: dict[str, list[CheckpointRef]] = {}
        self._counter = 0

    # -- spawning ----------------------------------------------------------

    def _mark_alive(self, handle: WorkerHandle) -> None:
        with handle.lock:
            handle.last_heartbeat = self.clock.now()
            handle._warned_intervals = 0

    def _next_payload_line(self, handle: WorkerHandle, timeout: float | None) -> bytes | None:
        """Next non-heartbeat line; consumes heartbeats into liveness only.

        Returns None on timeout, b"" on EOF. Heartbeats are recognizable by
        a marker that escaped quotes make unforgeable inside string values.
        """
        assert handle.source is not None
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            try:
                line = handle.source.next_line(remaining)
            except OverflowError:
                self._kill_group(handle)
                handle.state = STATE_DEAD
                raise WorkerDied(f"{handle.worker_id}: framing overflow on stdout")
            if line is None:
                if deadline is not None and time.monotonic() >= deadline:
                    return None
                continue
            if line == b"":
                return b""
            self._mark_alive(handle)
            if b'"resp":"heartbeat"' in line:
                continue
            return line

    def pump(self, handle: WorkerHandle) -> None:
        """Drain buffered heartbeats without blocking (liveness upkeep)."""
        if handle.source is None or handle.state not in _LIVE_STATES:
            return
        if not handle.io_lock.acquire(blocking=False):
            return  # someone is actively receiving; they keep liveness fresh
        try:
            while True:
                line = handle.source.next_line(0)
                if line is None:
                    return
                if line == b"":
                    handle.state = STATE_DEAD
                    return
                self._mark_alive(handle)
                if b'"resp":"heartbeat"' not in line:
                    handle._stray_lines.append(line)
        finally:
            handle.io_lock.release()

    def _start_process(self, handle: WorkerHandle, required: CapabilityManifest | None) -> None:
        spec = handle.spec
        env = dict(os.environ)
        env.update(spec.env_vars)
        env["MOSAIC_WORKER_ID"] = handle.worker_id
        stderr_target = subprocess.DEVNULL
        if self.logs_dir is not None:
            self.logs_dir.mkdir(parents=True, exist_ok=True)
            stderr_target = open(self.logs_dir / f"{handle.worker_id}.stderr.log", "ab")
        try:
            handle.proc = subprocess.Popen(
                spec.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=stderr_target,
                cwd=spec.working_dir,
                env=env,
                start_new_session=True,  # fresh process group: isolation unit
            )
        except OSError as exc:
            raise SupervisorError(f"spawn failed for {spec.command[0]!r}: {exc}") from exc
        finally:
            if stderr_target is not subprocess.DEVNULL:
                stderr_target.close()
        handle.process_group_id = handle.proc.pid
        handle.source = _PipeSource(handle.proc.stdout.fileno())
        handle._stray_lines.clear()
        try:
            raw = self._next_payload_line(handle, spec.startup_timeout)
        except WorkerDied as exc:
            raise HandshakeError(f"{handle.worker_id}: {exc}") from exc
        if raw is None:
            self._kill_group(handle)
            raise HandshakeError(f"{handle.worker_id}: no handshake within {spec.startup_timeout}s")
        if raw == b"":
            self._kill_group(handle)
            raise HandshakeError(f"{handle.worker_id}: worker exited before handshake")
        try:
            first = decode_message(raw)
        except DecodeError as exc:
            self._kill_group(handle)
            raise HandshakeError(f"{handle.worker_id}: handshake undecodable ({exc})")
        try:
            manifest = CapabilityManifest.from_message(first)
            req = required or CapabilityManifest(
                worker_kind=spec.worker_kind,
                supported_commands=frozenset({"reset", "stop"}),
                observation_modalities=frozenset(),
            )
            handle.session = negotiate(manifest, req)
        except Exception:
            self._kill_group(handle)
            raise
        with handle.lock:
            handle.last_heartbeat = self.clock.now()
        handle.state = STATE_READY
        handle._exit_report = None

    def spawn_worker(self, spec: WorkerSpec, required: CapabilityManifest | None = None) -> WorkerHandle:
        self._counter += 1
        worker_id = f"w{self._counter:03d}-{spec.worker_kind}"
        handle = WorkerHandle(worker_id, spec)
        self._start_process(handle, required)
        self.workers[worker_id] = handle
        self._required_manifest = required
        handle._required = required  # reused verbatim on recovery
        return handle

    # -- request/response ---------------------------------------------------

    def send(self, handle: WorkerHandle, msg: ProtocolMessage) -> None:
        if handle.state not in (STATE_READY, STATE_BUSY):
            raise SupervisorError(f"{handle.worker_id}: cannot send in state {handle.state}")
        assert handle.proc is not None and handle.proc.stdin is not None
        data = encode_message(msg)
        try:
            handle.proc.stdin.write(data)
            handle.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            handle.state = STATE_DEAD
            raise WorkerDied(f"{handle.worker_id}: pipe closed on send") from exc
        self._track_command(handle, msg)

    def _track_command(self, handle: WorkerHandle, msg: ProtocolMessage) -> None:
        if msg.name == "reset":
            handle.last_reset = {
                "seed": msg.payload["seed"],
                "env_metadata": msg.get("env_metadata") or {},
            }
            handle.shadow = {
                "seed": msg.payload["seed"],
                "decision_count": 0,
                "episode_steps": 0,
                "episode_index": handle.shadow.get("episode_index", 0),
                "total_reward": Decimal("0.000"),
            }
        elif msg.name == "step":
            reward = msg.get("reward")
            if reward is not None and handle.shadow:
                handle.shadow["total_reward"] = handle.shadow["total_reward"] + Decimal(reward)

    def _track_response(self, handle: WorkerHandle, msg: ProtocolMessage) -> None:
        if not handle.shadow:
            return
        if msg.name == "step_result":
            handle.shadow["decision_count"] += 1
            handle.shadow["episode_steps"] += 1
        elif msg.name == "episode_end":
            handle.shadow["episode_index"] = handle.shadow.get("episode_index", 0) + 1
            handle.shadow["episode_steps"] = 0

    def receive(self, handle: WorkerHandle, correlation_id: int, timeout: float) -> ProtocolMessage:
        deadline = time.monotonic() + timeout
        with handle.io_lock:
            while True:
                if handle._stray_lines:
                    raw: bytes | None = handle._stray_lines.popleft()
                else:
                    remaining = max(0.0, deadline - time.monotonic())
                    raw = self._next_payload_line(handle, remaining)
                if raw is None:
                    handle.state = STATE_DEAD
                    raise WorkerTimeout(
                        f"{handle.worker_id}: no response to #{correlation_id} in {timeout}s"
                    )
                if raw == b"":
                    handle.state = STATE_DEAD
                    raise WorkerDied(f"{handle.worker_id}: pipe closed mid-request")
                try:
                    item = decode_message(raw)
                except DecodeError as exc:
                    handle.state = STATE_DEAD
                    self._kill_group(handle)
                    raise WorkerDied(f"{handle.worker_id}: protocol violation: {exc}")
                if item.correlation_id != correlation_id:
                    log.warning("%s: dropping stale response #%s", handle.worker_id, item.correlation_id)
                    continue
                if item.name == "error":
                    handle.state = STATE_READY
                    raise WorkerError(f"{handle.worker_id}: {item.payload.get('message')}")
                self._track_response(handle, item)
                return item

    def request(self, handle: WorkerHandle, msg: ProtocolMessage, timeout: float = 30.0) -> ProtocolMessage:
        """Send one command and return its matching response."""
        if handle.state not in (STATE_READY, STATE_BUSY):
            raise SupervisorError(f"{handle.worker_id}: request in state {handle.state}")
        handle.state = STATE_BUSY
        try:
            self.send(handle, msg)
            reply = self.receive(handle, msg.correlation_id, timeout)
        finally:
            if handle.state == STATE_BUSY:
                handle.state = STATE_READY
        return reply

    def command(self, handle: WorkerHandle, name: str, timeout: float = 30.0, **payload: Any) -> ProtocolMessage:
        return self.request(handle, command(name, handle.next_correlation_id(), **payload), timeout)

    def request_many(
        self,
        requests: list[tuple[WorkerHandle, ProtocolMessage]],
        timeout: float = 30.0,
    ) -> list[ProtocolMessage | Exception]:
        """Fan out commands to several workers, then collect each response.

        All writes happen before any read, so the workers compute
        concurrently; results come back in request order regardless of
        worker completion order.
        """
        results: list[ProtocolMessage | Exception] = [None] * len(requests)  # type: ignore[list-item]
        sent: list[int] = []
        for i, (handle, msg) in enumerate(requests):
            try:
                if handle.state not in (STATE_READY, STATE_BUSY):
                    raise SupervisorError(f"{handle.worker_id}: request in state {handle.state}")
                handle.state = STATE_BUSY
                self.send(handle, msg)
                sent.append(i)
            except Exception as exc:  # noqa: BLE001 - collected per slot
                results[i] = exc
        for i in sent:
            handle, msg = requests[i]
            try:
                results[i] = self.receive(handle, msg.correlation_id, timeout)
            except Exception as exc:  # noqa: BLE001 - collected per slot
                results[i] = exc
            finally:
                if handle.state == STATE_BUSY:
                    handle.state = STATE_READY
        return results

    # -- liveness ------------------------------------------------------------

    def monitor(self, now: float | None = None) -> list[LivenessEvent]:
        """Emit missed-heartbeat warnings and dead verdicts; idempotent for an
        unchanged clock reading."""
        for handle in self.workers.values():
            self.pump(handle)
        now = self.clock.now() if now is None else now
        events: list[LivenessEvent] = []
        for handle in self.workers.values():
            if handle.state not in _LIVE_STATES:
                continue
            with handle.lock:
                silence = now - handle.last_heartbeat
                warned = handle._warned_intervals
            interval = handle.spec.heartbeat_interval
            if silence >= handle.spec.liveness_window:
                handle.state = STATE_DEAD
                events.append(LivenessEvent(handle.worker_id, "dead", silence, now))
                continue
            intervals = int(silence // interval)
            if intervals > warned:
                with handle.lock:
                    handle._warned_intervals = intervals
                events.append(LivenessEvent(handle.worker_id, "missed_heartbeat", silence, now))
        return events

    # -- checkpoints ----------------------------------------------------------

    def checkpoint(self, handle: WorkerHandle) -> CheckpointRef:
        """Persist the current shadow state as a restore point."""
        import hashlib

        shadow = dict(handle.shadow)
        if not shadow:
            raise SupervisorError(f"{handle.worker_id}: nothing to checkpoint before reset")
        shadow["total_reward"] = shadow["total_reward"]  # Decimal: canonical literal
        blob = canonical_line(
            {
                "seed": shadow["seed"],
                "decision_count": shadow["decision_count"],
                "episode_steps": shadow["episode_steps"],
                "episode_index": shadow.get("episode_index", 0),
                "total_reward": shadow["total_reward"],
            }
        )
        digest = hashlib.sha256(blob).hexdigest()
        ref = CheckpointRef(
            worker_id=handle.worker_id,
            episode_index=handle.episode_index,
            step_index=handle.step_index,
            seed=int(shadow["seed"]),
            state_blob=blob,
            digest=digest,
            created_at=self.clock.now(),
        )
        if self.checkpoints_dir is not None:
            cdir = self.checkpoints_dir / handle.worker_id
            cdir.mkdir(parents=True, exist_ok=True)
            path = cdir / f"{ref.episode_index}_{ref.step_index}.ckpt"
            path.write_bytes(blob)
            path.with_suffix(".ckpt.sha256").write_text(digest + "\n")
            ref = CheckpointRef(**{**ref.__dict__, "path": path})
        self._checkpoints.setdefault(handle.worker_id, []).append(ref)
        return ref

    def checkpoints_for(self, worker_id: str) -> list[CheckpointRef]:
        return list(self._checkpoints.get(worker_id, []))

    # -- recovery --------------------------------------------------------------

    def restore_state(self, handle: WorkerHandle, state_doc: dict[str, Any]) -> None:
        """Rewind a live worker to a recorded accounting snapshot."""
        self.command(handle, "restore", state=state_doc)
        handle.shadow = {
            "seed": state_doc["seed"],
            "decision_count": state_doc["decision_count"],
            "episode_steps": state_doc["episode_steps"],
            "episode_index": state_doc.get("episode_index", 0),
            "total_reward": Decimal(state_doc["total_reward"]),
        }

    def snapshot_shadow(self, handle: WorkerHandle) -> dict[str, Any]:
        shadow = handle.shadow
        return {
            "seed": shadow["seed"],
            "decision_count": shadow["decision_count"],
            "episode_steps": shadow["episode_steps"],
            "episode_index": shadow.get("episode_index", 0),
            "total_reward": shadow["total_reward"],
        }

    def recover(
        self,
        handle: WorkerHandle,
        replayer: Callable[[WorkerHandle], None] | None = None,
        state_doc: dict[str, Any] | None = None,
    ) -> WorkerHandle:
        """Respawn a dead worker and restore its state.

        Preference order: the caller-supplied snapshot, then the newest
        persisted checkpoint whose digest verifies (both sent via the
        restore command when the worker supports it), then the caller's
        replayer, which re-drives the worker from a fresh reset.
        """
        if handle.state != STATE_DEAD:
            raise SupervisorError(f"{handle.worker_id}: recover requires a dead worker")
        if handle.restarts_used >= handle.spec.max_restarts:
            raise RecoveryError(f"{handle.worker_id}: restart budget exhausted")
        self._kill_group(handle)
        handle.state = STATE_RECOVERING
        handle.restarts_used += 1
        handle._exit_report = None
        try:
            self._start_process(handle, getattr(handle, "_required", None))
        except SupervisorError:
            handle.state = STATE_DEAD
            raise
        supports_restore = "restore" in (handle.session.supported_commands if handle.session else ())
        env_metadata = handle.last_reset.get("env_metadata", {})
        if supports_restore:
            candidates: list[dict[str, Any]] = []
            if state_doc is not None:
                candidates.append(state_doc)
            for ref in reversed(self._checkpoints.get(handle.worker_id, [])):
                if not ref.verify():
                    log.warning("%s: checkpoint %s_%s digest mismatch, trying older",
                                handle.worker_id, ref.episode_index, ref.step_index)
                    continue
                candidates.append(canonical_loads(ref.state_blob))
            for doc in candidates:
                self.command(handle, "reset", seed=int(doc["seed"]), env_metadata=env_metadata)
                self.restore_state(handle, doc)
                return handle
        if replayer is not None:
            seed = handle.last_reset.get("seed", 0)
            self.command(handle, "reset", seed=seed, env_metadata=env_metadata)
            replayer(handle)
            return handle
        handle.state = STATE_DEAD
        raise RecoveryError(
            f"{handle.worker_id}: no usable checkpoint and no replayer available"
        )

    # -- shutdown ---------------------------------------------------------------

    def _kill_group(self, handle: WorkerHandle, sig: int = signal.SIGKILL) -> None:
        pgid = handle.process_group_id
        if pgid is None:
            return
        try:
            os.killpg(pgid, sig)
        except ProcessLookupError:
            pass
        if handle.proc is not None:
            try:
                handle.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:  # pragma: no cover - SIGKILL path
                pass

    def group_alive(self, handle: WorkerHandle) -> bool:
        """True while any member of the worker's process group survives."""
        if handle.process_group_id is None:
            return False
        if handle.proc is not None and handle.proc.poll() is None:
            return True
        try:
            os.killpg(handle.process_group_id, 0)
            return True
        except ProcessLookupError:
            return False

    def stop_worker(self, handle: WorkerHandle, grace: float = 2.0) -> ExitReport:
        """Protocol stop, then SIGTERM, then SIGKILL; always reaps; idempotent."""
        if handle._exit_report is not None:
            return handle._exit_report
        path = "protocol"
        proc = handle.proc
        if proc is not None and proc.poll() is None:
            try:
                if handle.state in (STATE_READY, STATE_BUSY, STATE_PAUSED):
                    stop = command("stop", handle.next_correlation_id())
                    proc.stdin.write(encode_message(stop))
                    proc.stdin.flush()
            except (BrokenPipeError, OSError):
                pass
            try:
                proc.wait(timeout=grace)
            except subprocess.TimeoutExpired:
                path = "forced"
                try:
                    os.killpg(handle.process_group_id, signal.SIGTERM)
                except ProcessLookupError:
                    pass
                try:
                    proc.wait(timeout=grace)
                except subprocess.TimeoutExpired:
                    self._kill_group(handle, signal.SIGKILL)
        # Reap any stragglers in the group.
        while self.group_alive(handle) and (proc is None or proc.poll() is not None):
            self._kill_group(handle, signal.SIGKILL)
        handle.state = STATE_DEAD
        report = ExitReport(handle.worker_id, path, proc.returncode if proc else None)
        handle._exit_report = report
        return report

    def stop_all(self, grace: float = 2.0) -> list[ExitReport]:
        return [self.stop_worker(h, grace) for h in list(self.workers.values())]
