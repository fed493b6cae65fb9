"""Golden transcript conformance suite for worker executables.

Drives a candidate worker over its stdin/stdout with no supervisor
conveniences: if a worker passes here, it can interoperate with the
platform from any language. Checks marked mandatory gate the exit code;
``restore-roundtrip`` is mandatory only when the worker advertises the
restore command.
"""

from __future__ import annotations

import os
import signal
import subprocess
import time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any

from .protocol import (
    CapabilityManifest,
    DecodeError,
    ProtocolMessage,
    command,
    decode_message,
    encode_message,
)
from .supervisor.supervisor import _PipeSource

SCALED_HEARTBEAT = 0.2

ENV_METADATA = {
    "task_id": "mosaic/Corridor-v1",
    "action_space": {"n": 3, "labels": ["stay", "forward", "back"], "null_action": 0},
    "observation_shape": [1, 5, 2],
    "slots": ["agent_0"],
    "teams": {"solo": ["agent_0"]},
    "horizon": 20,
}

TENSOR_OBS = {"modality": "tensor", "shape": [1, 5, 2], "data": [1, 0, 0, 0, 0, 0, 0, 0, 0, 1]}
TEXT_OBS = {"modality": "text", "text": "You are in a corridor of length 5. The goal is 4 steps ahead."}
TEXT_IMAGE_OBS = {
    "modality": "text_image",
    "text": TEXT_OBS["text"],
    "images": [{"shape": [1, 1, 3], "b64": "HBwg"}],
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    mandatory: bool = True
    detail: str = ""


@dataclass
class ConformanceReport:
    worker: list[str]
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.mandatory)

    def to_doc(self) -> dict[str, Any]:
        return {
            "worker": list(self.worker),
            "passed": self.passed,
            "checks": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "mandatory": c.mandatory,
                    **({"detail": c.detail} if c.detail else {}),
                }
                for c in self.checks
            ],
        }


class _Candidate:
    """One worker process under test."""

    def __init__(self, cmd: list[str], heartbeat_secs: float | None = None):
        env = dict(os.environ)
        env["MOSAIC_WORKER_ID"] = "conformance"
        if heartbeat_secs is not None:
            env["MOSAIC_HEARTBEAT_SECS"] = str(heartbeat_secs)
        self.proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            env=env,
            start_new_session=True,
        )
        self.source = _PipeSource(self.proc.stdout.fileno())
        self.next_cid = 1

    def raw_line(self, timeout: float) -> bytes | None:
        line = self.source.next_line(timeout)
        return None if line in (None, b"") else line

    def next_message(self, timeout: float = 5.0, skip_heartbeats: bool = True) -> ProtocolMessage:
        deadline = time.monotonic() + timeout
        while True:
            remaining = max(0.0, deadline - time.monotonic())
            line = self.source.next_line(remaining)
            if line is None:
                raise TimeoutError("no line from worker")
            if line == b"":
                raise EOFError("worker closed stdout")
            msg = decode_message(line)
            if skip_heartbeats and msg.name == "heartbeat":
                continue
            return msg

    def send(self, name: str, **payload: Any) -> int:
        cid = self.next_cid
        self.next_cid += 1
        try:
            self.proc.stdin.write(encode_message(command(name, cid, **payload)))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EOFError(f"worker closed stdin pipe: {exc}") from exc
        return cid

    def send_raw(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EOFError(f"worker closed stdin pipe: {exc}") from exc

    def ask(self, name: str, timeout: float = 5.0, **payload: Any) -> ProtocolMessage:
        cid = self.send(name, **payload)
        msg = self.next_message(timeout)
        if msg.correlation_id != cid:
            raise AssertionError(f"correlation mismatch: sent {cid}, got {msg.correlation_id}")
        return msg

    def kill(self) -> None:
        try:
            os.killpg(self.proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        self.proc.wait()


def _obs_for(manifest: CapabilityManifest) -> dict[str, Any]:
    mods = manifest.observation_modalities
    if "image" in mods and "text" in mods:
        return TEXT_IMAGE_OBS
    if "text" in mods and "tensor" not in mods:
        return TEXT_OBS
    return TENSOR_OBS


def _decision_of(msg: ProtocolMessage) -> Any:
    return msg.get("raw_text") if msg.get("raw_text") is not None else msg.get("action")


def run_conformance(worker_cmd: list[str], heartbeat_secs: float = SCALED_HEARTBEAT) -> ConformanceReport:
    report = ConformanceReport(worker=worker_cmd)
    check = report.checks.append

    # handshake + capability manifest
    candidate = _Candidate(worker_cmd, heartbeat_secs=None)
    manifest: CapabilityManifest | None = None
    try:
        first = candidate.next_message(timeout=10.0)
        if first.name != "handshake":
            check(CheckResult("handshake", False, detail=f"first message was {first.name}"))
            return report
        manifest = CapabilityManifest.from_message(first)
        problems = manifest.violations()
        check(CheckResult("handshake", not problems, detail="; ".join(problems)))
    except (TimeoutError, EOFError, DecodeError, KeyError) as exc:
        check(CheckResult("handshake", False, detail=str(exc)))
        candidate.kill()
        return report

    obs = _obs_for(manifest)

    # reset -> ready exactly once, seed echoed
    try:
        reply = candidate.ask("reset", seed=42, env_metadata=ENV_METADATA)
        ok = reply.name == "ready" and reply.get("seed") == 42 and isinstance(reply.get("observation_shape"), list)
        extra = candidate.raw_line(0.2)
        if extra is not None:
            ok = False
        check(CheckResult("reset-ready", ok, detail="" if ok else f"got {reply.name} {reply.payload}"))
    except Exception as exc:  # noqa: BLE001
        check(CheckResult("reset-ready", False, detail=str(exc)))

    # select_action contract: step_result with in-range action or raw text
    first_stream: list[Any] = []
    try:
        ok = True
        details = []
        for _ in range(4):
            reply = candidate.ask("select_action", observation=obs, info={})
            if reply.name != "step_result":
                ok = False
                details.append(f"got {reply.name}")
                break
            action = reply.get("action")
            raw_text = reply.get("raw_text")
            if action is not None and not 0 <= action < ENV_METADATA["action_space"]["n"]:
                ok = False
                details.append(f"action {action} out of range")
            if action is None and raw_text is None:
                ok = False
                details.append("neither action nor raw_text")
            first_stream.append(_decision_of(reply))
        check(CheckResult("select-action", ok, detail="; ".join(details)))
    except Exception as exc:  # noqa: BLE001
        check(CheckResult("select-action", False, detail=str(exc)))

    # determinism: same seed, same decisions
    try:
        candidate.ask("reset", seed=42, env_metadata=ENV_METADATA)
        second_stream = [
            _decision_of(candidate.ask("select_action", observation=obs, info={}))
            for _ in range(len(first_stream))
        ]
        ok = bool(first_stream) and second_stream == first_stream
        check(CheckResult("seed-determinism", ok,
                          detail="" if ok else f"{first_stream} != {second_stream}"))
    except Exception as exc:  # noqa: BLE001
        check(CheckResult("seed-determinism", False, detail=str(exc)))

    # episode accounting: step feedback accumulates; terminated -> episode_end
    supports_step = "step" in manifest.supported_commands
    try:
        candidate.ask("reset", seed=7, env_metadata=ENV_METADATA)
        rewards = [1, 0, 1]
        ok = supports_step
        detail = "" if supports_step else "step not in supported_commands"
        if supports_step:
            for r in rewards:
                reply = candidate.ask("step", observation=obs, reward=r, terminated=False)
                if reply.name != "step_result":
                    ok = False
                    detail = f"expected step_result, got {reply.name}"
                    break
            if ok:
                reply = candidate.ask("step", reward=0.5, terminated=True)
                if reply.name != "episode_end":
                    ok = False
                    detail = f"expected episode_end, got {reply.name}"
                elif Decimal(reply.get("total_reward")) != Decimal("2.5") or reply.get("episode_length") != 3:
                    ok = False
                    detail = f"episode_end payload {reply.payload}"
                else:
                    again = candidate.ask("step")
                    if again.name != "episode_end":
                        ok = False
                        detail = "step after terminal episode must repeat episode_end"
        check(CheckResult("episode-accounting", ok, detail=detail))
    except Exception as exc:  # noqa: BLE001
        check(CheckResult("episode-accounting", False, detail=str(exc)))

    # hostile input: malformed line answered with error, not a crash
    try:
        candidate.send_raw(b"this is not a protocol line\n")
        reply = candidate.next_message()
        ok = reply.name == "error"
        reply = candidate.ask("select_action", observation=obs, info={})
        ok = ok and reply.name == "step_result"
        check(CheckResult("malformed-line", ok))
    except Exception as exc:  # noqa: BLE001
        check(CheckResult("malformed-line", False, detail=str(exc)))

    # train is reserved: reject, do not act
    try:
        reply = candidate.ask("train")
        check(CheckResult("train-rejected", reply.name == "error",
                          detail="" if reply.name == "error" else f"got {reply.name}"))
    except Exception as exc:  # noqa: BLE001
        check(CheckResult("train-rejected", False, detail=str(exc)))

    # protocol stop: clean exit
    try:
        candidate.send("stop")
        code = candidate.proc.wait(timeout=5)
        check(CheckResult("stop-clean-exit", code == 0, detail=f"exit code {code}"))
    except subprocess.TimeoutExpired:
        check(CheckResult("stop-clean-exit", False, detail="did not exit within grace"))
        candidate.kill()
    except EOFError as exc:
        check(CheckResult("stop-clean-exit", False, detail=str(exc)))
        candidate.kill()

    # heartbeat timing at a scaled clock
    hb = _Candidate(worker_cmd, heartbeat_secs=heartbeat_secs)
    try:
        hb.next_message(timeout=10.0)  # handshake
        seen = 0
        deadline = time.monotonic() + 3.5 * heartbeat_secs
        while time.monotonic() < deadline:
            line = hb.raw_line(max(0.0, deadline - time.monotonic()))
            if line is not None and b'"resp":"heartbeat"' in line:
                seen += 1
        check(CheckResult("heartbeat-timing", seen >= 2,
                          detail=f"saw {seen} heartbeats in 3.5 intervals"))
    except Exception as exc:  # noqa: BLE001
        check(CheckResult("heartbeat-timing", False, detail=str(exc)))
    finally:
        hb.kill()

    # restore round trip (mandatory when advertised)
    advertises_restore = "restore" in manifest.supported_commands
    if not advertises_restore:
        check(CheckResult("restore-roundtrip", True, mandatory=False, detail="not advertised; skipped"))
    else:
        ref = _Candidate(worker_cmd, heartbeat_secs=None)
        try:
            ref.next_message(timeout=10.0)
            ref.ask("reset", seed=42, env_metadata=ENV_METADATA)
            stream = [_decision_of(ref.ask("select_action", observation=obs, info={})) for _ in range(4)]
            ref.kill()

            resumed = _Candidate(worker_cmd, heartbeat_secs=None)
            resumed.next_message(timeout=10.0)
            resumed.ask("reset", seed=42, env_metadata=ENV_METADATA)
            reply = resumed.ask(
                "restore",
                state={"seed": 42, "decision_count": 3, "episode_steps": 3,
                       "episode_index": 0, "total_reward": Decimal("0.000")},
            )
            ok = reply.name == "ready"
            fourth = _decision_of(resumed.ask("select_action", observation=obs, info={}))
            ok = ok and fourth == stream[3]
            check(CheckResult("restore-roundtrip", ok,
                              detail="" if ok else f"resumed {fourth!r} != recorded {stream[3]!r}"))
            resumed.send("stop")
            resumed.proc.wait(timeout=5)
        except Exception as exc:  # noqa: BLE001
            check(CheckResult("restore-roundtrip", False, detail=str(exc)))
    return report
