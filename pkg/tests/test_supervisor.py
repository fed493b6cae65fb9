from __future__ import annotations

import concurrent.futures
import os
import random
import signal
import time

import pytest

from mosaic.protocol import CapabilityManifest
from mosaic.supervisor import (
    ManualClock,
    RecoveryError,
    Supervisor,
    SupervisorError,
    WorkerDied,
    WorkerHandle,
    WorkerSpec,
    WorkerTimeout,
    STATE_DEAD,
    STATE_READY,
)

from .conftest import helper_cmd, worker_cmd

META = {
    "action_space": {"n": 5, "labels": ["stay", "up", "down", "left", "right"], "null_action": 0},
    "observation_shape": [7, 7, 3],
}
OBS = {"modality": "text", "text": "probe"}


def spawn_baseline(sup: Supervisor, kind: str = "random", **spec_kw) -> WorkerHandle:
    handle = sup.spawn_worker(
        WorkerSpec(command=worker_cmd("baseline", "--kind", kind), worker_kind="baseline", **spec_kw)
    )
    return handle


# -- spawning -----------------------------------------------------------------


def test_spawn_happy_path_negotiates_and_is_ready():
    sup = Supervisor()
    handle = spawn_baseline(sup)
    try:
        assert handle.state == STATE_READY
        assert handle.session is not None
        assert handle.session.worker_kind == "baseline"
        assert {"reset", "stop"} <= handle.session.supported_commands
    finally:
        sup.stop_all()


def test_spawn_garbage_executable_is_handshake_error():
    import sys

    sup = Supervisor()
    spec = WorkerSpec(
        command=(sys.executable, "-c", "print('garbage not protocol'); import time; time.sleep(5)"),
        worker_kind="baseline",
        startup_timeout=5.0,
    )
    from mosaic.supervisor import HandshakeError

    with pytest.raises(HandshakeError):
        sup.spawn_worker(spec)


def test_spawn_missing_executable_is_spawn_error():
    sup = Supervisor()
    with pytest.raises(SupervisorError):
        sup.spawn_worker(WorkerSpec(command=("/no/such/binary",), worker_kind="baseline"))


def test_worker_spec_invariants():
    with pytest.raises(ValueError):
        WorkerSpec(command=("x",), worker_kind="rl", heartbeat_interval=10, liveness_window=15)
    with pytest.raises(ValueError):
        WorkerSpec(command=("x",), worker_kind="rl", max_restarts=-1)


def test_eight_concurrent_spawns_no_pipe_crosstalk():
    """Echo oracle: each worker answers with its own pid; groups distinct."""
    sup = Supervisor()
    try:
        with concurrent.futures.ThreadPoolExecutor(8) as pool:
            handles = list(
                pool.map(
                    lambda _: sup.spawn_worker(
                        WorkerSpec(command=helper_cmd("echo_worker"), worker_kind="baseline")
                    ),
                    range(8),
                )
            )
        groups = {h.process_group_id for h in handles}
        assert len(groups) == 8
        for handle in handles:
            sup.command(handle, "reset", seed=1, env_metadata=META)
            reply = sup.command(handle, "select_action", observation=OBS, info={})
            assert int(reply.payload["raw_text"]) == handle.proc.pid
    finally:
        sup.stop_all()


# -- request/response ------------------------------------------------------------


def test_request_to_dead_handle_is_a_state_error():
    sup = Supervisor()
    handle = spawn_baseline(sup)
    sup.stop_worker(handle)
    with pytest.raises(SupervisorError):
        sup.command(handle, "reset", seed=1)


def test_worker_error_response_is_surfaced():
    from mosaic.supervisor import WorkerError

    sup = Supervisor()
    handle = spawn_baseline(sup)
    try:
        with pytest.raises(WorkerError) as err:
            sup.command(handle, "train")
        assert "unsupported" in str(err.value)
        # the worker survives and keeps serving
        sup.command(handle, "reset", seed=1, env_metadata=META)
    finally:
        sup.stop_all()


def test_timeout_marks_handle_dead():
    sup = Supervisor()
    handle = sup.spawn_worker(
        WorkerSpec(command=helper_cmd("stubborn_worker"), worker_kind="baseline")
    )
    with pytest.raises(WorkerTimeout):
        sup.command(handle, "reset", seed=1, timeout=0.5)
    assert handle.state == STATE_DEAD
    sup.stop_all()


def test_heartbeats_update_liveness_between_requests():
    sup = Supervisor()
    handle = spawn_baseline(sup, env_vars={"MOSAIC_HEARTBEAT_SECS": "0.1"})
    try:
        time.sleep(0.5)
        sup.pump(handle)
        assert sup.clock.now() - handle.last_heartbeat < 0.4
    finally:
        sup.stop_all()


# -- liveness monitor (injected clock oracle) ---------------------------------------


def offline_handle(sup: Supervisor, **spec_kw) -> WorkerHandle:
    spec = WorkerSpec(command=("true",), worker_kind="baseline", **spec_kw)
    handle = WorkerHandle("w-test", spec)
    handle.state = STATE_READY
    handle.last_heartbeat = 0.0
    sup.workers[handle.worker_id] = handle
    return handle


def test_monitor_warning_after_one_interval():
    sup = Supervisor(clock=ManualClock())
    handle = offline_handle(sup)  # defaults: 60s interval / 300s window
    assert sup.monitor(now=59.0) == []
    events = sup.monitor(now=61.0)
    assert [e.kind for e in events] == ["missed_heartbeat"]
    assert sup.monitor(now=61.0) == []  # idempotent for an unchanged reading


def test_monitor_dead_verdict_after_liveness_window():
    sup = Supervisor(clock=ManualClock())
    handle = offline_handle(sup)
    sup.monitor(now=61.0)
    events = sup.monitor(now=301.0)
    assert [e.kind for e in events] == ["dead"]
    assert handle.state == STATE_DEAD
    assert sup.monitor(now=400.0) == []  # verdicts are stable


def test_monitor_fresh_heartbeats_never_alarm():
    sup = Supervisor(clock=ManualClock())
    handle = offline_handle(sup)
    events = []
    for t in range(0, 3600, 59):
        handle.last_heartbeat = float(t)
        events.extend(sup.monitor(now=float(t)))
    assert events == []


def test_monitor_warns_once_per_silent_interval():
    sup = Supervisor(clock=ManualClock())
    offline_handle(sup)
    kinds = []
    for t in (61.0, 90.0, 121.0, 185.0, 240.0):
        kinds.extend(e.kind for e in sup.monitor(now=t))
    # one warning per newly crossed interval: at 61, 121, 185, 240
    assert kinds == ["missed_heartbeat"] * 4


def test_liveness_monotonicity_under_traffic():
    sup = Supervisor()
    handle = spawn_baseline(sup)
    try:
        stamps = [handle.last_heartbeat]
        sup.command(handle, "reset", seed=0, env_metadata=META)
        stamps.append(handle.last_heartbeat)
        sup.command(handle, "select_action", observation=OBS, info={})
        stamps.append(handle.last_heartbeat)
        assert stamps == sorted(stamps)
    finally:
        sup.stop_all()


# -- checkpoints and recovery ---------------------------------------------------------


def test_checkpoint_digest_verifies(tmp_path):
    sup = Supervisor(checkpoints_dir=tmp_path)
    handle = spawn_baseline(sup)
    try:
        sup.command(handle, "reset", seed=42, env_metadata=META)
        sup.command(handle, "select_action", observation=OBS, info={})
        ref = sup.checkpoint(handle)
        assert ref.verify()
        assert ref.path is not None and ref.path.exists()
        assert ref.path.with_suffix(".ckpt.sha256").read_text().strip() == ref.digest
    finally:
        sup.stop_all()


def test_recover_from_checkpoint_resumes_decision_stream(tmp_path):
    """Kill mid-episode; recovery resumes exactly after the checkpoint."""
    sup = Supervisor(checkpoints_dir=tmp_path)
    handle = spawn_baseline(sup, max_restarts=2)
    oracle = random.Random(42)
    expected = [oracle.randrange(5) for _ in range(8)]
    try:
        sup.command(handle, "reset", seed=42, env_metadata=META)
        got = [
            sup.command(handle, "select_action", observation=OBS, info={}).payload["action"]
            for _ in range(5)
        ]
        assert got == expected[:5]
        sup.checkpoint(handle)  # decision_count = 5

        os.killpg(handle.process_group_id, signal.SIGKILL)
        with pytest.raises((WorkerDied, WorkerTimeout)):
            sup.command(handle, "select_action", observation=OBS, info={}, timeout=5.0)
        assert handle.state == STATE_DEAD

        sup.recover(handle)
        assert handle.state == STATE_READY
        assert handle.restarts_used == 1
        resumed = [
            sup.command(handle, "select_action", observation=OBS, info={}).payload["action"]
            for _ in range(3)
        ]
        assert resumed == expected[5:8]
    finally:
        sup.stop_all()


def test_recover_with_corrupt_checkpoint_falls_back_to_older(tmp_path):
    sup = Supervisor(checkpoints_dir=tmp_path)
    handle = spawn_baseline(sup)
    oracle = random.Random(9)
    expected = [oracle.randrange(5) for _ in range(6)]
    try:
        sup.command(handle, "reset", seed=9, env_metadata=META)
        sup.command(handle, "select_action", observation=OBS, info={})
        sup.checkpoint(handle)  # good, decision_count=1
        sup.command(handle, "select_action", observation=OBS, info={})
        bad = sup.checkpoint(handle)  # decision_count=2; corrupt it in memory
        sup._checkpoints[handle.worker_id][-1] = type(bad)(
            **{**bad.__dict__, "state_blob": b'{"seed":9,"decision_count":99}\n'}
        )
        os.killpg(handle.process_group_id, signal.SIGKILL)
        with pytest.raises((WorkerDied, WorkerTimeout)):
            sup.command(handle, "select_action", observation=OBS, info={}, timeout=5.0)
        sup.recover(handle)
        # resumed from the older (digest-valid) checkpoint: decision 2 onwards
        nxt = sup.command(handle, "select_action", observation=OBS, info={}).payload["action"]
        assert nxt == expected[1]
    finally:
        sup.stop_all()


def test_recover_without_checkpoints_uses_replayer():
    sup = Supervisor()
    handle = spawn_baseline(sup)
    oracle = random.Random(21)
    expected = [oracle.randrange(5) for _ in range(4)]
    try:
        sup.command(handle, "reset", seed=21, env_metadata=META)
        for _ in range(3):
            sup.command(handle, "select_action", observation=OBS, info={})
        os.killpg(handle.process_group_id, signal.SIGKILL)
        with pytest.raises((WorkerDied, WorkerTimeout)):
            sup.command(handle, "select_action", observation=OBS, info={}, timeout=5.0)

        replayed = []

        def replayer(h):
            for _ in range(3):
                replayed.append(
                    sup.command(h, "select_action", observation=OBS, info={}).payload["action"]
                )

        # hide the restore capability to force the replay path
        object.__setattr__(handle.session, "supported_commands", frozenset({"reset", "stop", "select_action"}))
        sup.recover(handle, replayer=replayer)
        assert replayed == expected[:3]
        nxt = sup.command(handle, "select_action", observation=OBS, info={}).payload["action"]
        assert nxt == expected[3]
    finally:
        sup.stop_all()


def test_recover_budget_zero_is_permanent_failure():
    sup = Supervisor()
    handle = spawn_baseline(sup, max_restarts=0)
    os.killpg(handle.process_group_id, signal.SIGKILL)
    with pytest.raises((WorkerDied, WorkerTimeout)):
        sup.command(handle, "reset", seed=1, timeout=5.0)
    with pytest.raises(RecoveryError):
        sup.recover(handle)
    sup.stop_all()


# -- shutdown ----------------------------------------------------------------------------


def test_stop_cooperative_worker_exits_via_protocol():
    sup = Supervisor()
    handle = spawn_baseline(sup)
    report = sup.stop_worker(handle)
    assert report.path == "protocol"
    assert report.returncode == 0
    assert not sup.group_alive(handle)


def test_stop_stubborn_worker_is_forced_and_group_reaped():
    import psutil

    sup = Supervisor()
    handle = sup.spawn_worker(
        WorkerSpec(command=helper_cmd("stubborn_worker"), worker_kind="baseline")
    )
    pgid = handle.process_group_id
    report = sup.stop_worker(handle, grace=0.5)
    assert report.path == "forced"
    survivors = [
        p.pid
        for p in psutil.process_iter(["pid"])
        if _pgid_of(p.pid) == pgid
    ]
    assert survivors == []


def _pgid_of(pid: int) -> int | None:
    try:
        return os.getpgid(pid)
    except (ProcessLookupError, PermissionError):
        return None


def test_stop_twice_returns_cached_report():
    sup = Supervisor()
    handle = spawn_baseline(sup)
    first = sup.stop_worker(handle)
    second = sup.stop_worker(handle)
    assert first is second


def test_killing_one_group_leaves_others_untouched():
    sup = Supervisor()
    a = spawn_baseline(sup)
    b = spawn_baseline(sup)
    try:
        os.killpg(a.process_group_id, signal.SIGKILL)
        a.proc.wait(timeout=5)
        sup.command(b, "reset", seed=3, env_metadata=META)
        reply = sup.command(b, "select_action", observation=OBS, info={})
        assert reply.name == "step_result"
        assert b.state == STATE_READY
    finally:
        sup.stop_all()
