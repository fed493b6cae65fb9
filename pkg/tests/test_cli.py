from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from .conftest import FIXTURES

CONFIGS = FIXTURES / "configs"


def mosaic(*args: str, env: dict | None = None) -> subprocess.CompletedProcess:
    import os

    full_env = dict(os.environ)
    full_env.update(env or {})
    return subprocess.run(
        [sys.executable, "-m", "mosaic.cli", *args],
        capture_output=True,
        text=True,
        env=full_env,
        timeout=240,
    )


def stdout_doc(proc: subprocess.CompletedProcess) -> dict:
    return json.loads(proc.stdout.strip().splitlines()[-1])


def test_validate_good_config():
    proc = mosaic("validate", "--config", str(CONFIGS / "teamtag_4random.json"))
    assert proc.returncode == 0
    doc = stdout_doc(proc)
    assert doc["valid"] is True and doc["task"] == "mosaic/TeamTag-2vs2-v1"


def test_validate_duplicate_slot_is_nonzero(tmp_path):
    doc = json.loads((CONFIGS / "teamtag_4random.json").read_text())
    doc["player_workers"]["ghost_slot"] = {"worker_type": "baseline", "settings": {"kind": "noop"}}
    doc["player_workers"]["blue_0"]["worker_type"] = "nonsense"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    proc = mosaic("validate", "--config", str(path))
    assert proc.returncode == 1
    assert stdout_doc(proc)["valid"] is False


def test_validate_empty_file(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    proc = mosaic("validate", "--config", str(path))
    assert proc.returncode == 1


def test_validate_missing_file():
    proc = mosaic("validate", "--config", "/no/such/file.json")
    assert proc.returncode == 2


def test_run_local_writes_run_dir(tmp_path):
    proc = mosaic(
        "run", "--config", str(CONFIGS / "corridor_random.json"),
        "--seed", "3", "--episodes", "2", "--local",
        env={"MOSAIC_HOME": str(tmp_path)},
    )
    assert proc.returncode == 0, proc.stderr
    doc = stdout_doc(proc)
    run_dir = Path(doc["run_dir"])
    assert (run_dir / "steps.jsonl").exists()
    assert (run_dir / "episodes.jsonl").exists()
    assert doc["episodes_completed"] == 2


def test_run_same_invocation_twice_identical_bytes(tmp_path):
    args = ("run", "--config", str(CONFIGS / "corridor_random.json"),
            "--seed", "9", "--episodes", "2", "--local")
    env = {"MOSAIC_HOME": str(tmp_path)}
    a = stdout_doc(mosaic(*args, env=env))
    b = stdout_doc(mosaic(*args, env=env))
    bytes_a = (Path(a["run_dir"]) / "steps.jsonl").read_bytes()
    bytes_b = (Path(b["run_dir"]) / "steps.jsonl").read_bytes()
    assert a["run_dir"] != b["run_dir"]
    assert bytes_a == bytes_b


def test_run_negative_seed_is_usage_error(tmp_path):
    proc = mosaic(
        "run", "--config", str(CONFIGS / "corridor_random.json"),
        "--seed", "-1", "--local", env={"MOSAIC_HOME": str(tmp_path)},
    )
    assert proc.returncode == 2


def test_run_daemon_unreachable(tmp_path):
    proc = mosaic(
        "run", "--config", str(CONFIGS / "corridor_random.json"),
        "--seed", "1", "--episodes", "1",
        "--daemon", "http://127.0.0.1:59999",
        env={"MOSAIC_HOME": str(tmp_path)},
    )
    assert proc.returncode == 3
    assert "unreachable" in stdout_doc(proc)["errors"][0]


def test_matrix_families(tmp_path):
    adv = mosaic("matrix", "--family", "adversarial", "--out", str(tmp_path / "adv"))
    assert adv.returncode == 0
    assert len(stdout_doc(adv)["written"]) == 7
    coop = mosaic("matrix", "--family", "cooperative", "--out", str(tmp_path / "coop"))
    assert len(stdout_doc(coop)["written"]) == 8
    both = mosaic("matrix", "--family", "both", "--out", str(tmp_path / "both"))
    files = stdout_doc(both)["written"]
    assert len(files) == 15
    names = sorted(Path(f).name for f in files)
    assert names == sorted(f"A{i}.config" for i in range(1, 8)) + sorted(f"C{i}.config" for i in range(1, 9))


def test_replay_prints_frames_and_is_deterministic(tmp_path):
    run = stdout_doc(
        mosaic("run", "--config", str(CONFIGS / "corridor_forward.json"),
               "--seed", "4", "--episodes", "2", "--local",
               env={"MOSAIC_HOME": str(tmp_path)})
    )
    a = mosaic("replay", "--run", run["run_dir"], "--mode", "ascii")
    b = mosaic("replay", "--run", run["run_dir"], "--mode", "ascii")
    assert a.returncode == 0
    assert a.stdout == b.stdout
    # forward policy: 4 frames per episode, 2 episodes
    assert a.stdout.count("episode ") == 8


def test_replay_unknown_dir():
    proc = mosaic("replay", "--run", "/no/such/run")
    assert proc.returncode == 2


def test_conformance_builtin_random_passes():
    proc = mosaic("conformance", "--worker",
                  f"{sys.executable} -m mosaic.workers.baseline --kind random")
    assert proc.returncode == 0, proc.stderr
    doc = stdout_doc(proc)
    assert doc["passed"] is True
    assert {c["name"] for c in doc["checks"]} >= {
        "handshake", "reset-ready", "select-action", "seed-determinism",
        "episode-accounting", "malformed-line", "train-rejected",
        "stop-clean-exit", "heartbeat-timing", "restore-roundtrip",
    }


def test_conformance_failure_names_the_check(tmp_path):
    helper = Path(__file__).parent / "helpers" / "echo_worker.py"
    proc = mosaic("conformance", "--worker", f"{sys.executable} {helper}")
    assert proc.returncode == 1
    doc = stdout_doc(proc)
    failed = {c["name"] for c in doc["checks"] if not c["passed"]}
    # echo worker ignores episode accounting (no episode_end) among others
    assert "episode-accounting" in failed
