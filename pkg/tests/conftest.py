from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "fixtures"
HELPERS = Path(__file__).resolve().parent / "helpers"

# Scaled-down supervision windows so liveness tests stay fast.
FAST_WORKER = {
    "heartbeat_interval": 0.5,
    "liveness_window": 2.5,
}


def worker_cmd(module: str, *args: str) -> tuple[str, ...]:
    return (sys.executable, "-m", f"mosaic.workers.{module}", *args)


def helper_cmd(name: str) -> tuple[str, ...]:
    return (sys.executable, str(HELPERS / f"{name}.py"))


@pytest.fixture
def runs_root(tmp_path: Path) -> Path:
    root = tmp_path / "runs"
    root.mkdir()
    return root


def load_fixture_config(name: str) -> dict:
    return json.loads((FIXTURES / "configs" / f"{name}.json").read_text("utf-8"))


@pytest.fixture
def teamtag_random_doc() -> dict:
    return load_fixture_config("teamtag_4random")


@pytest.fixture
def corridor_random_doc() -> dict:
    return load_fixture_config("corridor_random")
