"""HTTP control surface for the daemon.

Endpoints, document shapes, and the SSE event channel are documented in
docs/api.md. All state mutation funnels through per-session locks and the
run registry lock; handlers stay thin.
"""

from __future__ import annotations

import base64
import threading
import uuid
from pathlib import Path
from typing import Any

from fastapi import Body, FastAPI, HTTPException, Query, Request
from fastapi.responses import PlainTextResponse, Response, StreamingResponse
from fastapi.staticfiles import StaticFiles

from ..config import ConfigError, parse_manual_session_config, parse_run_config
from ..envcore import get_env, render_rgb, task_ids
from ..evaluation import ManualSession, IllegalTransition, SessionError
from ..evaluation.script_runner import RunHooks, ScriptRunner
from ..operators import Paradigm
from ..telemetry import RunStore, run_aggregates
from .events import EventHub

DEFAULT_PORT = 7461

KEYMAPS = {
    "mosaic/TeamTag-2vs2-v1": {
        "ArrowUp": "up",
        "ArrowDown": "down",
        "ArrowLeft": "left",
        "ArrowRight": "right",
        " ": "stay",
    },
    "mosaic/Corridor-v1": {
        "ArrowRight": "forward",
        "ArrowLeft": "back",
        " ": "stay",
    },
}


class RunEntry:
    def __init__(self, runner: ScriptRunner):
        self.runner = runner
        self.status = "created"
        self.thread: threading.Thread | None = None
        self.result: dict[str, Any] | None = None

    @property
    def registry_id(self) -> str:
        return self.runner.run_dir.name


class Daemon:
    """Owns the run registry, live sessions, and the event hub."""

    def __init__(self, home: str | Path = "runs"):
        self.home = Path(home)
        self.home.mkdir(parents=True, exist_ok=True)
        self.runs: dict[str, RunEntry] = {}
        self.sessions: dict[str, ManualSession] = {}
        self.events = EventHub()
        self._lock = threading.Lock()

    # -- runs ------------------------------------------------------------

    def create_run(self, doc: dict[str, Any], seed: int, episodes: int) -> RunEntry:
        config = parse_run_config(doc)
        entry_holder: list[RunEntry] = []

        def on_event(kind: str, payload: dict[str, Any]) -> None:
            if entry_holder:
                self.events.emitter(entry_holder[0].registry_id)(kind, payload)

        runner = ScriptRunner(
            config, seed, episodes, runs_root=self.home, hooks=RunHooks(on_event=on_event)
        )
        entry = RunEntry(runner)
        entry_holder.append(entry)
        with self._lock:
            self.runs[entry.registry_id] = entry
        self.events.log(entry.registry_id)
        return entry

    def start_run(self, registry_id: str) -> RunEntry:
        entry = self.get_run(registry_id)
        with self._lock:
            if entry.status != "created":
                raise IllegalTransition(f"run is {entry.status}")
            entry.status = "running"

        def worker() -> None:
            result = entry.runner.run()
            entry.result = result.to_doc()
            entry.status = result.status
            self.events.log(entry.registry_id).close()

        entry.thread = threading.Thread(target=worker, daemon=True)
        entry.thread.start()
        return entry

    def get_run(self, registry_id: str) -> RunEntry:
        entry = self.runs.get(registry_id)
        if entry is None:
            raise KeyError(registry_id)
        return entry

    # -- sessions ------------------------------------------------------------

    def create_session(self, doc: dict[str, Any], seed: int) -> ManualSession:
        config = parse_manual_session_config(doc)
        session_id = f"s-{uuid.uuid4().hex[:12]}"
        log = self.events.log(session_id)

        def on_event(kind: str, payload: dict[str, Any]) -> None:
            log.append(kind, payload)
            if kind == "status-changed" and payload.get("status") in ("finished", "failed"):
                log.close()

        session = ManualSession(
            session_id,
            config,
            seed,
            session_dir=self.home / "sessions" / session_id,
            on_event=on_event,
        )
        with self._lock:
            self.sessions[session_id] = session
        return session

    def get_session(self, session_id: str) -> ManualSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise KeyError(session_id)
        return session


def _error(status: int, detail: Any) -> HTTPException:
    return HTTPException(status_code=status, detail=detail)


def create_app(home: str | Path = "runs", ui_dir: str | Path | None = None) -> FastAPI:
    daemon = Daemon(home)
    app = FastAPI(title="mosaic control api", version="1.0.0")
    app.state.daemon = daemon

    # -- meta ---------------------------------------------------------------

    @app.get("/v1/meta/tasks")
    def meta_tasks() -> dict[str, Any]:
        out = []
        for task in task_ids():
            env = get_env(task)
            out.append(env.metadata())
        return {"tasks": out}

    @app.get("/v1/meta/keymap")
    def meta_keymap(task: str) -> dict[str, Any]:
        if task not in KEYMAPS:
            raise _error(404, f"no keymap for task {task!r}")
        env = get_env(task)
        labels = list(env.action_space.labels or ())
        return {
            "task": task,
            "keys": {
                key: {"label": label, "action": labels.index(label)}
                for key, label in KEYMAPS[task].items()
            },
        }

    # -- runs ------------------------------------------------------------------

    @app.post("/v1/runs", status_code=201)
    def create_run(body: dict[str, Any] = Body(...)) -> dict[str, Any]:
        config = body.get("config")
        seed = body.get("seed", 0)
        episodes = body.get("episodes", 1)
        if not isinstance(config, dict):
            raise _error(400, ["config: must be an object"])
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise _error(400, ["seed: must be a non-negative integer"])
        if not isinstance(episodes, int) or isinstance(episodes, bool) or episodes < 1:
            raise _error(400, ["episodes: must be a positive integer"])
        try:
            entry = daemon.create_run(config, seed, episodes)
        except ConfigError as exc:
            raise _error(400, exc.problems)
        return {"run_id": entry.registry_id, "status": entry.status}

    @app.get("/v1/runs")
    def list_runs() -> dict[str, Any]:
        return {
            "runs": [
                {"run_id": rid, "status": entry.status}
                for rid, entry in sorted(daemon.runs.items())
            ]
        }

    def _run_or_404(run_id: str) -> RunEntry:
        try:
            return daemon.get_run(run_id)
        except KeyError:
            raise _error(404, f"unknown run {run_id!r}")

    @app.post("/v1/runs/{run_id}/start")
    def start_run(run_id: str) -> dict[str, Any]:
        entry = _run_or_404(run_id)
        try:
            daemon.start_run(run_id)
        except IllegalTransition as exc:
            raise _error(409, str(exc))
        return {"run_id": run_id, "status": entry.status}

    @app.get("/v1/runs/{run_id}")
    def get_run(run_id: str) -> dict[str, Any]:
        entry = _run_or_404(run_id)
        store = RunStore(entry.runner.run_dir, entry.runner.run_id)
        return {
            "run_id": run_id,
            "status": entry.status,
            "manifest": store.read_manifest(),
            "result": entry.result or store.read_result(),
        }

    @app.get("/v1/runs/{run_id}/aggregates")
    def get_aggregates(run_id: str) -> dict[str, Any]:
        entry = _run_or_404(run_id)
        store = RunStore(entry.runner.run_dir, entry.runner.run_id)
        return run_aggregates(store)

    @app.get("/v1/runs/{run_id}/export")
    def export_run(run_id: str, stream: str = Query("steps")) -> Response:
        entry = _run_or_404(run_id)
        if stream not in ("steps", "episodes"):
            raise _error(400, ["stream: must be steps or episodes"])
        path = entry.runner.run_dir / f"{stream}.jsonl"
        data = path.read_bytes() if path.exists() else b""
        return Response(content=data, media_type="application/x-ndjson")

    # -- sessions ----------------------------------------------------------------

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: dict[str, Any] = Body(...)) -> dict[str, Any]:
        config = body.get("config")
        seed = body.get("seed", 0)
        if not isinstance(config, dict):
            raise _error(400, ["config: must be an object"])
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise _error(400, ["seed: must be a non-negative integer"])
        try:
            session = daemon.create_session(config, seed)
        except ConfigError as exc:
            raise _error(400, exc.problems)
        except SessionError as exc:
            raise _error(400, [str(exc)])
        return {"session_id": session.session_id, "status": session.status}

    def _session_or_404(session_id: str) -> ManualSession:
        try:
            return daemon.get_session(session_id)
        except KeyError:
            raise _error(404, f"unknown session {session_id!r}")

    @app.get("/v1/sessions")
    def list_sessions() -> dict[str, Any]:
        return {
            "sessions": [
                {"session_id": sid, "status": s.status, "barrier": s.barrier_step}
                for sid, s in sorted(daemon.sessions.items())
            ]
        }

    @app.get("/v1/sessions/{session_id}")
    def describe_session(session_id: str) -> dict[str, Any]:
        return _session_or_404(session_id).describe()

    @app.post("/v1/sessions/{session_id}/control")
    def session_control(session_id: str, body: dict[str, Any] = Body(...)) -> dict[str, Any]:
        session = _session_or_404(session_id)
        verb = body.get("verb")
        barrier = body.get("barrier")
        if verb not in ("start", "step", "pause", "resume", "stop"):
            raise _error(400, ["verb: must be one of start, step, pause, resume, stop"])
        try:
            return session.control(verb, barrier=barrier)
        except IllegalTransition as exc:
            raise _error(409, str(exc))
        except SessionError as exc:
            raise _error(500, str(exc))

    @app.post("/v1/sessions/{session_id}/slots/{slot}/action")
    def submit_human_action(session_id: str, slot: str, body: dict[str, Any] = Body(...)) -> dict[str, Any]:
        session = _session_or_404(session_id)
        action = body.get("action")
        replica = _replica_for_slot(session, slot)
        bare = slot.split(".", 1)[1] if "." in slot else slot
        slot_state = replica.operator.slots.get(bare)
        if slot_state is None:
            raise _error(400, [f"slot: unknown slot {slot!r}"])
        if slot_state.paradigm is not Paradigm.HUMAN:
            raise _error(400, [f"slot: {slot!r} is bound to {slot_state.paradigm.value}, not human"])
        if not isinstance(action, int) or isinstance(action, bool) or not replica.operator.env.action_space.contains(action):
            raise _error(400, [f"action: out of range for {replica.operator.env.action_space.n} actions"])
        replaced = session.mailbox.submit(slot, action, session.barrier_step)
        return {"accepted": True, "replaced": replaced, "barrier": session.barrier_step}

    def _replica_for_slot(session: ManualSession, slot: str):
        if "." in slot:
            prefix = slot.split(".", 1)[0]
            if prefix.startswith("r") and prefix[1:].isdigit():
                index = int(prefix[1:])
                if 0 <= index < len(session.replicas):
                    return session.replicas[index]
        raise _error(400, [f"slot: expected r<replica>.<slot>, got {slot!r}"])

    @app.get("/v1/sessions/{session_id}/frames")
    def get_frames(session_id: str, barrier: int | None = None, rgb: bool = False) -> dict[str, Any]:
        session = _session_or_404(session_id)
        wanted = session.barrier_step if barrier is None else barrier
        frame_set = session.frames.get(wanted)
        if frame_set is None:
            raise _error(404, f"no frames for barrier {wanted}")
        replicas = [dict(entry) for entry in frame_set.replicas]
        if rgb and wanted == session.barrier_step:
            for entry in replicas:
                img = render_rgb(session.replicas[entry["replica"]].state)
                entry["rgb"] = {
                    "shape": list(img.shape),
                    "b64": base64.b64encode(img.tobytes()).decode("ascii"),
                }
        return {"barrier": wanted, "replicas": replicas}

    # -- events --------------------------------------------------------------------

    def sse_stream(subject: str, request: Request, last_id: int):
        log = daemon.events.log(subject)

        def generate():
            for event in log.tail(after=last_id, poll=1.0):
                if event is None:
                    yield ": keep-alive\n\n"
                    continue
                yield f"id: {event.seq}\nevent: {event.kind}\ndata: {event.data()}\n\n"

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/v1/runs/{run_id}/events")
    def run_events(run_id: str, request: Request, last_id: int = 0) -> StreamingResponse:
        _run_or_404(run_id)
        header = request.headers.get("last-event-id")
        if header and header.isdigit():
            last_id = int(header)
        return sse_stream(run_id, request, last_id)

    @app.get("/v1/sessions/{session_id}/events")
    def session_events(session_id: str, request: Request, last_id: int = 0) -> StreamingResponse:
        _session_or_404(session_id)
        header = request.headers.get("last-event-id")
        if header and header.isdigit():
            last_id = int(header)
        return sse_stream(session_id, request, last_id)

    @app.get("/healthz", response_class=PlainTextResponse)
    def healthz() -> str:
        return "ok"

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
