"""Operator-facing command line.

stdout carries exactly one machine-parseable result document per invocation
(replay, which streams frames, is the documented exception); human-readable
notes go to stderr. Exit codes: 0 success, 1 failed check or run, 2 usage
or validation error, 3 daemon unreachable.
"""

from __future__ import annotations

import argparse
import os
import shlex
import sys
from pathlib import Path
from typing import Any

from .config import ConfigError, load_run_config
from .protocol import canonical_dumps, canonical_loads

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_NO_DAEMON = 3


def _emit(doc: dict[str, Any]) -> None:
    sys.stdout.write(canonical_dumps(doc) + "\n")


def _note(text: str) -> None:
    sys.stderr.write(text + "\n")


def _runs_root(args: argparse.Namespace) -> Path:
    if getattr(args, "home", None):
        return Path(args.home)
    return Path(os.environ.get("MOSAIC_HOME", "runs"))


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


# -- commands ----------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    path = Path(args.config)
    if not path.exists():
        _emit({"valid": False, "errors": [f"no such file: {path}"]})
        return EXIT_USAGE
    try:
        config = load_run_config(path)
    except ConfigError as exc:
        _emit({"valid": False, "errors": exc.problems})
        return EXIT_FAILED
    _emit({"valid": True, "operator_id": config.operator_id, "task": config.task,
           "slots": list(config.slots)})
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    path = Path(args.config)
    if not path.exists():
        _emit({"status": "error", "errors": [f"no such file: {path}"]})
        return EXIT_USAGE
    try:
        config = load_run_config(path)
    except ConfigError as exc:
        _emit({"status": "error", "errors": exc.problems})
        return EXIT_FAILED

    if args.local:
        from .evaluation.script_runner import run_script

        result = run_script(
            config,
            seed=args.seed,
            episodes=args.episodes,
            runs_root=_runs_root(args),
            request_timeout=args.request_timeout,
        )
        doc = result.to_doc()
        doc["run_dir"] = str(result.run_dir)
        _emit(doc)
        return EXIT_OK if result.status == "finished" else EXIT_FAILED

    import httpx

    base = args.daemon.rstrip("/")
    try:
        with httpx.Client(base_url=base, timeout=30.0) as client:
            created = client.post(
                "/v1/runs",
                json={"config": canonical_loads(path.read_text("utf-8")),
                      "seed": args.seed, "episodes": args.episodes},
            )
            if created.status_code != 201:
                _emit({"status": "error", "errors": created.json().get("detail")})
                return EXIT_FAILED
            run_id = created.json()["run_id"]
            client.post(f"/v1/runs/{run_id}/start").raise_for_status()
            _note(f"run {run_id} started; waiting")
            import time as _time

            while True:
                status = client.get(f"/v1/runs/{run_id}").json()
                if status["status"] in ("finished", "failed"):
                    doc = status.get("result") or {"run_id": run_id, "status": status["status"]}
                    _emit(doc)
                    return EXIT_OK if status["status"] == "finished" else EXIT_FAILED
                _time.sleep(0.25)
    except httpx.TransportError as exc:
        _emit({"status": "error", "errors": [f"daemon unreachable at {base}: {exc}; use --local for embedded mode"]})
        return EXIT_NO_DAEMON


def cmd_matrix(args: argparse.Namespace) -> int:
    from .evaluation import MatrixSpec, InfeasibleMatrix, write_matrix

    families = ["adversarial", "cooperative"] if args.family == "both" else [args.family]
    written: list[str] = []
    try:
        for family in families:
            paths = write_matrix(MatrixSpec(family=family, task=args.task), args.out)
            written.extend(str(p) for p in paths)
    except InfeasibleMatrix as exc:
        _emit({"status": "error", "errors": [str(exc)], "blocked": exc.blocked})
        return EXIT_FAILED
    _emit({"status": "ok", "written": written})
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    from .envcore import derive_seed, get_env, render_ascii
    from .telemetry import RunStore

    run_dir = Path(args.run)
    if not run_dir.exists() or not (run_dir / "config.json").exists():
        _emit({"status": "error", "errors": [f"not a run directory: {run_dir}"]})
        return EXIT_USAGE
    config = load_run_config(run_dir / "config.json")
    store = RunStore(run_dir, run_dir.name)
    manifest = store.read_manifest() or {}
    seed = int(manifest.get("seed", 0))
    env = get_env(config.task)

    episodes: dict[int, dict[int, dict[str, int]]] = {}
    for record in store.read_steps():
        episodes.setdefault(record.episode_index, {}).setdefault(record.step_index, {})[
            record.slot
        ] = record.action
    frames = 0
    for episode in sorted(episodes):
        state = env.initial_state(derive_seed(seed, f"episode/{episode}"), episode)
        for step in sorted(episodes[episode]):
            state, _ = env.step_parallel(state, episodes[episode][step])
            sys.stdout.write(
                f"episode {episode} step {step}\n{render_ascii(state)}\n\n"
            )
            frames += 1
    _note(f"replayed {frames} frames from {run_dir}")
    return EXIT_OK


def cmd_conformance(args: argparse.Namespace) -> int:
    from .conformance import run_conformance

    worker_cmd = shlex.split(args.worker)
    if not worker_cmd:
        _emit({"status": "error", "errors": ["empty --worker command"]})
        return EXIT_USAGE
    report = run_conformance(worker_cmd, heartbeat_secs=args.heartbeat_secs)
    for c in report.checks:
        _note(f"{'PASS' if c.passed else 'FAIL'} {c.name}" + (f" ({c.detail})" if c.detail else ""))
    _emit(report.to_doc())
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_daemon(args: argparse.Namespace) -> int:
    from .control_api.daemon import serve

    _note(f"mosaic daemon on {args.bind} (home={_runs_root(args)})")
    serve(home=_runs_root(args), bind=args.bind, ui_dir=args.ui)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mosaic", description="cross-paradigm evaluation platform")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a run config document")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="execute a scripted evaluation run")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=_nonnegative_int, default=0)
    p.add_argument("--episodes", type=_positive_int, default=1)
    p.add_argument("--local", action="store_true", help="embedded in-process mode (no daemon)")
    p.add_argument("--daemon", default=f"http://127.0.0.1:7461")
    p.add_argument("--home", help="runs root (default $MOSAIC_HOME or ./runs)")
    p.add_argument("--request-timeout", type=float, default=30.0)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("matrix", help="emit the experiment matrix config files")
    p.add_argument("--family", choices=("adversarial", "cooperative", "both"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", default="mosaic/TeamTag-2vs2-v1")
    p.set_defaults(fn=cmd_matrix)

    p = sub.add_parser("replay", help="frame-by-frame playback of a finalized run")
    p.add_argument("--run", required=True)
    p.add_argument("--mode", choices=("ascii",), default="ascii")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("conformance", help="score a worker executable against the golden transcript suite")
    p.add_argument("--worker", required=True, help="worker command line (quoted)")
    p.add_argument("--heartbeat-secs", type=float, default=0.2)
    p.set_defaults(fn=cmd_conformance)

    p = sub.add_parser("daemon", help="serve the control api")
    p.add_argument("--bind", default="127.0.0.1:7461")
    p.add_argument("--home", help="runs root (default $MOSAIC_HOME or ./runs)")
    p.add_argument("--ui", help="static UI directory to mount at /ui")
    p.set_defaults(fn=cmd_daemon)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
