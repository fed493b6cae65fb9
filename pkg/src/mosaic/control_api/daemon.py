"""Daemon entry point: uvicorn on loopback by default."""

from __future__ import annotations

from pathlib import Path

from .app import DEFAULT_PORT, create_app


def serve(home: str | Path = "runs", bind: str = f"127.0.0.1:{DEFAULT_PORT}", ui_dir: str | None = None) -> None:
    import uvicorn

    host, _, port = bind.partition(":")
    if ui_dir is None:
        candidate = Path(__file__).resolve().parents[3] / "frontend" / "dist"
        ui_dir = str(candidate) if candidate.exists() else None
    app = create_app(home, ui_dir=ui_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or DEFAULT_PORT), log_level="warning")
