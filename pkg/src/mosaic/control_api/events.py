"""Per-subject ordered event logs behind the server-push channel.

Sequence numbers start at 1 and never gap; a subscriber that reconnects
with the last sequence it saw resumes exactly after it. Event payloads are
canonical JSON lines, the same format as telemetry.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Iterator

from ..protocol import canonical_dumps


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    payload: dict[str, Any]

    def data(self) -> str:
        return canonical_dumps({"kind": self.kind, "seq": self.seq, **self.payload})


class EventLog:
    """Append-only in-memory event history with blocking tails."""

    def __init__(self) -> None:
        self._events: list[Event] = []
        self._cond = threading.Condition()
        self.closed = False

    def append(self, kind: str, payload: dict[str, Any]) -> Event:
        with self._cond:
            event = Event(len(self._events) + 1, kind, dict(payload))
            self._events.append(event)
            self._cond.notify_all()
            return event

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()

    def snapshot(self, after: int = 0) -> list[Event]:
        with self._cond:
            return self._events[after:]

    def tail(self, after: int = 0, poll: float = 1.0) -> Iterator[Event | None]:
        """Yield events after ``after``; yields None on poll timeouts so SSE
        writers can emit keep-alives and notice dropped clients."""
        cursor = after
        while True:
            with self._cond:
                if cursor < len(self._events):
                    batch = self._events[cursor:]
                else:
                    if self.closed:
                        return
                    self._cond.wait(timeout=poll)
                    batch = self._events[cursor:]
            if not batch:
                yield None
                continue
            for event in batch:
                cursor = event.seq
                yield event


class EventHub:
    """Event logs by subject id (run or session)."""

    def __init__(self) -> None:
        self._logs: dict[str, EventLog] = {}
        self._lock = threading.Lock()

    def log(self, subject: str) -> EventLog:
        with self._lock:
            if subject not in self._logs:
                self._logs[subject] = EventLog()
            return self._logs[subject]

    def emitter(self, subject: str):
        log = self.log(subject)

        def emit(kind: str, payload: dict[str, Any]) -> None:
            log.append(kind, payload)

        return emit

    def known(self, subject: str) -> bool:
        with self._lock:
            return subject in self._logs
