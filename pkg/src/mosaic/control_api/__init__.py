from .app import DEFAULT_PORT, Daemon, create_app
from .events import Event, EventHub, EventLog

__all__ = ["DEFAULT_PORT", "Daemon", "create_app", "Event", "EventHub", "EventLog"]
