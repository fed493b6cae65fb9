"""Crash-safe append-only telemetry store for one run.

Layout under ``runs/<run_id>/``:

- ``steps.jsonl`` / ``episodes.jsonl``: canonical one-record-per-line logs
- ``steps.jsonl.idx``: fixed-width (episode u64, step u64, offset u64) rows,
  one per first record of each (episode, step); bisected for lookups
- ``episodes.jsonl.idx``: (episode u64, offset u64) rows
- ``telemetry.deadletter``: quarantined lines with reasons, never dropped
- ``manifest`` / ``result``: run metadata documents (timestamps live here)

Opening a log self-heals a torn tail: a final line without ``\\n`` is
truncated away and index rows pointing past the end are dropped.
"""

from __future__ import annotations

import os
import struct
from bisect import bisect_left
from pathlib import Path
from typing import Any, Iterator

from ..protocol.canonical import canonical_line, canonical_loads
from ..protocol.schemas import validation_errors
from .records import EpisodeRecord, StepRecord

_STEP_IDX = struct.Struct(">QQQ")
_EP_IDX = struct.Struct(">QQ")


class TelemetryError(Exception):
    def __init__(self, reason: str, detail: str):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


def _heal_log(path: Path) -> int:
    """Drop a partial tail line; returns the healthy size."""
    if not path.exists():
        return 0
    size = path.stat().st_size
    if size == 0:
        return 0
    with open(path, "rb+") as f:
        f.seek(-1, os.SEEK_END)
        if f.read(1) == b"\n":
            return size
        # Walk back to the previous newline in bounded chunks.
        pos = size
        chunk = 65536
        while pos > 0:
            start = max(0, pos - chunk)
            f.seek(start)
            data = f.read(pos - start)
            nl = data.rfind(b"\n")
            if nl >= 0:
                healthy = start + nl + 1
                f.truncate(healthy)
                return healthy
            pos = start
        f.truncate(0)
        return 0


class _Log:
    """One append-only jsonl file with its fixed-width index sidecar."""

    def __init__(self, path: Path, idx_struct: struct.Struct):
        self.path = path
        self.idx_path = path.with_name(path.name + ".idx")
        self.idx_struct = idx_struct
        self.size = _heal_log(path)
        self._index = self._load_index()
        self._fh = None
        self._idx_fh = None

    def _load_index(self) -> list[tuple[int, ...]]:
        if not self.idx_path.exists():
            return self._rebuild_index()
        raw = self.idx_path.read_bytes()
        rec = self.idx_struct.size
        if len(raw) % rec != 0:
            return self._rebuild_index()
        rows = [self.idx_struct.unpack(raw[i : i + rec]) for i in range(0, len(raw), rec)]
        keep = [r for r in rows if r[-1] < self.size]
        if keep != rows or not self._monotonic(keep):
            return self._rebuild_index()
        return keep

    @staticmethod
    def _monotonic(rows: list[tuple[int, ...]]) -> bool:
        return all(rows[i][:-1] < rows[i + 1][:-1] for i in range(len(rows) - 1))

    def _rebuild_index(self) -> list[tuple[int, ...]]:
        rows: list[tuple[int, ...]] = []
        if self.path.exists():
            offset = 0
            with open(self.path, "rb") as f:
                for line in f:
                    if offset >= self.size:
                        break
                    doc = canonical_loads(line)
                    key = self.key_of(doc)
                    if not rows or rows[-1][:-1] != key:
                        rows.append((*key, offset))
                    offset += len(line)
        self.idx_path.write_bytes(b"".join(self.idx_struct.pack(*r) for r in rows))
        return rows

    def key_of(self, doc: dict[str, Any]) -> tuple[int, ...]:
        if self.idx_struct is _STEP_IDX:
            return (doc["episode_index"], doc["step_index"])
        return (doc["episode_index"],)

    def _handle(self):
        if self._fh is None:
            self._fh = open(self.path, "ab")
        return self._fh

    def append(self, line: bytes, key: tuple[int, ...]) -> int:
        offset = self.size
        fh = self._handle()
        fh.write(line)
        if not self._index or self._index[-1][:-1] != key:
            self._index.append((*key, offset))
            if self._idx_fh is None:
                self._idx_fh = open(self.idx_path, "ab")
            self._idx_fh.write(self.idx_struct.pack(*key, offset))
        self.size += len(line)
        return offset

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()
        if self._idx_fh is not None:
            self._idx_fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        if self._idx_fh is not None:
            self._idx_fh.close()
            self._idx_fh = None

    def seek_offset(self, key: tuple[int, ...]) -> int | None:
        """Offset of the first record with index key >= key (O(log n))."""
        pos = bisect_left([r[:-1] for r in self._index], key)
        if pos == len(self._index):
            return None
        return self._index[pos][-1]

    def lines(self, start_offset: int = 0) -> Iterator[bytes]:
        self.flush()
        if not self.path.exists():
            return
        with open(self.path, "rb") as f:
            f.seek(start_offset)
            emitted = start_offset
            for line in f:
                if emitted >= self.size:
                    break
                emitted += len(line)
                yield line


class RunStore:
    """Single-writer store for one run directory."""

    def __init__(self, run_dir: str | Path, run_id: str | None = None):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id or self.run_dir.name
        self.steps = _Log(self.run_dir / "steps.jsonl", _STEP_IDX)
        self.episodes = _Log(self.run_dir / "episodes.jsonl", _EP_IDX)
        self._last_step_key: tuple[int, int, str] | None = self._find_last_step_key()
        self._last_episode: int | None = None
        if self.episodes._index:
            self._last_episode = self.episodes._index[-1][0]

    def _find_last_step_key(self) -> tuple[int, int, str] | None:
        if not self.steps._index:
            return None
        last = None
        for line in self.steps.lines(self.steps._index[-1][-1]):
            doc = canonical_loads(line)
            last = (doc["episode_index"], doc["step_index"], doc["slot"])
        return last

    # -- ingestion -----------------------------------------------------------

    def quarantine(self, raw: str | bytes, reason: str) -> None:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8", "replace")
        line = canonical_line({"reason": reason, "raw": raw.rstrip("\n")})
        with open(self.run_dir / "telemetry.deadletter", "ab") as f:
            f.write(line)

    def ingest_line(self, raw: str | bytes) -> StepRecord | EpisodeRecord:
        """Validate one worker-emitted line and persist it; malformed lines
        are quarantined to the dead-letter file and raised as errors."""
        try:
            doc = canonical_loads(raw)
            if not isinstance(doc, dict):
                raise ValueError("not an object")
        except ValueError as exc:
            self.quarantine(raw, "syntax")
            raise TelemetryError("syntax", str(exc)) from exc
        kind = "step_record" if "step_index" in doc else "episode_record"
        version = doc.get("schema_version")
        if not isinstance(version, str) or not version.split(".")[0].isdigit() or version.split(".")[0] != "1":
            self.quarantine(raw, "version")
            raise TelemetryError("version", f"unsupported schema_version {version!r}")
        problems = validation_errors(kind, doc)
        if problems:
            self.quarantine(raw, "schema")
            raise TelemetryError("schema", "; ".join(problems))
        if doc["run_id"] != self.run_id:
            self.quarantine(raw, "run-mismatch")
            raise TelemetryError("run-mismatch", f"expected {self.run_id}, got {doc['run_id']}")
        try:
            if kind == "step_record":
                record: StepRecord | EpisodeRecord = StepRecord.from_doc(doc)
                self.append_step(record)
            else:
                record = EpisodeRecord.from_doc(doc)
                self.append_episode(record)
        except TelemetryError:
            self.quarantine(raw, "duplicate")
            raise
        return record

    def append_step(self, record: StepRecord) -> int:
        key = record.key()
        if self._last_step_key is not None and key <= self._last_step_key:
            raise TelemetryError(
                "duplicate", f"step key {key} not after {self._last_step_key}"
            )
        offset = self.steps.append(record.to_line(), key[:2])
        self._last_step_key = key
        return offset

    def append_episode(self, record: EpisodeRecord) -> int:
        if self._last_episode is not None and record.episode_index <= self._last_episode:
            raise TelemetryError(
                "duplicate", f"episode {record.episode_index} not after {self._last_episode}"
            )
        offset = self.episodes.append(record.to_line(), (record.episode_index,))
        self._last_episode = record.episode_index
        return offset

    # -- reading ---------------------------------------------------------------

    def read_steps(self, episode: int | None = None, step: int | None = None) -> Iterator[StepRecord]:
        start = 0
        if episode is not None:
            offset = self.steps.seek_offset((episode, step or 0))
            if offset is None:
                return
            start = offset
        for line in self.steps.lines(start):
            record = StepRecord.from_doc(canonical_loads(line))
            if episode is not None and record.episode_index != episode:
                if record.episode_index > episode:
                    return
                continue
            if step is not None and record.step_index != step:
                if record.episode_index == episode and record.step_index > step:
                    return
                continue
            yield record

    def read_episodes(self) -> Iterator[EpisodeRecord]:
        for line in self.episodes.lines():
            yield EpisodeRecord.from_doc(canonical_loads(line))

    def export_jsonl(self, stream: str) -> Iterator[bytes]:
        if stream == "steps":
            yield from self.steps.lines()
        elif stream == "episodes":
            yield from self.episodes.lines()
        else:
            raise TelemetryError("unknown-stream", stream)

    # -- lifecycle ---------------------------------------------------------------

    def flush(self) -> None:
        self.steps.flush()
        self.episodes.flush()

    def close(self) -> None:
        self.steps.close()
        self.episodes.close()

    def finalize(self) -> None:
        """Flush and reconcile: per-slot episode totals must equal the exact
        sum of that episode's step rewards."""
        self.flush()
        totals: dict[int, dict[str, Any]] = {}
        lengths: dict[int, int] = {}
        for record in self.read_steps():
            ep = totals.setdefault(record.episode_index, {})
            ep[record.slot] = ep.get(record.slot, 0) + record.reward
            lengths[record.episode_index] = max(
                lengths.get(record.episode_index, 0), record.step_index + 1
            )
        for episode in self.read_episodes():
            recorded = {s: v for s, v in episode.total_reward.items()}
            computed = totals.get(episode.episode_index, {})
            computed = {s: v for s, v in computed.items()}
            if {k: str(v) for k, v in recorded.items()} != {k: str(v) for k, v in computed.items()}:
                raise TelemetryError(
                    "reconciliation",
                    f"episode {episode.episode_index}: totals {recorded} != summed {computed}",
                )
            if episode.episode_length != lengths.get(episode.episode_index):
                raise TelemetryError(
                    "reconciliation",
                    f"episode {episode.episode_index}: length {episode.episode_length} "
                    f"!= max step+1 {lengths.get(episode.episode_index)}",
                )
        self.close()

    # -- metadata ----------------------------------------------------------------

    def write_manifest(self, doc: dict[str, Any]) -> None:
        (self.run_dir / "manifest").write_bytes(canonical_line(doc))

    def read_manifest(self) -> dict[str, Any] | None:
        path = self.run_dir / "manifest"
        if not path.exists():
            return None
        return canonical_loads(path.read_bytes())

    def write_result(self, doc: dict[str, Any]) -> None:
        (self.run_dir / "result").write_bytes(canonical_line(doc))

    def read_result(self) -> dict[str, Any] | None:
        path = self.run_dir / "result"
        if not path.exists():
            return None
        return canonical_loads(path.read_bytes())
