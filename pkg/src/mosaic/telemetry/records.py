"""Versioned telemetry row types.

Records deliberately carry no wall-clock fields; timestamps live only in
the run manifest so the JSONL streams stay byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Any

from ..protocol.canonical import _escape_string, canonical_line, fixed_reward

SCHEMA_VERSION = "1.0.0"

PARSE_OUTCOMES = ("parsed", "fell_back_noop", "fell_back_random", "error")


@dataclass(frozen=True)
class StepRecord:
    run_id: str
    session_id: str
    episode_index: int
    step_index: int
    slot: str
    paradigm: str
    action: int
    reward: Decimal
    terminated: bool
    truncated: bool
    obs_digest: str
    raw_text: str | None = None
    parse_outcome: str | None = None
    render_ref: str | None = None
    schema_version: str = SCHEMA_VERSION

    def key(self) -> tuple[int, int, str]:
        return (self.episode_index, self.step_index, self.slot)

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "schema_version": self.schema_version,
            "run_id": self.run_id,
            "session_id": self.session_id,
            "episode_index": self.episode_index,
            "step_index": self.step_index,
            "slot": self.slot,
            "paradigm": self.paradigm,
            "action": self.action,
            "reward": fixed_reward(self.reward),
            "terminated": self.terminated,
            "truncated": self.truncated,
            "obs_digest": self.obs_digest,
        }
        if self.raw_text is not None:
            doc["raw_text"] = self.raw_text
        if self.parse_outcome is not None:
            doc["parse_outcome"] = self.parse_outcome
        if self.render_ref is not None:
            doc["render_ref"] = self.render_ref
        return doc

    def to_line(self) -> bytes:
        # Hot path: canonical_line(self.to_doc()) unrolled with the key order
        # fixed (lexicographic). Byte-equality with the generic encoder is
        # pinned by test_records_fast_line_matches_canonical.
        out = [
            f'{{"action":{self.action},"episode_index":{self.episode_index}',
            f',"obs_digest":"{self.obs_digest}","paradigm":"{self.paradigm}"',
        ]
        if self.parse_outcome is not None:
            out.append(f',"parse_outcome":"{self.parse_outcome}"')
        if self.raw_text is not None:
            out.append(',"raw_text":' + _escape_string(self.raw_text))
        if self.render_ref is not None:
            out.append(',"render_ref":' + _escape_string(self.render_ref))
        out.append(
            f',"reward":{fixed_reward(self.reward)},"run_id":"{self.run_id}"'
            f',"schema_version":"{self.schema_version}","session_id":"{self.session_id}"'
            f',"slot":{_escape_string(self.slot)},"step_index":{self.step_index}'
            f',"terminated":{"true" if self.terminated else "false"}'
            f',"truncated":{"true" if self.truncated else "false"}}}\n'
        )
        return "".join(out).encode("utf-8")

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "StepRecord":
        return cls(
            run_id=doc["run_id"],
            session_id=doc["session_id"],
            episode_index=doc["episode_index"],
            step_index=doc["step_index"],
            slot=doc["slot"],
            paradigm=doc["paradigm"],
            action=doc["action"],
            reward=fixed_reward(doc["reward"]),
            terminated=doc["terminated"],
            truncated=doc["truncated"],
            obs_digest=doc["obs_digest"],
            raw_text=doc.get("raw_text"),
            parse_outcome=doc.get("parse_outcome"),
            render_ref=doc.get("render_ref"),
            schema_version=doc["schema_version"],
        )


@dataclass(frozen=True)
class EpisodeRecord:
    run_id: str
    session_id: str
    episode_index: int
    total_reward: dict[str, Decimal]  # per slot
    episode_length: int
    team_scores: dict[str, int]
    winner: str  # team id or "draw"
    truncated: bool
    schema_version: str = SCHEMA_VERSION

    def to_doc(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "run_id": self.run_id,
            "session_id": self.session_id,
            "episode_index": self.episode_index,
            "total_reward": {slot: fixed_reward(v) for slot, v in self.total_reward.items()},
            "episode_length": self.episode_length,
            "team_scores": dict(self.team_scores),
            "winner": self.winner,
            "truncated": self.truncated,
        }

    def to_line(self) -> bytes:
        return canonical_line(self.to_doc())

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "EpisodeRecord":
        return cls(
            run_id=doc["run_id"],
            session_id=doc["session_id"],
            episode_index=doc["episode_index"],
            total_reward={s: fixed_reward(v) for s, v in doc["total_reward"].items()},
            episode_length=doc["episode_length"],
            team_scores={t: int(v) for t, v in doc["team_scores"].items()},
            winner=doc["winner"],
            truncated=doc["truncated"],
            schema_version=doc["schema_version"],
        )
