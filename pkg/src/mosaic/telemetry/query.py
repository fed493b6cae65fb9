"""Streaming aggregates over a run's telemetry; bounded memory."""

from __future__ import annotations

from decimal import Decimal
from pathlib import Path
from typing import Any

from .store import RunStore


def run_aggregates(store: RunStore) -> dict[str, Any]:
    """Per-episode returns, per-slot sums, team win counts, parse-fallback rates."""
    per_slot_sum: dict[str, Decimal] = {}
    parse_totals: dict[str, int] = {}
    parse_fallbacks: dict[str, int] = {}
    for record in store.read_steps():
        per_slot_sum[record.slot] = per_slot_sum.get(record.slot, Decimal("0.000")) + record.reward
        if record.parse_outcome is not None:
            parse_totals[record.slot] = parse_totals.get(record.slot, 0) + 1
            if record.parse_outcome != "parsed":
                parse_fallbacks[record.slot] = parse_fallbacks.get(record.slot, 0) + 1

    win_counts: dict[str, int] = {}
    draws = 0
    episodes = 0
    per_episode_returns: dict[str, dict[str, str]] = {}
    for episode in store.read_episodes():
        episodes += 1
        if episode.winner == "draw":
            draws += 1
        else:
            win_counts[episode.winner] = win_counts.get(episode.winner, 0) + 1
        per_episode_returns[str(episode.episode_index)] = {
            slot: str(v) for slot, v in sorted(episode.total_reward.items())
        }

    fallback_rates = {
        slot: parse_fallbacks.get(slot, 0) / total
        for slot, total in parse_totals.items()
    }
    return {
        "episodes": episodes,
        "per_slot_return_sum": {s: str(v) for s, v in sorted(per_slot_sum.items())},
        "per_episode_returns": per_episode_returns,
        "win_counts": dict(sorted(win_counts.items())),
        "draws": draws,
        "parse_fallback_rate": dict(sorted(fallback_rates.items())),
    }


def open_run(runs_root: str | Path, run_id: str) -> RunStore:
    run_dir = Path(runs_root) / run_id
    if not run_dir.exists():
        raise FileNotFoundError(f"unknown run {run_id!r} under {runs_root}")
    return RunStore(run_dir, run_id)
