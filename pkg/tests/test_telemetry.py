from __future__ import annotations

import os
from decimal import Decimal
from pathlib import Path

import pytest

from mosaic.protocol import canonical_line, canonical_loads
from mosaic.telemetry import EpisodeRecord, RunStore, StepRecord, TelemetryError, run_aggregates


def step(run_id="r1", session="s0", episode=0, index=0, slot="blue_0", reward="0.000", **kw):
    defaults = dict(
        paradigm="baseline",
        action=0,
        terminated=False,
        truncated=False,
        obs_digest="d" * 16,
    )
    defaults.update(kw)
    return StepRecord(
        run_id=run_id,
        session_id=session,
        episode_index=episode,
        step_index=index,
        slot=slot,
        reward=Decimal(reward),
        **defaults,
    )


def episode(run_id="r1", session="s0", index=0, totals=None, length=1, winner="draw", truncated=False):
    return EpisodeRecord(
        run_id=run_id,
        session_id=session,
        episode_index=index,
        total_reward={k: Decimal(v) for k, v in (totals or {"blue_0": "0.000"}).items()},
        episode_length=length,
        team_scores={"blue": 0, "red": 0},
        winner=winner,
        truncated=truncated,
    )


@pytest.fixture
def store(tmp_path) -> RunStore:
    return RunStore(tmp_path / "r1", "r1")


def test_records_fast_line_matches_canonical():
    records = [
        step(),
        step(index=1, slot='we"ird', raw_text="line\nwith\tstuff", parse_outcome="parsed"),
        step(index=2, reward="-1.000", render_ref="blobs/x", terminated=True),
    ]
    for record in records:
        assert record.to_line() == canonical_line(record.to_doc())
    ep = episode(totals={"blue_0": "1.500", "red_0": "-1.000"})
    assert ep.to_line() == canonical_line(ep.to_doc())


def test_append_then_read_back_round_trips(store):
    record = step(reward="1.000", raw_text="ACTION: up", parse_outcome="parsed", paradigm="llm")
    store.append_step(record)
    store.flush()
    assert list(store.read_steps()) == [record]


def test_duplicate_step_key_rejected(store):
    store.append_step(step())
    with pytest.raises(TelemetryError) as err:
        store.append_step(step())
    assert err.value.reason == "duplicate"


def test_out_of_order_append_rejected(store):
    store.append_step(step(episode=1, index=0))
    with pytest.raises(TelemetryError):
        store.append_step(step(episode=0, index=5))


def test_ingest_valid_line(store):
    line = step(reward="0.500").to_line()
    record = store.ingest_line(line)
    assert isinstance(record, StepRecord)
    assert record.reward == Decimal("0.500")


def test_ingest_wrong_major_version_quarantined(store):
    doc = step().to_doc()
    doc["schema_version"] = "2.0.0"
    with pytest.raises(TelemetryError) as err:
        store.ingest_line(canonical_line(doc))
    assert err.value.reason == "version"
    dead = (store.run_dir / "telemetry.deadletter").read_bytes()
    assert b'"reason":"version"' in dead


def test_ingest_run_mismatch_quarantined(store):
    with pytest.raises(TelemetryError) as err:
        store.ingest_line(step(run_id="other").to_line())
    assert err.value.reason == "run-mismatch"


def test_ingest_schema_violation_quarantined(store):
    doc = step().to_doc()
    del doc["action"]
    with pytest.raises(TelemetryError) as err:
        store.ingest_line(canonical_line(doc))
    assert err.value.reason == "schema"


def test_ingest_garbage_quarantined_never_lost(store):
    with pytest.raises(TelemetryError):
        store.ingest_line(b"not even json\n")
    dead = (store.run_dir / "telemetry.deadletter").read_text()
    assert "not even json" in dead


def test_losslessness_every_line_lands_somewhere(store):
    lines = [
        step().to_line(),
        b"garbage\n",
        step(index=1).to_line(),
        step(index=1).to_line(),  # duplicate
    ]
    persisted = quarantined = 0
    for line in lines:
        try:
            store.ingest_line(line)
            persisted += 1
        except TelemetryError:
            quarantined += 1
    store.flush()
    dead = (store.run_dir / "telemetry.deadletter").read_text().splitlines()
    assert persisted == 2 and quarantined == 2
    assert len(dead) == 2


def test_export_is_byte_identical_across_calls(store):
    for i in range(5):
        store.append_step(step(index=i, reward="1.000"))
    store.flush()
    a = b"".join(store.export_jsonl("steps"))
    b = b"".join(store.export_jsonl("steps"))
    assert a == b and a.count(b"\n") == 5


def test_export_empty_run_is_empty_success(store):
    assert b"".join(store.export_jsonl("steps")) == b""
    assert b"".join(store.export_jsonl("episodes")) == b""


def test_index_lookup_after_many_appends(store):
    for ep in range(40):
        for idx in range(25):
            store.append_step(step(episode=ep, index=idx))
    store.flush()
    hits = list(store.read_steps(episode=17, step=13))
    assert len(hits) == 1 and hits[0].episode_index == 17 and hits[0].step_index == 13
    # index rows are bounded by (episode, step) groups
    assert len(store.steps._index) == 1000


def test_index_rebuilt_when_corrupt(tmp_path):
    store = RunStore(tmp_path / "r1", "r1")
    for i in range(10):
        store.append_step(step(index=i))
    store.close()
    (tmp_path / "r1" / "steps.jsonl.idx").write_bytes(b"junkjunk")
    reopened = RunStore(tmp_path / "r1", "r1")
    assert len(list(reopened.read_steps(episode=0, step=7))) == 1


def test_crash_injection_truncation_sweep(tmp_path):
    """Truncate at every byte offset inside the final record; earlier
    records must survive reopen intact."""
    base = tmp_path / "base"
    store = RunStore(base, "r1")
    records = [step(index=i, reward="1.000") for i in range(4)]
    for record in records:
        store.append_step(record)
    store.close()
    data = (base / "steps.jsonl").read_bytes()
    last_start = data.rindex(records[-1].to_line())

    for offset in range(last_start, len(data) + 1):
        victim_dir = tmp_path / f"cut{offset}"
        victim_dir.mkdir()
        (victim_dir / "steps.jsonl").write_bytes(data[:offset])
        (victim_dir / "steps.jsonl.idx").write_bytes((base / "steps.jsonl.idx").read_bytes())
        reopened = RunStore(victim_dir, "r1")
        survivors = list(reopened.read_steps())
        if offset == len(data):
            assert survivors == records
        else:
            assert survivors == records[:3], f"offset {offset}"
        # the healed store accepts appends again
        reopened.append_step(step(episode=9, index=0))
        reopened.flush()


def test_finalize_reconciles_totals(store):
    store.append_step(step(index=0, reward="1.000"))
    store.append_step(step(index=1, reward="0.500"))
    store.append_episode(episode(totals={"blue_0": "1.500"}, length=2))
    store.finalize()  # exact sum matches


def test_finalize_fails_loudly_on_total_mismatch(tmp_path):
    store = RunStore(tmp_path / "r1", "r1")
    store.append_step(step(index=0, reward="1.000"))
    store.append_episode(episode(totals={"blue_0": "2.000"}, length=1))
    with pytest.raises(TelemetryError) as err:
        store.finalize()
    assert err.value.reason == "reconciliation"


def test_aggregates(store):
    store.append_step(step(index=0, reward="1.000", paradigm="llm", slot="blue_0",
                           raw_text="x", parse_outcome="fell_back_noop"))
    store.append_step(step(index=1, reward="1.000", paradigm="llm", slot="blue_0",
                           raw_text="ACTION: up", parse_outcome="parsed"))
    store.append_episode(episode(totals={"blue_0": "2.000"}, length=2, winner="blue"))
    store.flush()
    agg = run_aggregates(store)
    assert agg["episodes"] == 1
    assert agg["win_counts"] == {"blue": 1}
    assert agg["per_slot_return_sum"] == {"blue_0": "2.000"}
    assert agg["parse_fallback_rate"] == {"blue_0": 0.5}


def test_parse_fallback_rate_of_garbage_fed_strict_agent(store):
    for i in range(6):
        store.append_step(step(index=i, paradigm="llm", raw_text="garbage",
                               parse_outcome="fell_back_noop"))
    store.flush()
    assert run_aggregates(store)["parse_fallback_rate"] == {"blue_0": 1.0}
