from __future__ import annotations

import random
import string
from decimal import Decimal

import pytest

from mosaic.protocol import (
    COMMAND_NAMES,
    MAX_LINE_BYTES,
    RESPONSE_NAMES,
    CanonicalError,
    CapabilityManifest,
    DecodeError,
    EncodeError,
    NegotiationError,
    ProtocolMessage,
    canonical_dumps,
    canonical_line,
    canonical_loads,
    command,
    decode_message,
    encode_message,
    negotiate,
    response,
)
from mosaic.protocol.schemas import load_schema, validation_errors


def test_reset_encoding_matches_documented_wire_format():
    line = encode_message(command("reset", 1, seed=42))
    assert line == b'{"cmd":"reset","correlation_id":1,"seed":42,"v":"1.0.0"}\n'


def test_stop_encoding():
    line = encode_message(command("stop", 7))
    assert line == b'{"cmd":"stop","correlation_id":7,"v":"1.0.0"}\n'


def test_encode_is_byte_deterministic():
    msg = command("select_action", 3, observation={"b": 1, "a": [1.5, None]}, info={})
    assert encode_message(msg) == encode_message(msg)


def test_single_line_framing():
    msg = response("step_result", 2, action=1, raw_text="line one\nline two")
    data = encode_message(msg)
    assert data.endswith(b"\n") and data.count(b"\n") == 1


def test_round_trip_identity_simple():
    msg = command("reset", 9, seed=5, env_metadata={"k": [1, 2, {"x": "y"}]})
    assert decode_message(encode_message(msg)) == msg


def _random_payload(rng: random.Random, depth: int = 0):
    kind = rng.randrange(7 if depth < 2 else 4)
    if kind == 0:
        return rng.randrange(-(10**6), 10**6)
    if kind == 1:
        return rng.choice([True, False, None])
    if kind == 2:
        return Decimal(rng.randrange(-(10**6), 10**6)) / 1000
    if kind == 3:
        return "".join(rng.choice(string.printable) for _ in range(rng.randrange(20)))
    if kind == 4:
        return [_random_payload(rng, depth + 1) for _ in range(rng.randrange(4))]
    return {
        f"k{rng.randrange(50)}": _random_payload(rng, depth + 1)
        for _ in range(rng.randrange(4))
    }


def _random_valid_message(rng: random.Random) -> ProtocolMessage:
    if rng.random() < 0.5:
        name = rng.choice(sorted(COMMAND_NAMES))
        base: dict = {}
        if name == "reset":
            base["seed"] = rng.randrange(10**6)
        elif name == "select_action":
            base["observation"] = {"modality": "text", "text": "x"}
        elif name == "restore":
            base["state"] = {"seed": 1}
        maker, extra = command, base
    else:
        name = rng.choice(sorted(RESPONSE_NAMES))
        base = {}
        if name == "ready":
            base = {"seed": 1, "observation_shape": [3]}
        elif name == "step_result":
            base = {"action": rng.randrange(5)}
        elif name == "episode_end":
            base = {"total_reward": Decimal("1.500"), "episode_length": 3}
        elif name == "error":
            base = {"message": "boom"}
        elif name == "handshake":
            base = {
                "worker_kind": "baseline",
                "supported_commands": ["reset", "stop"],
                "observation_modalities": ["tensor"],
                "max_image_history": 0,
                "schema_version": "1.0.0",
            }
        maker, extra = response, base
    for _ in range(rng.randrange(3)):
        extra[f"extra_{rng.randrange(100)}"] = _random_payload(rng)
    return maker(name, rng.randrange(1, 10**6), **extra)


def test_round_trip_identity_generated_corpus():
    rng = random.Random(20240901)
    for _ in range(1000):
        msg = _random_valid_message(rng)
        line = encode_message(msg)
        back = decode_message(line)
        assert back == msg
        assert encode_message(back) == line


def test_unknown_payload_keys_survive_decode_encode():
    line = b'{"cmd":"step","correlation_id":4,"future_field":{"deep":[1,2]},"v":"1.2.9"}\n'
    msg = decode_message(line)
    assert msg.payload["future_field"] == {"deep": [1, 2]}
    assert encode_message(msg) == line


def test_decode_syntax_error():
    with pytest.raises(DecodeError) as err:
        decode_message(b"{broken\n")
    assert err.value.failure_class == "syntax"


def test_decode_unknown_name():
    with pytest.raises(DecodeError) as err:
        decode_message(b'{"cmd":"launch","correlation_id":1,"v":"1.0.0"}\n')
    assert err.value.failure_class == "unknown-name"


def test_decode_missing_seed_is_schema_error():
    with pytest.raises(DecodeError) as err:
        decode_message(b'{"cmd":"reset","correlation_id":1,"v":"1.0.0"}\n')
    assert err.value.failure_class == "schema"
    assert err.value.field == "seed"


def test_decode_negative_seed_rejected():
    with pytest.raises(DecodeError) as err:
        decode_message(b'{"cmd":"reset","correlation_id":1,"seed":-4,"v":"1.0.0"}\n')
    assert err.value.failure_class == "schema"


def test_decode_major_version_mismatch():
    with pytest.raises(DecodeError) as err:
        decode_message(b'{"cmd":"stop","correlation_id":1,"v":"2.0.0"}\n')
    assert err.value.failure_class == "version"


def test_decode_minor_version_skew_tolerated():
    msg = decode_message(b'{"cmd":"stop","correlation_id":1,"v":"1.7.3"}\n')
    assert msg.protocol_version == "1.7.3"


def test_step_result_needs_action_or_raw_text():
    with pytest.raises(EncodeError):
        encode_message(response("step_result", 1))
    decode_ok = decode_message(b'{"resp":"step_result","correlation_id":1,"raw_text":"ACTION: up","v":"1.0.0"}\n')
    assert decode_ok.get("raw_text")


def test_payload_cannot_shadow_framing_keys():
    with pytest.raises(EncodeError):
        encode_message(ProtocolMessage("command", "stop", 1, {"cmd": "reset"}))


def test_line_length_cap():
    with pytest.raises(CanonicalError):
        canonical_line({"blob": "x" * (MAX_LINE_BYTES + 10)})


def _mutate(rng: random.Random, line: bytes) -> bytes:
    data = bytearray(line)
    for _ in range(rng.randrange(1, 4)):
        op = rng.randrange(3)
        if op == 0 and data:
            data[rng.randrange(len(data))] = rng.randrange(256)
        elif op == 1 and data:
            del data[rng.randrange(len(data))]
        else:
            data.insert(rng.randrange(len(data) + 1), rng.randrange(256))
    return bytes(data)


def test_fuzz_decode_never_crashes():
    """10k hostile lines: random bytes plus mutated valid messages."""
    rng = random.Random(0xF0220)
    outcomes = {"ok": 0, "err": 0}
    for i in range(10_000):
        if i % 2 == 0:
            line = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 120)))
        else:
            line = _mutate(rng, encode_message(_random_valid_message(rng)))
        try:
            decode_message(line)
            outcomes["ok"] += 1
        except DecodeError:
            outcomes["err"] += 1
    assert sum(outcomes.values()) == 10_000
    assert outcomes["err"] > 0  # mutations really were hostile


def test_decoded_fixtures_agree_with_published_schemas():
    """The in-code validator and the published JSON Schemas must agree."""
    rng = random.Random(555)
    for _ in range(300):
        msg = _random_valid_message(rng)
        doc = canonical_loads(encode_message(msg))
        # Decimal payloads: schema validation works on plain JSON values.
        doc = canonical_loads(canonical_dumps(doc))
        errors = validation_errors(msg.name, doc)
        assert errors == [], (msg.name, errors)
    # and invalid ones get flagged by both
    bad = {"cmd": "reset", "correlation_id": 1, "v": "1.0.0"}
    assert validation_errors("reset", bad)
    with pytest.raises(DecodeError):
        decode_message(canonical_line(bad))


def test_published_schema_copies_are_in_sync():
    from mosaic.protocol import schemas as schemas_mod

    repo_dir = __import__("pathlib").Path(__file__).resolve().parents[1] / "schemas" / "v1"
    for path in sorted(repo_dir.glob("*.json")):
        packaged = load_schema(path.stem)
        import json

        assert packaged == json.loads(path.read_text("utf-8")), path.name


# -- negotiation ---------------------------------------------------------------


def _manifest(**overrides):
    base = dict(
        worker_kind="baseline",
        supported_commands=frozenset({"reset", "stop", "select_action"}),
        observation_modalities=frozenset({"tensor", "text"}),
        max_image_history=0,
        schema_version="1.0.0",
    )
    base.update(overrides)
    return CapabilityManifest(**base)


def test_negotiate_superset_accepts():
    session = negotiate(_manifest(), _manifest(supported_commands=frozenset({"reset", "stop"})))
    assert session.worker_kind == "baseline"
    assert "select_action" in session.supported_commands


def test_negotiate_major_version_mismatch():
    with pytest.raises(NegotiationError) as err:
        negotiate(_manifest(schema_version="2.0.0"), _manifest())
    assert any("major version" in u for u in err.value.unmet)


def test_negotiate_missing_modality():
    with pytest.raises(NegotiationError) as err:
        negotiate(_manifest(), _manifest(observation_modalities=frozenset({"image"})))
    assert any("modality" in u for u in err.value.unmet)


def test_manifest_invariant_image_history_requires_image_modality():
    bad = _manifest(max_image_history=2)
    assert any("image" in v for v in bad.violations())


def test_negotiate_lists_every_unmet_requirement():
    with pytest.raises(NegotiationError) as err:
        negotiate(
            _manifest(schema_version="2.0.0", supported_commands=frozenset({"reset", "stop"})),
            _manifest(supported_commands=frozenset({"reset", "stop", "restore"}),
                      observation_modalities=frozenset({"image"})),
        )
    joined = "; ".join(err.value.unmet)
    assert "major version" in joined and "restore" in joined and "image" in joined
