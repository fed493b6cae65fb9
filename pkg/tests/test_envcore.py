from __future__ import annotations

import random
from pathlib import Path

import pytest

from mosaic.envcore import (
    CorridorEnv,
    EnvError,
    EnvState,
    TeamTagEnv,
    decode_state,
    encode_state,
    make_env,
    obs_digest,
    render_ascii,
    render_cells,
    render_rgb,
    serialize_obs,
    task_ids,
)
from mosaic.envcore.registry import UnknownTaskError

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures" / "envs"


# -- construction and determinism ------------------------------------------------


def test_make_env_is_deterministic():
    _, a = make_env("mosaic/Corridor-v1", 42)
    _, b = make_env("mosaic/Corridor-v1", 42)
    assert encode_state(a) == encode_state(b)


def test_teamtag_partition_sizes():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 0)
    assert len(env.slots) == 4
    assert sorted(len(m) for m in env.teams.values()) == [2, 2]
    assert len(set(state.positions.values())) == 4


def test_unknown_task():
    with pytest.raises(UnknownTaskError):
        make_env("nope", 1)


def test_trajectory_is_pure_function_of_seed():
    def rollout(seed):
        env, state = make_env("mosaic/TeamTag-2vs2-v1", seed)
        rng = random.Random(99)
        blobs = []
        for _ in range(60):
            actions = {s: rng.randrange(5) for s in env.slots}
            state, _ = env.step_parallel(state, actions)
            blobs.append(encode_state(state))
        return blobs

    assert rollout(7) == rollout(7)
    assert rollout(7) != rollout(8)


# -- corridor rules (hand-simulated oracle from docs/envs.md) ---------------------


def test_corridor_forward_reaches_goal_in_four_steps():
    env, state = make_env("mosaic/Corridor-v1", 42)
    rewards = []
    for _ in range(4):
        state, transitions = env.step_parallel(state, {"agent_0": 1})
        rewards.append(transitions[0].reward)
    assert rewards == [0, 0, 0, 1]
    assert transitions[0].terminated and not transitions[0].truncated
    assert state.done and state.step_index == 4


def test_corridor_clamps_at_walls():
    env, state = make_env("mosaic/Corridor-v1", 0)
    state, _ = env.step_parallel(state, {"agent_0": 2})  # back at the wall
    assert state.positions["agent_0"] == (0, 0)


def test_corridor_truncates_at_horizon():
    env, state = make_env("mosaic/Corridor-v1", 0)
    for _ in range(env.horizon):
        state, transitions = env.step_parallel(state, {"agent_0": 0})
    assert transitions[0].truncated and not transitions[0].terminated
    assert state.done


def test_corridor_reward_bounds():
    env, state = make_env("mosaic/Corridor-v1", 5)
    rng = random.Random(1)
    while not state.done:
        state, transitions = env.step_parallel(state, {"agent_0": rng.randrange(3)})
        assert transitions[0].reward in (0, 1)


# -- teamtag rules (rule-table oracle from docs/envs.md) ---------------------------


def _tag_state(positions: dict[str, tuple[int, int]], seed: int = 0) -> tuple[TeamTagEnv, EnvState]:
    env = TeamTagEnv()
    _, base = make_env("mosaic/TeamTag-2vs2-v1", seed)
    return env, base.evolve(positions=positions)


def test_all_stay_is_a_fixed_point():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 3)
    nxt, transitions = env.step_parallel(state, {s: 0 for s in env.slots})
    assert nxt.positions == state.positions
    assert all(t.reward == 0 for t in transitions)


def test_collision_canonical_order_loser_stays():
    # blue_0 and blue_1 race for (1, 1); blue_0 is first in canonical order.
    env, state = _tag_state(
        {"blue_0": (0, 1), "blue_1": (2, 1), "red_0": (5, 5), "red_1": (6, 6)}
    )
    nxt, transitions = env.step_parallel(
        state, {"blue_0": 4, "blue_1": 3, "red_0": 0, "red_1": 0}
    )
    assert nxt.positions["blue_0"] == (1, 1)
    assert nxt.positions["blue_1"] == (2, 1)  # blocked, stays
    infos = {t.slot: t.info for t in transitions}
    assert infos["blue_1"].get("blocked_by") == "blue_0"
    assert all(t.reward == 0 for t in transitions)


def test_cross_team_race_for_empty_cell_is_block_not_tag():
    env, state = _tag_state(
        {"blue_0": (0, 1), "blue_1": (6, 6), "red_0": (2, 1), "red_1": (5, 5)}
    )
    nxt, transitions = env.step_parallel(
        state, {"blue_0": 4, "blue_1": 0, "red_0": 3, "red_1": 0}
    )
    assert nxt.positions["blue_0"] == (1, 1)
    assert nxt.positions["red_0"] == (2, 1)  # arrived second: blocked
    assert all(t.reward == 0 for t in transitions)
    assert nxt.score == {"blue": 0, "red": 0}


def test_tag_resolution_rewards_and_respawn():
    env, state = _tag_state(
        {"blue_0": (1, 1), "blue_1": (6, 6), "red_0": (2, 1), "red_1": (5, 5)}
    )
    nxt, transitions = env.step_parallel(
        state, {"blue_0": 4, "blue_1": 0, "red_0": 0, "red_1": 0}
    )
    rewards = {t.slot: t.reward for t in transitions}
    assert rewards == {"blue_0": 1, "blue_1": 0, "red_0": -1, "red_1": 0}
    assert nxt.positions["blue_0"] == (2, 1)  # mover takes the cell
    assert nxt.positions["red_0"] != (2, 1)  # victim respawned elsewhere
    assert nxt.score == {"blue": 1, "red": -1}
    assert len(set(nxt.positions.values())) == 4


def test_tagged_agent_pending_action_is_cancelled():
    # blue_0 tags red_0 before red_0 acts; red_0's move must not execute.
    env, state = _tag_state(
        {"blue_0": (1, 1), "blue_1": (6, 6), "red_0": (2, 1), "red_1": (5, 5)},
        seed=11,
    )
    nxt, transitions = env.step_parallel(
        state, {"blue_0": 4, "blue_1": 0, "red_0": 4, "red_1": 0}
    )
    infos = {t.slot: t.info for t in transitions}
    assert infos["red_0"].get("cancelled") == "tagged_before_acting"
    assert nxt.positions["red_0"] != (3, 1)


def test_mover_is_not_taggable():
    # blue_0 vacates (2,2) before red_0 (later in canonical order) steps up
    # into it: entering a vacated cell is a plain move, not a tag.
    env, state = _tag_state(
        {"blue_0": (2, 2), "blue_1": (6, 6), "red_0": (2, 3), "red_1": (5, 5)}
    )
    nxt, transitions = env.step_parallel(
        state, {"blue_0": 4, "blue_1": 0, "red_0": 1, "red_1": 0}
    )
    # blue_0 moved right before red_0 moved up into the vacated cell: no tag.
    rewards = {t.slot: t.reward for t in transitions}
    assert rewards == {s: 0 for s in env.slots}
    assert nxt.positions["blue_0"] == (3, 2)
    assert nxt.positions["red_0"] == (2, 2)
    assert nxt.score == {"blue": 0, "red": 0}


def test_conservation_over_random_rollouts():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 1)
    rng = random.Random(2)
    for _ in range(300):
        if state.done:
            _, state = make_env("mosaic/TeamTag-2vs2-v1", rng.randrange(1000))
        state, transitions = env.step_parallel(state, {s: rng.randrange(5) for s in env.slots})
        assert len(set(state.positions.values())) == 4
        for t in transitions:
            assert t.reward in (-1, 0, 1)


def test_team_scores_equal_running_reward_sums():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 9)
    rng = random.Random(3)
    sums = {"blue": 0, "red": 0}
    for _ in range(150):
        state, transitions = env.step_parallel(state, {s: rng.randrange(5) for s in env.slots})
        for t in transitions:
            sums[state.team_of[t.slot]] += t.reward
    assert sums == dict(state.score)


def test_wrong_joint_action_keys_rejected():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 0)
    with pytest.raises(EnvError):
        env.step_parallel(state, {"blue_0": 0})
    with pytest.raises(EnvError):
        env.step_parallel(state, {**{s: 0 for s in env.slots}, "ghost": 0})
    with pytest.raises(EnvError):
        env.step_parallel(state, {**{s: 0 for s in env.slots}, "blue_0": 9})


# -- turn-based mode ---------------------------------------------------------------


def test_aec_equals_parallel_for_single_agent():
    env, s_par = make_env("mosaic/Corridor-v1", 4)
    _, s_aec = make_env("mosaic/Corridor-v1", 4)
    for _ in range(4):
        s_par, _ = env.step_parallel(s_par, {"agent_0": 1})
        s_aec, transition, _ = env.step_aec(s_aec, "agent_0", 1)
    assert encode_state(s_par) == encode_state(s_aec)
    assert transition.terminated


def test_aec_out_of_turn_names_expected_slot():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 0)
    with pytest.raises(EnvError) as err:
        env.step_aec(state, "red_0", 0)
    assert "blue_0" in str(err.value)


def test_aec_full_stay_cycle_matches_parallel_fixed_point():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 6)
    aec = state
    for slot in env.slots:
        aec, transition, next_slot = env.step_aec(aec, slot, 0)
    par, _ = env.step_parallel(state, {s: 0 for s in env.slots})
    assert encode_state(aec) == encode_state(par)
    assert next_slot == "blue_0"


def test_aec_turn_cycle_and_step_counter():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 6)
    assert state.turn_index == 0
    state, _, nxt = env.step_aec(state, "blue_0", 0)
    assert state.turn_index == 1 and nxt == "blue_1"
    assert state.step_index == 0  # cycle not complete yet
    for slot in ("blue_1", "red_0", "red_1"):
        state, _, _ = env.step_aec(state, slot, 0)
    assert state.step_index == 1 and state.turn_index == 0


def test_aec_victim_penalty_attributed_on_next_turn():
    env, base = make_env("mosaic/TeamTag-2vs2-v1", 0)
    state = base.evolve(
        positions={"blue_0": (1, 1), "blue_1": (6, 6), "red_0": (2, 1), "red_1": (5, 5)}
    )
    state, t_blue0, _ = env.step_aec(state, "blue_0", 4)  # tags red_0
    assert t_blue0.reward == 1
    assert state.score == {"blue": 1, "red": -1}
    state, _, _ = env.step_aec(state, "blue_1", 0)
    state, t_red0, _ = env.step_aec(state, "red_0", 0)
    assert t_red0.reward == -1  # the pending penalty lands here


# -- canonical state codec ------------------------------------------------------------


def test_state_round_trip():
    for task in task_ids():
        _, state = make_env(task, 123)
        assert decode_state(encode_state(state)) == state


def test_state_round_trip_after_rollout():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 5)
    rng = random.Random(8)
    for _ in range(40):
        state, _ = env.step_parallel(state, {s: rng.randrange(5) for s in env.slots})
    assert decode_state(encode_state(state)) == state


def test_state_encoding_goldens():
    for name, task, seed in (
        ("corridor_seed42.state", "mosaic/Corridor-v1", 42),
        ("teamtag_seed0.state", "mosaic/TeamTag-2vs2-v1", 0),
    ):
        _, state = make_env(task, seed)
        assert encode_state(state) == (FIXTURES / name).read_bytes(), name


def test_encoding_injective_over_rollout_states():
    """Digest collisions over 10^5 visited states would break checkpointing."""
    import hashlib

    env, state = make_env("mosaic/TeamTag-2vs2-v1", 0)
    rng = random.Random(0)
    seen: dict[bytes, bytes] = {}
    for i in range(100_000):
        if state.done:
            _, state = make_env("mosaic/TeamTag-2vs2-v1", i)
        state, _ = env.step_parallel(state, {s: rng.randrange(5) for s in env.slots})
        blob = encode_state(state)
        digest = hashlib.sha256(blob).digest()[:12]
        assert seen.setdefault(digest, blob) == blob
    assert len(seen) > 90_000


# -- observations ----------------------------------------------------------------------


def test_obs_purity():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 2)
    a = serialize_obs(env, state, "blue_0", "text")
    b = serialize_obs(env, state, "blue_0", "text")
    assert a == b and obs_digest(a) == obs_digest(b)


def test_tensor_shape_matches_announced_metadata():
    for task in task_ids():
        env, state = make_env(task, 1)
        obs = serialize_obs(env, state, env.slots[0], "tensor")
        assert obs["shape"] == env.metadata()["observation_shape"]
        h, w, c = obs["shape"]
        assert len(obs["data"]) == h * w * c


def test_tensor_is_egocentric_on_teamtag():
    env, base = make_env("mosaic/TeamTag-2vs2-v1", 0)
    state = base.evolve(
        positions={"blue_0": (0, 0), "blue_1": (3, 3), "red_0": (1, 0), "red_1": (5, 5)}
    )
    obs = serialize_obs(env, state, "blue_0", "tensor")
    data, (h, w, _) = obs["data"], obs["shape"]
    assert data[((h // 2) * w + (w // 2)) * 3 + 0] == 1  # self at center
    # red_0 is 1 step right of blue_0 -> center x+1, opponent channel
    assert data[((h // 2) * w + (w // 2 + 1)) * 3 + 2] == 1


def test_text_modes_teammate_visibility():
    env, base = make_env("mosaic/TeamTag-2vs2-v1", 0)
    state = base.evolve(
        positions={"blue_0": (1, 1), "blue_1": (3, 1), "red_0": (1, 4), "red_1": (5, 5)}
    )
    ego = serialize_obs(env, state, "blue_0", "text", observation_mode="egocentric")
    vis = serialize_obs(env, state, "blue_0", "text", observation_mode="visible_teammates")
    assert "teammate" not in ego["text"]
    assert "Your teammate blue_1 is at (3, 1)." in vis["text"]
    assert "Nearest opponent is 3 steps down." in ego["text"]


def test_text_toroidal_offsets_take_short_way_around():
    env, base = make_env("mosaic/TeamTag-2vs2-v1", 0)
    state = base.evolve(
        positions={"blue_0": (0, 0), "blue_1": (3, 3), "red_0": (6, 0), "red_1": (5, 5)}
    )
    obs = serialize_obs(env, state, "blue_0", "text")
    assert "Nearest opponent is 1 step left." in obs["text"]


def test_text_image_carries_bounded_history():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 0)
    frames = [render_cells(state)] * 5
    obs = serialize_obs(env, state, "blue_0", "text_image", max_image_history=2, frame_history=frames)
    assert obs["modality"] == "text_image"
    assert len(obs["images"]) == 2
    assert obs["images"][0]["shape"] == [7, 7, 3]


def test_modality_fields_are_exact():
    env, state = make_env("mosaic/Corridor-v1", 0)
    for modality, fields in (
        ("tensor", {"modality", "shape", "data"}),
        ("text", {"modality", "text"}),
        ("image", {"modality", "image"}),
    ):
        obs = serialize_obs(env, state, "agent_0", modality)
        assert set(obs) == fields


# -- renders ------------------------------------------------------------------------------


def test_corridor_initial_ascii_golden():
    _, state = make_env("mosaic/Corridor-v1", 42)
    assert render_ascii(state) == "a...G"
    assert render_ascii(state) == (FIXTURES / "corridor_initial.ascii").read_text().rstrip("\n")


def test_render_determinism():
    _, state = make_env("mosaic/TeamTag-2vs2-v1", 0)
    assert render_ascii(state) == render_ascii(state)
    assert (render_cells(state) == render_cells(state)).all()


def test_rgb_dimensions_are_grid_times_tile():
    env, state = make_env("mosaic/TeamTag-2vs2-v1", 0)
    img = render_rgb(state)
    assert img.shape == (env.height * 16, env.width * 16, 3)
