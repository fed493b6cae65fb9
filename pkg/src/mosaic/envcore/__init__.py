from .actions import ActionSpace
from .envs import CorridorEnv, Env, EnvError, TeamTagEnv
from .observe import ObservationError, obs_digest, serialize_obs
from .registry import UnknownTaskError, get_env, make_env, task_ids
from .render import render_ascii, render_cells, render_rgb
from .rng import derive_seed
from .state import EnvState, StateCodecError, Transition, decode_state, encode_state

__all__ = [
    "ActionSpace",
    "CorridorEnv",
    "Env",
    "EnvError",
    "TeamTagEnv",
    "ObservationError",
    "obs_digest",
    "serialize_obs",
    "UnknownTaskError",
    "get_env",
    "make_env",
    "task_ids",
    "render_ascii",
    "render_cells",
    "render_rgb",
    "derive_seed",
    "EnvState",
    "StateCodecError",
    "Transition",
    "decode_state",
    "encode_state",
]
