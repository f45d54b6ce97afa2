"""Grid-world trace synthesis, a small numpy transformer, and the studies that tie them together."""

from .kernels import BACKEND
from .mdp import Action, GridSpec, State, make_grid
from .planning import plan_expert, plan_interaction, plan_novice
from .traces import TaggingPolicy, Vocabulary, decode_tokens, encode_trace

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Action", "GridSpec", "State", "make_grid", "plan_expert", "plan_interaction",
    "plan_novice", "TaggingPolicy", "Vocabulary", "decode_tokens", "encode_trace", "__version__",
]
