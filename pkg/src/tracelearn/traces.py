"""Token codec for traces, plus start/goal sampling.

A stored trace reads ``[s0][g] [TAG]? s0 a0 s1 ... [TAG]? s_t* ... g [EOS]``.
The body alternates states and actions. An indicator token may only appear
immediately before a state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import ACTIONS, Action, GridSpec, State
from .planning import EXPERT, NOVICE, InteractionTrajectory, Trajectory

BOTH_FREE = "both_free"
START_HIGH_COST = "start_high_cost"

NO_SOURCE = "no_source"
WITH_SOURCE = "with_source"

KIND_EXPERT = "expert"
KIND_INTERACTION = "interaction"
KIND_NOVICE = "novice"
KINDS = (KIND_EXPERT, KIND_INTERACTION, KIND_NOVICE)


class EmptyCellSetError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    width: int
    height: int

    @property
    def n_states(self) -> int:
        return self.width * self.height

    @property
    def NOV(self) -> int:
        return self.n_states + 4

    @property
    def EXP(self) -> int:
        return self.n_states + 5

    @property
    def EOS(self) -> int:
        return self.n_states + 6

    @property
    def PAD(self) -> int:
        return self.n_states + 7

    @property
    def size(self) -> int:
        return self.n_states + 8

    def state_id(self, s) -> int:
        x, y = s
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(f"state {tuple(s)} outside vocabulary grid")
        return y * self.width + x

    def action_id(self, a) -> int:
        return self.n_states + int(Action(a))

    def tag_id(self, source: str) -> int:
        return self.EXP if source == EXPERT else self.NOV

    def is_state(self, i: int) -> bool:
        return 0 <= i < self.n_states

    def is_action(self, i: int) -> bool:
        return self.n_states <= i < self.n_states + 4

    def is_tag(self, i: int) -> bool:
        return i == self.NOV or i == self.EXP

    def state(self, i: int) -> State:
        return State(i % self.width, i // self.width)

    def action(self, i: int) -> Action:
        return ACTIONS[i - self.n_states]

    def symbol(self, i: int) -> str:
        if self.is_state(i):
            return "({},{})".format(*self.state(i))
        if self.is_action(i):
            return self.action(i).name
        return {self.NOV: "NOV", self.EXP: "EXP", self.EOS: "EOS", self.PAD: "PAD"}.get(i, f"<{i}>")

    def render(self, ids) -> str:
        return " ".join(self.symbol(int(i)) for i in ids)

    @classmethod
    def for_grid(cls, grid: GridSpec) -> "Vocabulary":
        return cls(grid.width, grid.height)


@dataclass(frozen=True)
class TaggingPolicy:
    mode: str = NO_SOURCE
    k: float = 1.0

    def __post_init__(self):
        if self.mode not in (NO_SOURCE, WITH_SOURCE):
            raise ValueError(f"unknown tagging mode {self.mode!r}")
        if not 0.0 <= self.k <= 1.0:
            raise ValueError(f"tag keep probability must lie in [0, 1], got {self.k}")

    @property
    def tagged(self) -> bool:
        return self.mode == WITH_SOURCE


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    kind: str
    start: State
    goal: State
    t_star: int | None = None
    tags_emitted: tuple[bool, ...] = ()
    grid_id: str = ""

    def __len__(self) -> int:
        return len(self.ids)

    def to_json(self) -> dict:
        return {
            "ids": list(self.ids),
            "kind": self.kind,
            "start": list(self.start),
            "goal": list(self.goal),
            "t_star": self.t_star,
            "tags_emitted": list(self.tags_emitted),
        }

    @classmethod
    def from_json(cls, obj: dict, grid_id: str = "") -> "TokenSequence":
        return cls(
            tuple(obj["ids"]), obj["kind"], State(*obj["start"]), State(*obj["goal"]),
            obj["t_star"], tuple(obj["tags_emitted"]), grid_id,
        )


def sample_endpoints(grid: GridSpec, constraint: str, rng: np.random.Generator) -> tuple[State, State]:
    """Uniform start and goal with ``start != goal``; goals are never high-cost."""
    free = grid.free_cells
    if constraint == BOTH_FREE:
        starts = free
    elif constraint == START_HIGH_COST:
        starts = grid.high_cost_cells
    else:
        raise ValueError(f"unknown endpoint constraint {constraint!r}")
    if not starts:
        raise EmptyCellSetError(f"no cells available for constraint {constraint!r}")
    if constraint == BOTH_FREE and len(free) < 2:
        raise EmptyCellSetError("need at least two free cells")
    while True:
        s = starts[int(rng.integers(len(starts)))]
        g = free[int(rng.integers(len(free)))]
        if s != g:
            return s, g


def mid_tag_position(t_star: int) -> int:
    """Body offset of the corrective indicator: right before state ``s_t*``."""
    return 2 * t_star


def encode_trace(traj, vocab: Vocabulary, tagging: TaggingPolicy = TaggingPolicy(),
                 rng: np.random.Generator | None = None, kind: str | None = None,
                 grid_id: str = "") -> TokenSequence:
    """Serialise a trajectory.

    ``kind`` defaults to ``interaction`` for an :class:`InteractionTrajectory`
    and ``expert`` for a bare :class:`Trajectory`; pass ``novice`` for
    novice-only traces. With source tags, the head indicator is EXP for expert
    traces and NOV otherwise; an intervention adds EXP before ``s_t*``. Each
    indicator is kept independently with probability ``tagging.k``.
    """
    if isinstance(traj, InteractionTrajectory):
        t_star = traj.intervention_index
        traj = traj.trajectory
        kind = kind or KIND_INTERACTION
    else:
        t_star = None
        kind = kind or KIND_EXPERT
    if kind not in KINDS:
        raise ValueError(f"unknown trace kind {kind!r}")

    body = []
    for s, a in zip(traj.states, traj.actions):
        body.append(vocab.state_id(s))
        body.append(vocab.action_id(a))
    body.append(vocab.state_id(traj.states[-1]))

    emitted: list[bool] = []
    if tagging.tagged:
        if rng is None and tagging.k not in (0.0, 1.0):
            raise ValueError("an rng is required when 0 < k < 1")
        inserts = [(0, vocab.EXP if kind == KIND_EXPERT else vocab.NOV)]
        if t_star is not None:
            inserts.append((mid_tag_position(t_star), vocab.EXP))
        for _ in inserts:
            emitted.append(tagging.k == 1.0 if rng is None else bool(rng.random() < tagging.k))
        # insert back to front so earlier offsets stay valid
        for (pos, tag), keep in reversed(list(zip(inserts, emitted))):
            if keep:
                body.insert(pos, tag)

    ids = (vocab.state_id(traj.start), vocab.state_id(traj.goal), *body, vocab.EOS)
    return TokenSequence(ids, kind, traj.start, traj.goal, t_star, tuple(emitted), grid_id)


@dataclass
class DecodedTrace:
    """Parse result. ``reason`` is empty when the sequence is well formed."""

    start: State | None = None
    goal: State | None = None
    states: list[State] = field(default_factory=list)
    actions: list[Action] = field(default_factory=list)
    tags: list[tuple[int, int]] = field(default_factory=list)  # (state index, tag id)
    eos: bool = False
    well_formed: bool = False
    ends_at_goal: bool = False
    reason: str = ""

    def trajectory(self) -> Trajectory:
        return Trajectory(tuple(self.states), tuple(self.actions))

    @property
    def t_star(self) -> int | None:
        mids = [i for i, tag in self.tags if i > 0]
        return mids[0] if mids else None

    def core_ids(self, vocab: Vocabulary) -> list[int]:
        """Body states/actions followed by EOS, indicator tokens removed."""
        out = []
        for i, s in enumerate(self.states):
            out.append(vocab.state_id(s))
            if i < len(self.actions):
                out.append(vocab.action_id(self.actions[i]))
        if self.eos:
            out.append(vocab.EOS)
        return out


def decode_tokens(ids, vocab: Vocabulary, max_len: int | None = None) -> DecodedTrace:
    """Parse and validate a token sequence; never raises on bad input."""
    ids = [int(i) for i in ids]
    if max_len is not None:
        ids = ids[:max_len]
    out = DecodedTrace()

    def fail(reason):
        out.reason = reason
        out.well_formed = False
        out.ends_at_goal = bool(out.states) and out.states[-1] == out.goal
        return out

    for i in ids:
        if not 0 <= i < vocab.size:
            return fail("unknown token id")
    if len(ids) < 2 or not (vocab.is_state(ids[0]) and vocab.is_state(ids[1])):
        return fail("malformed prompt")
    out.start, out.goal = vocab.state(ids[0]), vocab.state(ids[1])

    pos = 2
    n = len(ids)
    pending_tag = None
    expect_state = True
    while pos < n:
        tok = ids[pos]
        pos += 1
        if expect_state:
            if vocab.is_tag(tok):
                if pending_tag is not None:
                    return fail("broken alternation")
                pending_tag = tok
                continue
            if not vocab.is_state(tok):
                return fail("broken alternation")
            s = vocab.state(tok)
            if not out.states:
                if s != out.start:
                    return fail("path does not begin at start")
            else:
                prev = out.states[-1]
                dx, dy = out.actions[-1].delta
                nxt = (prev.x + dx, prev.y + dy)
                if not (0 <= nxt[0] < vocab.width and 0 <= nxt[1] < vocab.height):
                    return fail("illegal transition: off grid")
                if s != nxt:
                    return fail("illegal transition")
            if pending_tag is not None:
                out.tags.append((len(out.states), pending_tag))
                pending_tag = None
            out.states.append(s)
            expect_state = False
        else:
            if tok == vocab.EOS:
                out.eos = True
                break
            if not vocab.is_action(tok):
                return fail("broken alternation")
            out.actions.append(vocab.action(tok))
            expect_state = True

    if not out.eos:
        if expect_state and out.actions:
            # a trailing action that would leave the grid is the more useful report
            prev = out.states[-1]
            dx, dy = out.actions[-1].delta
            if not (0 <= prev.x + dx < vocab.width and 0 <= prev.y + dy < vocab.height):
                return fail("illegal transition: off grid")
        return fail("missing EOS")
    if any(t != vocab.PAD for t in ids[pos:]):
        return fail("tokens after EOS")
    out.well_formed = True
    out.ends_at_goal = out.states[-1] == out.goal
    return out
