"""Grid-world MDP: cells, cardinal moves, deterministic transitions, reward.

Coordinates put the origin at the bottom-left corner; ``N`` increases ``y``.
Moves that would leave the grid are illegal rather than self-loops.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .rng import stream

GOAL_REWARD = 100
HIGH_COST_REWARD = -20
STEP_REWARD = -1

MIN_SIDE = 7
ZONE_MIN, ZONE_MAX = 3, 6
MAX_ZONES = 4


class DimensionError(ValueError):
    pass


class OutOfBoundsError(ValueError):
    pass


class State(NamedTuple):
    x: int
    y: int


class Action(enum.IntEnum):
    N = 0
    S = 1
    E = 2
    W = 3

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]

    @property
    def opposite(self) -> "Action":
        return _OPPOSITE[self]


_DELTAS = {Action.N: (0, 1), Action.S: (0, -1), Action.E: (1, 0), Action.W: (-1, 0)}
_OPPOSITE = {Action.N: Action.S, Action.S: Action.N, Action.E: Action.W, Action.W: Action.E}
ACTIONS = (Action.N, Action.S, Action.E, Action.W)


class Zone(NamedTuple):
    x0: int
    y0: int
    n_cols: int
    n_rows: int

    def cells(self):
        for y in range(self.y0, self.y0 + self.n_rows):
            for x in range(self.x0, self.x0 + self.n_cols):
                yield State(x, y)


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    zones: tuple[Zone, ...]
    high_cost: frozenset[State] = field(default=None)  # derived when omitted
    seed: int = 0

    def __post_init__(self):
        zones = tuple(Zone(*z) for z in self.zones)
        object.__setattr__(self, "zones", zones)
        for z in zones:
            if z.x0 < 0 or z.y0 < 0 or z.x0 + z.n_cols > self.width or z.y0 + z.n_rows > self.height:
                raise OutOfBoundsError(f"zone {tuple(z)} exceeds {self.width}x{self.height} grid")
        union = frozenset(c for z in zones for c in z.cells())
        if self.high_cost is None:
            object.__setattr__(self, "high_cost", union)
        elif frozenset(State(*c) for c in self.high_cost) != union:
            raise ValueError("high_cost must equal the union of zone cells")
        else:
            object.__setattr__(self, "high_cost", union)
        if len(union) >= self.width * self.height:
            raise ValueError("grid has no free cell")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def in_bounds(self, s) -> bool:
        return 0 <= s[0] < self.width and 0 <= s[1] < self.height

    def check(self, s) -> State:
        if not self.in_bounds(s):
            raise OutOfBoundsError(f"state {tuple(s)} outside {self.width}x{self.height} grid")
        return State(int(s[0]), int(s[1]))

    def index(self, s) -> int:
        return s[1] * self.width + s[0]

    def state_at(self, index: int) -> State:
        return State(index % self.width, index // self.width)

    @cached_property
    def mask(self) -> np.ndarray:
        """Row-major uint8 array, 1 where the cell is high-cost."""
        m = np.zeros(self.n_cells, dtype=np.uint8)
        for c in self.high_cost:
            m[self.index(c)] = 1
        return m

    @cached_property
    def free_cells(self) -> tuple[State, ...]:
        return tuple(self.state_at(i) for i in range(self.n_cells) if not self.mask[i])

    @cached_property
    def high_cost_cells(self) -> tuple[State, ...]:
        return tuple(self.state_at(i) for i in range(self.n_cells) if self.mask[i])

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "zones": [z._asdict() for z in self.zones],
            "high_cost": [list(c) for c in self.high_cost_cells],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GridSpec":
        zones = tuple(Zone(z["x0"], z["y0"], z["n_cols"], z["n_rows"]) for z in obj["zones"])
        hc = frozenset(State(*c) for c in obj["high_cost"])
        return cls(obj["width"], obj["height"], zones, hc, obj.get("seed", 0))

    def digest(self) -> str:
        return self._digest

    @cached_property
    def _digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]

    def render(self) -> str:
        rows = []
        for y in reversed(range(self.height)):
            rows.append("".join("#" if State(x, y) in self.high_cost else "." for x in range(self.width)))
        return "\n".join(rows)


@dataclass(frozen=True)
class RewardParams:
    grid: GridSpec
    goal: State

    def __post_init__(self):
        object.__setattr__(self, "goal", self.grid.check(self.goal))


def make_grid(width: int, height: int, seed: int) -> GridSpec:
    """Sample 1-4 rectangular high-cost zones, each 3..6 cells per side.

    Zone positions are uniform over placements fully inside the grid. A draw
    that covers every cell is rejected and redrawn from the same stream.
    """
    if width < MIN_SIDE or height < MIN_SIDE:
        raise DimensionError(f"grid must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}")
    rng = stream(seed, "grid")
    while True:
        n = int(rng.integers(1, MAX_ZONES + 1))
        zones = []
        for _ in range(n):
            n_rows = int(rng.integers(ZONE_MIN, ZONE_MAX + 1))
            n_cols = int(rng.integers(ZONE_MIN, ZONE_MAX + 1))
            x0 = int(rng.integers(0, width - n_cols + 1))
            y0 = int(rng.integers(0, height - n_rows + 1))
            zones.append(Zone(x0, y0, n_cols, n_rows))
        covered = {c for z in zones for c in z.cells()}
        if len(covered) < width * height:
            return GridSpec(width, height, tuple(zones), seed=seed)


def reward(params: RewardParams, s) -> int:
    s = params.grid.check(s)
    if s == params.goal:
        return GOAL_REWARD
    if s in params.grid.high_cost:
        return HIGH_COST_REWARD
    return STEP_REWARD


def step(grid: GridSpec, s, a: Action) -> State | None:
    """Deterministic transition; ``None`` marks a move off the grid."""
    s = grid.check(s)
    dx, dy = Action(a).delta
    nxt = State(s.x + dx, s.y + dy)
    return nxt if grid.in_bounds(nxt) else None


def legal_actions(grid: GridSpec, s) -> list[Action]:
    return [a for a in ACTIONS if step(grid, s, a) is not None]


def save_grid(grid: GridSpec, path) -> None:
    Path(path).write_text(json.dumps(grid.to_json()) + "\n", encoding="utf-8")


def load_grid(path) -> GridSpec:
    return GridSpec.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
