"""Expert, novice and interaction planners, plus an independent cost oracle.

Reward maximisation on a goal-reaching path is the same as minimising the
total cost of cells entered: 1 for a free cell, 20 for a high-cost cell, 0 for
the goal. Planners compute a cost-to-go table backwards from the goal and then
walk it, taking the first optimal move in N, S, E, W order. Because the
tie-break is a function of (cell, goal) only, the expert's plan from any cell
on its own path is the suffix of that path.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .mdp import ACTIONS, HIGH_COST_REWARD, STEP_REWARD, Action, GridSpec, State

ENTRY_COST_FREE = -STEP_REWARD
ENTRY_COST_HIGH = -HIGH_COST_REWARD

# Intervention fires once this many consecutive visited states are high-cost.
TRIGGER_RUN = 2

NOVICE = "novice"
EXPERT = "expert"


@dataclass(frozen=True)
class Trajectory:
    states: tuple[State, ...]
    actions: tuple[Action, ...]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a trajectory has exactly one more state than actions")

    @property
    def start(self) -> State:
        return self.states[0]

    @property
    def goal(self) -> State:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class InteractionTrajectory:
    trajectory: Trajectory
    intervention_index: int | None = None

    @property
    def source_per_action(self) -> tuple[str, ...]:
        t = self.intervention_index
        n = len(self.trajectory.actions)
        if t is None:
            return (NOVICE,) * n
        return (NOVICE,) * t + (EXPERT,) * (n - t)


@lru_cache(maxsize=4096)
def _table(grid: GridSpec, goal_index: int, penalty: int) -> np.ndarray:
    return kernels.cost_to_go(grid.mask, grid.width, grid.height, goal_index, penalty)


def _walk(grid: GridSpec, start, goal, mode: int) -> tuple[Trajectory, int]:
    start, goal = grid.check(start), grid.check(goal)
    g = grid.index(goal)
    novice = _table(grid, g, ENTRY_COST_FREE)
    expert = _table(grid, g, ENTRY_COST_HIGH) if mode != 1 else novice
    idx, acts, t_star = kernels.rollout(
        grid.mask, grid.width, grid.height, grid.index(start), g,
        novice, expert, ENTRY_COST_HIGH, mode, TRIGGER_RUN,
    )
    w = grid.width
    traj = Trajectory(tuple(State(i % w, i // w) for i in idx), tuple(ACTIONS[k] for k in acts))
    return traj, t_star


def plan_expert(grid: GridSpec, start, goal) -> Trajectory:
    return _walk(grid, start, goal, 0)[0]


def plan_novice(grid: GridSpec, start, goal) -> Trajectory:
    """Manhattan-shortest path that ignores high-cost cells."""
    return _walk(grid, start, goal, 1)[0]


def plan_interaction(grid: GridSpec, start, goal) -> InteractionTrajectory:
    """Novice control until it has sat in high-cost cells twice in a row.

    From that state on, the expert plan recomputed from there is followed. If
    the novice never triggers the rule its path is returned unchanged.
    """
    traj, t_star = _walk(grid, start, goal, 2)
    return InteractionTrajectory(traj, None if t_star < 0 else t_star)


def intervention_point(grid: GridSpec, states) -> int | None:
    """First index whose last ``TRIGGER_RUN`` states are all high-cost."""
    run = 0
    for t, s in enumerate(states):
        run = run + 1 if s in grid.high_cost else 0
        if run >= TRIGGER_RUN:
            return t
    return None


def entry_cost(grid: GridSpec, s, goal) -> int:
    # the goal is charged like a free cell; every goal-reaching path pays it once
    if tuple(s) == tuple(goal):
        return ENTRY_COST_FREE
    return ENTRY_COST_HIGH if tuple(s) in grid.high_cost else ENTRY_COST_FREE


def path_cost(grid: GridSpec, traj: Trajectory) -> int:
    return sum(entry_cost(grid, s, traj.goal) for s in traj.states[1:])


def total_reward(grid: GridSpec, traj: Trajectory) -> int:
    from .mdp import RewardParams, reward

    params = RewardParams(grid, traj.goal)
    return sum(reward(params, s) for s in traj.states[1:])


def oracle_optimal_cost(grid: GridSpec, start, goal) -> int:
    """Minimal entry cost by forward FIFO label correction (Bellman-Ford style).

    Shares no code with the planners; used only to check them.
    """
    start, goal = grid.check(start), grid.check(goal)
    best = {start: 0}
    queue = deque([start])
    queued = {start}
    while queue:
        s = queue.popleft()
        queued.discard(s)
        for dx, dy in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            n = State(s.x + dx, s.y + dy)
            if not (0 <= n.x < grid.width and 0 <= n.y < grid.height):
                continue
            if n == goal:
                c = 1
            elif n in grid.high_cost:
                c = 20
            else:
                c = 1
            cand = best[s] + c
            if cand < best.get(n, 1 << 60):
                best[n] = cand
                if n not in queued:
                    queue.append(n)
                    queued.add(n)
    return best[goal]
