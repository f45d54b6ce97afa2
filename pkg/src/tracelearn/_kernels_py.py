"""Pure-Python planning kernels; same signatures as the compiled ``_kernels``.

Cells are row-major indices ``y * width + x``. Entering a cell costs 0 for the
goal, ``penalty`` for a high-cost cell, and 1 otherwise.
"""

from __future__ import annotations

import heapq

import numpy as np

# N, S, E, W
_DX = (0, 0, 1, -1)
_DY = (1, -1, 0, 0)


def cost_to_go(mask, width: int, height: int, goal: int, penalty: int) -> np.ndarray:
    """Backward Dijkstra from ``goal``; heap ties pop the lowest cell index first."""
    n = width * height
    inf = np.iinfo(np.int64).max
    dist = [inf] * n
    done = [False] * n
    dist[goal] = 0
    heap = [(0, goal)]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        # every predecessor u of v pays entry(v) to step into v
        ev = 0 if v == goal else (penalty if mask[v] else 1)
        nd = d + ev
        vx, vy = v % width, v // width
        for k in range(4):
            ux, uy = vx + _DX[k], vy + _DY[k]
            if 0 <= ux < width and 0 <= uy < height:
                u = uy * width + ux
                if not done[u] and nd < dist[u]:
                    dist[u] = nd
                    heapq.heappush(heap, (nd, u))
    return np.asarray(dist, dtype=np.int64)


def _greedy_action(ctg, mask, width, height, goal, penalty, s):
    sx, sy = s % width, s // width
    for k in range(4):
        nx, ny = sx + _DX[k], sy + _DY[k]
        if 0 <= nx < width and 0 <= ny < height:
            nxt = ny * width + nx
            enter = 0 if nxt == goal else (penalty if mask[nxt] else 1)
            if enter + ctg[nxt] == ctg[s]:
                return k, nxt
    raise RuntimeError("cost-to-go table is inconsistent")


def rollout(mask, width: int, height: int, start: int, goal: int,
            novice_ctg, expert_ctg, penalty: int, mode: int, trigger_run: int = 2):
    """Follow a cost-to-go table from ``start`` to ``goal``.

    ``mode`` 0 follows the expert table, 1 the novice table, 2 starts on the
    novice table and switches to the expert table at the first step index t
    where the last ``trigger_run`` visited states are all high-cost.

    Returns ``(states, actions, t_star)`` with ``t_star == -1`` when no switch
    happened.
    """
    states = [start]
    actions = []
    expert = mode == 0
    t_star = -1
    run = 1 if mask[start] else 0
    s = start
    while s != goal:
        if expert:
            k, s = _greedy_action(expert_ctg, mask, width, height, goal, penalty, s)
        else:
            k, s = _greedy_action(novice_ctg, mask, width, height, goal, 1, s)
        actions.append(k)
        states.append(s)
        run = run + 1 if mask[s] else 0
        if mode == 2 and not expert and run >= trigger_run:
            expert = True
            t_star = len(states) - 1
    return states, actions, t_star
