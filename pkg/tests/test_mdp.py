import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from tracelearn.mdp import (
    ACTIONS,
    Action,
    DimensionError,
    GridSpec,
    OutOfBoundsError,
    RewardParams,
    State,
    Zone,
    legal_actions,
    load_grid,
    make_grid,
    reward,
    save_grid,
    step,
)


def test_action_displacements():
    assert [a.delta for a in ACTIONS] == [(0, 1), (0, -1), (1, 0), (-1, 0)]
    assert len(Action) == 4
    for a in ACTIONS:
        assert a.opposite.opposite == a


def test_make_grid_zone_bounds():
    for seed in range(50):
        g = make_grid(20, 20, seed)
        assert 1 <= len(g.zones) <= 4
        for z in g.zones:
            assert 3 <= z.n_cols <= 6 and 3 <= z.n_rows <= 6
        assert len(g.high_cost) <= 144
        assert g.free_cells


def test_make_grid_deterministic():
    assert make_grid(20, 20, 42) == make_grid(20, 20, 42)
    assert make_grid(20, 20, 42).digest() == make_grid(20, 20, 42).digest()


def test_make_grid_too_small():
    with pytest.raises(DimensionError):
        make_grid(6, 20, 0)
    with pytest.raises(DimensionError):
        make_grid(20, 5, 0)


def test_zone_count_uniform():
    counts = np.bincount([len(make_grid(20, 20, s).zones) for s in range(1000)], minlength=5)[1:]
    assert chisquare(counts).pvalue > 0.01


def test_zone_side_uniform():
    sides = [z.n_cols for s in range(400) for z in make_grid(20, 20, s).zones]
    counts = np.bincount(sides, minlength=7)[3:]
    assert chisquare(counts).pvalue > 0.01


def test_high_cost_is_union():
    g = GridSpec(10, 10, (Zone(0, 0, 3, 3), Zone(2, 2, 3, 3)))
    assert len(g.high_cost) == 9 + 9 - 1
    with pytest.raises(ValueError):
        GridSpec(10, 10, (Zone(0, 0, 3, 3),), frozenset({State(0, 0)}))
    with pytest.raises(OutOfBoundsError):
        GridSpec(10, 10, (Zone(8, 0, 3, 3),))
    with pytest.raises(ValueError):
        GridSpec(7, 7, (Zone(0, 0, 7, 7),))


def test_reward_cases(wall_grid):
    params = RewardParams(wall_grid, State(4, 3))
    assert reward(params, State(4, 3)) == 100  # goal wins over H
    assert reward(params, State(3, 2)) == -20
    assert reward(params, State(0, 0)) == -1
    with pytest.raises(OutOfBoundsError):
        reward(params, State(8, 0))


def test_step_examples():
    g = GridSpec(20, 20, ())
    assert step(g, State(5, 5), Action.N) == State(5, 6)
    assert step(g, State(0, 3), Action.W) is None
    assert step(g, State(19, 19), Action.E) is None
    with pytest.raises(OutOfBoundsError):
        step(g, State(-1, 0), Action.N)


def test_legal_actions_order():
    g = GridSpec(20, 20, ())
    assert legal_actions(g, State(5, 5)) == [Action.N, Action.S, Action.E, Action.W]
    assert legal_actions(g, State(0, 0)) == [Action.N, Action.E]
    assert legal_actions(g, State(0, 5)) == [Action.N, Action.S, Action.E]


@given(st.integers(0, 9), st.integers(0, 9), st.sampled_from(ACTIONS))
def test_step_inverse(x, y, a):
    g = GridSpec(10, 10, ())
    nxt = step(g, State(x, y), a)
    if nxt is not None:
        assert g.in_bounds(nxt)
        assert step(g, nxt, a.opposite) == State(x, y)


def test_grid_json_round_trip(tmp_path):
    g = make_grid(12, 9, 7)
    path = tmp_path / "g.json"
    save_grid(g, path)
    obj = json.loads(path.read_text())
    assert set(obj) == {"width", "height", "seed", "zones", "high_cost"}
    # row-major order for byte-stable output
    assert obj["high_cost"] == sorted(obj["high_cost"], key=lambda c: (c[1], c[0]))
    assert load_grid(path) == g
    save_grid(load_grid(path), tmp_path / "g2.json")
    assert (tmp_path / "g2.json").read_bytes() == path.read_bytes()


def test_render_orientation():
    g = GridSpec(7, 7, (Zone(0, 0, 3, 3),))
    rows = g.render().splitlines()
    assert rows[-1].startswith("###")  # origin is bottom-left
    assert rows[0] == "......."
