import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from tracelearn.mdp import Action, GridSpec, State, Zone, make_grid
from tracelearn.planning import plan_expert, plan_interaction, plan_novice
from tracelearn.rng import stream
from tracelearn.traces import (
    BOTH_FREE,
    NO_SOURCE,
    START_HIGH_COST,
    WITH_SOURCE,
    EmptyCellSetError,
    TaggingPolicy,
    Vocabulary,
    decode_tokens,
    encode_trace,
    sample_endpoints,
)

GRID = make_grid(10, 10, 3)
VOCAB = Vocabulary.for_grid(GRID)


def test_vocabulary_layout():
    v = Vocabulary(20, 20)
    assert v.size == 408
    assert v.state_id(State(3, 2)) == 43
    assert [v.action_id(a) for a in Action] == [400, 401, 402, 403]
    assert (v.NOV, v.EXP, v.EOS, v.PAD) == (404, 405, 406, 407)
    for i in range(v.size):
        assert sum((v.is_state(i), v.is_action(i), v.is_tag(i), i in (v.EOS, v.PAD))) == 1


def test_endpoint_constraints():
    rng = stream(0, "test")
    for _ in range(300):
        s, g = sample_endpoints(GRID, BOTH_FREE, rng)
        assert s != g and s not in GRID.high_cost and g not in GRID.high_cost
        s, g = sample_endpoints(GRID, START_HIGH_COST, rng)
        assert s in GRID.high_cost and g not in GRID.high_cost
    with pytest.raises(EmptyCellSetError):
        sample_endpoints(GridSpec(8, 8, ()), START_HIGH_COST, rng)


def test_endpoint_uniformity():
    rng = stream(1, "uniform")
    free = GRID.free_cells
    idx = {c: i for i, c in enumerate(free)}
    counts = np.zeros(len(free))
    for _ in range(10_000):
        s, _ = sample_endpoints(GRID, BOTH_FREE, rng)
        counts[idx[s]] += 1
    assert chisquare(counts).pvalue > 0.01


def test_expert_head_tag():
    traj = plan_expert(GRID, GRID.free_cells[0], GRID.free_cells[-1])
    seq = encode_trace(traj, VOCAB, TaggingPolicy(WITH_SOURCE, 1.0))
    s0, g = VOCAB.state_id(traj.start), VOCAB.state_id(traj.goal)
    assert seq.ids[:4] == (s0, g, VOCAB.EXP, s0)
    assert seq.ids[-1] == VOCAB.EOS and VOCAB.PAD not in seq.ids
    plain = encode_trace(traj, VOCAB)
    assert plain.ids[:3] == (s0, g, s0)
    assert len(plain.ids) == 2 + 2 * len(traj) + 1 + 1


def _intervened_pair(grid):
    for s in grid.free_cells:
        for g in grid.free_cells:
            it = plan_interaction(grid, s, g)
            if it.intervention_index is not None:
                return it
    raise AssertionError("no intervention on this grid")


def test_mid_tag_before_switch_state():
    it = _intervened_pair(GRID)
    seq = encode_trace(it, VOCAB, TaggingPolicy(WITH_SOURCE, 1.0))
    assert seq.ids[2] == VOCAB.NOV
    k = it.intervention_index
    body = list(seq.ids[3:])
    pos = body.index(VOCAB.EXP)
    assert pos == 2 * k
    assert body[pos + 1] == VOCAB.state_id(it.trajectory.states[k])
    dec = decode_tokens(seq.ids, VOCAB)
    assert dec.well_formed and dec.t_star == k
    assert dec.trajectory() == it.trajectory


def test_k_zero_matches_no_source():
    it = _intervened_pair(GRID)
    rng = stream(0, "k0")
    assert encode_trace(it, VOCAB, TaggingPolicy(WITH_SOURCE, 0.0), rng).ids == \
        encode_trace(it, VOCAB, TaggingPolicy(NO_SOURCE)).ids


def test_tagging_policy_validation():
    with pytest.raises(ValueError):
        TaggingPolicy("sometimes")
    with pytest.raises(ValueError):
        TaggingPolicy(WITH_SOURCE, 1.5)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 200), st.integers(0, 99), st.integers(0, 99),
       st.sampled_from(["expert", "novice", "interaction"]), st.sampled_from([0.0, 0.5, 1.0]))
def test_round_trip(seed, a, b, kind, k):
    grid = make_grid(10, 10, seed)
    s, g = grid.state_at(a), grid.state_at(b)
    traj = {"expert": plan_expert, "novice": plan_novice, "interaction": plan_interaction}[kind](grid, s, g)
    seq = encode_trace(traj, VOCAB, TaggingPolicy(WITH_SOURCE, k), stream(seed, "rt"), kind=kind)
    dec = decode_tokens(seq.ids, VOCAB)
    assert dec.well_formed and dec.ends_at_goal
    base = traj.trajectory if kind == "interaction" else traj
    assert dec.trajectory() == base
    if kind == "interaction" and seq.t_star is not None and len(seq.tags_emitted) > 1 and seq.tags_emitted[1]:
        assert dec.t_star == seq.t_star


def test_decode_reports_problems():
    traj = plan_expert(GRID, GRID.free_cells[0], GRID.free_cells[-1])
    ids = list(encode_trace(traj, VOCAB).ids)
    assert decode_tokens(ids + [999], VOCAB).reason == "unknown token id"
    assert decode_tokens(ids[:-1], VOCAB).reason == "missing EOS"
    assert decode_tokens(ids + [ids[0]], VOCAB).reason == "tokens after EOS"
    bad = ids[:3] + [VOCAB.action_id(Action.N), VOCAB.action_id(Action.N)]
    assert decode_tokens(bad, VOCAB).reason == "broken alternation"
    assert not decode_tokens([1], VOCAB).well_formed


def test_decode_off_grid():
    v = Vocabulary(8, 8)
    ids = [0, 9, 0, v.action_id(Action.W), 0, v.EOS]
    d = decode_tokens(ids, v)
    assert not d.well_formed and d.reason.startswith("illegal transition")


def test_truncated_path_not_at_goal():
    g = GridSpec(8, 8, (Zone(3, 3, 3, 3),))
    traj = plan_expert(g, State(0, 0), State(7, 7))
    short = type(traj)(traj.states[:-1], traj.actions[:-1])
    v = Vocabulary.for_grid(g)
    ids = list(encode_trace(short, v).ids)
    ids[1] = v.state_id(State(7, 7))
    d = decode_tokens(ids, v)
    assert d.well_formed and not d.ends_at_goal
