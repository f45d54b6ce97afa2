import pytest

from tracelearn.evaluation import (
    HAZARDOUS,
    NO_CUE,
    RECOVERY,
    SAFE,
    WITH_CUE,
    InsufficientPairsError,
    InvalidGoalError,
    VocabMismatchError,
    build_test_set,
    classify_pair,
    evaluate,
    make_prompt,
    qualifying_pairs,
    score_generation,
)
from tracelearn.datasets import DatasetSpec, build_dataset
from tracelearn.mdp import Action, GridSpec, State, Zone, make_grid
from tracelearn.model import ModelConfig, init_model
from tracelearn.planning import plan_expert, plan_interaction, plan_novice
from tracelearn.traces import TaggingPolicy, Vocabulary, WITH_SOURCE, encode_trace

GRID = make_grid(10, 10, 1)
VOCAB = Vocabulary.for_grid(GRID)


def test_classification_matches_definitions():
    for kind in (SAFE, HAZARDOUS, RECOVERY):
        for s, g in qualifying_pairs(GRID, kind)[:200]:
            assert g not in GRID.high_cost and s != g
            novice_hits = any(c in GRID.high_cost for c in plan_novice(GRID, s, g).states)
            if kind == SAFE:
                assert s not in GRID.high_cost and not novice_hits
                assert plan_expert(GRID, s, g) == plan_interaction(GRID, s, g).trajectory
            elif kind == HAZARDOUS:
                assert s not in GRID.high_cost and novice_hits
            else:
                assert s in GRID.high_cost


def test_goal_in_h_rejected():
    with pytest.raises(InvalidGoalError):
        classify_pair(GRID, GRID.free_cells[0], GRID.high_cost_cells[0])


def test_test_set_sampling():
    a = build_test_set(GRID, HAZARDOUS, 50, seed=3)
    assert a == build_test_set(GRID, HAZARDOUS, 50, seed=3)
    assert len(set(a.pairs)) == 50
    with pytest.raises(InsufficientPairsError) as err:
        build_test_set(GridSpec(8, 8, ()), HAZARDOUS, 5)
    assert err.value.available == 0


def test_exclusion_from_manifest():
    _, man = build_dataset(DatasetSpec(GRID, 3000, 0.5, seed=2))
    t = build_test_set(GRID, SAFE, 64, exclude=man, seed=1)
    assert not any(man.has_pair(s, g) for s, g in t.pairs)


def test_prompts():
    s, g = State(1, 2), State(3, 4)
    assert make_prompt(s, g, NO_CUE, VOCAB) == [21, 43, 21]
    assert make_prompt(s, g, WITH_CUE, VOCAB) == [21, 43, VOCAB.EXP, 21]


def test_scoring_rules():
    s, g = qualifying_pairs(GRID, HAZARDOUS)[0]
    expert = list(encode_trace(plan_expert(GRID, s, g), VOCAB).ids)
    assert score_generation(expert, GRID, s, g, VOCAB).exact
    tagged = list(encode_trace(plan_expert(GRID, s, g), VOCAB, TaggingPolicy(WITH_SOURCE, 1.0)).ids)
    assert score_generation(tagged, GRID, s, g, VOCAB).exact  # indicators ignored
    novice = list(encode_trace(plan_novice(GRID, s, g), VOCAB).ids)
    sc = score_generation(novice, GRID, s, g, VOCAB)
    assert sc.correct and not sc.exact
    assert not score_generation(expert[:-1], GRID, s, g, VOCAB).correct


def test_goal_revisit_is_still_correct_but_not_exact():
    # a legal detour that passes the goal and comes back
    grid = GridSpec(8, 8, ())
    v = Vocabulary.for_grid(grid)
    s, g = State(0, 0), State(1, 0)
    ids = [v.state_id(s), v.state_id(g), v.state_id(s), v.action_id(Action.N), v.state_id(State(0, 1)),
           v.action_id(Action.E), v.state_id(State(1, 1)), v.action_id(Action.S), v.state_id(g), v.EOS]
    sc = score_generation(ids, grid, s, g, v)
    assert sc.correct and not sc.exact


def test_evaluate_plumbing():
    model = init_model(ModelConfig(VOCAB.size, 16, 1, 2, 64), pad_id=VOCAB.PAD, eos_id=VOCAB.EOS)
    t = build_test_set(GRID, RECOVERY, 8, seed=0)
    rep = evaluate(model, t, NO_CUE, GRID)
    assert rep.n_pairs == 8 and rep.exact_match_rate <= rep.correct_path_rate
    assert all(r["kind"] == RECOVERY for r in rep.records)
    small = init_model(ModelConfig(30, 16, 1, 2, 64))
    with pytest.raises(VocabMismatchError):
        evaluate(small, t, NO_CUE, GRID)
