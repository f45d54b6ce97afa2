"""Test-set construction, prompting and scoring of generated trajectories."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .mdp import GridSpec, State
from .model import TrainedModel, generate_batch
from .planning import plan_expert, plan_novice
from .rng import stream
from .traces import Vocabulary, decode_tokens, encode_trace

SAFE = "safe"
HAZARDOUS = "hazardous"
RECOVERY = "recovery"
TRIAL_KINDS = (SAFE, HAZARDOUS, RECOVERY)

NO_CUE = "no_cue"
WITH_CUE = "with_cue"
ELICITATIONS = (NO_CUE, WITH_CUE)


class InvalidGoalError(ValueError):
    pass


class InsufficientPairsError(ValueError):
    def __init__(self, kind: str, wanted: int, available: int):
        super().__init__(f"{kind}: wanted {wanted} pairs, only {available} qualify")
        self.available = available


class VocabMismatchError(ValueError):
    pass


def classify_pair(grid: GridSpec, start, goal) -> str:
    start, goal = grid.check(start), grid.check(goal)
    if goal in grid.high_cost:
        raise InvalidGoalError(f"goal {tuple(goal)} is a high-cost cell")
    if start in grid.high_cost:
        return RECOVERY
    if any(s in grid.high_cost for s in plan_novice(grid, start, goal).states):
        return HAZARDOUS
    return SAFE


def qualifying_pairs(grid: GridSpec, kind: str) -> list[tuple[State, State]]:
    """Every (start, goal) pair of ``kind`` with ``start != goal``, row-major order."""
    if kind not in TRIAL_KINDS:
        raise ValueError(f"unknown trial kind {kind!r}")
    starts = grid.high_cost_cells if kind == RECOVERY else grid.free_cells
    out = []
    for s in starts:
        for g in grid.free_cells:
            if s != g and classify_pair(grid, s, g) == kind:
                out.append((s, g))
    return out


@dataclass(frozen=True)
class TestSet:
    kind: str
    pairs: tuple[tuple[State, State], ...]
    grid_id: str = ""
    exclusion: str | None = None

    __test__ = False  # not a pytest class

    def __len__(self) -> int:
        return len(self.pairs)


def build_test_set(grid: GridSpec, kind: str, n: int, exclude=None, seed: int = 0) -> TestSet:
    """``n`` distinct pairs of ``kind`` drawn without replacement.

    ``exclude`` is a manifest (anything with ``pairs``) or a set of pairs that
    may not be used.
    """
    banned = getattr(exclude, "pairs", exclude) or frozenset()
    pool = [p for p in qualifying_pairs(grid, kind) if p not in banned]
    if len(pool) < n:
        raise InsufficientPairsError(kind, n, len(pool))
    picks = stream(seed, f"testset:{kind}").choice(len(pool), size=n, replace=False)
    pairs = tuple(pool[i] for i in sorted(int(j) for j in picks))
    tag = getattr(exclude, "digest", None) if exclude is not None else None
    return TestSet(kind, pairs, grid.digest(), tag)


def make_prompt(start, goal, elicitation: str, vocab: Vocabulary) -> list[int]:
    s, g = vocab.state_id(start), vocab.state_id(goal)
    if elicitation == NO_CUE:
        return [s, g, s]
    if elicitation == WITH_CUE:
        return [s, g, vocab.EXP, s]
    raise ValueError(f"unknown elicitation {elicitation!r}")


def generation_cap(grid: GridSpec) -> int:
    """Tokens allowed after the prompt."""
    return 2 * (grid.width + grid.height) + 16


@dataclass
class Score:
    exact: bool
    correct: bool
    reason: str = ""


def score_generation(generated, grid: GridSpec, start, goal, vocab: Vocabulary,
                     expert_core: list[int] | None = None) -> Score:
    """Exact: same states/actions/EOS as the expert encoding, indicator tokens
    ignored. Correct: legal moves only, ends at the goal, EOS emitted."""
    decoded = decode_tokens(generated, vocab)
    if expert_core is None:
        expert_core = decode_tokens(encode_trace(plan_expert(grid, start, goal), vocab).ids,
                                    vocab).core_ids(vocab)
    if decoded.start != tuple(start) or decoded.goal != tuple(goal):
        return Score(False, False, "prompt mismatch")
    if not decoded.well_formed:
        return Score(False, False, decoded.reason)
    if not decoded.ends_at_goal:
        return Score(False, False, "does not end at goal")
    if decoded.core_ids(vocab) == expert_core:
        return Score(True, True, "")
    return Score(False, True, "suboptimal path")


@dataclass
class MetricsReport:
    kind: str
    elicitation: str
    exact_match_rate: float
    correct_path_rate: float
    records: list[dict] = field(default_factory=list)

    @property
    def n_pairs(self) -> int:
        return len(self.records)

    def detail_lines(self):
        for r in self.records:
            yield json.dumps(r, separators=(",", ":")) + "\n"


def evaluate(model: TrainedModel, test_set: TestSet, elicitation: str, grid: GridSpec,
             vocab: Vocabulary | None = None, max_len: int | None = None,
             batch_size: int = 256) -> MetricsReport:
    """Prompt, greedily decode and score every pair of ``test_set``."""
    vocab = vocab or Vocabulary.for_grid(grid)
    if model.config.vocab_size != vocab.size:
        raise VocabMismatchError(
            f"model vocabulary has {model.config.vocab_size} ids, test grid needs {vocab.size}"
        )
    prompts = [make_prompt(s, g, elicitation, vocab) for s, g in test_set.pairs]
    if max_len is None:
        max_len = len(prompts[0]) + generation_cap(grid) if prompts else 0
    max_len = min(max_len, model.config.max_seq_len)
    outputs = []
    for i in range(0, len(prompts), batch_size):
        outputs.extend(generate_batch(model, prompts[i:i + batch_size], max_len, vocab.EOS))
    records = []
    n_exact = n_correct = 0
    for (s, g), out in zip(test_set.pairs, outputs):
        sc = score_generation(out, grid, s, g, vocab)
        n_exact += sc.exact
        n_correct += sc.correct
        records.append({
            "start": list(s), "goal": list(g), "kind": test_set.kind, "elicitation": elicitation,
            "generated": out, "exact": sc.exact, "correct": sc.correct, "reason": sc.reason,
        })
    n = max(len(records), 1)
    return MetricsReport(test_set.kind, elicitation, n_exact / n, n_correct / n, records)
