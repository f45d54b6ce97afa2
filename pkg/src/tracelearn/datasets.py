"""Dataset composition: expert / interaction / novice mixtures and token budgets."""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .mdp import GridSpec, State
from .planning import plan_expert, plan_interaction, plan_novice
from .rng import stream
from .traces import (
    BOTH_FREE,
    KIND_EXPERT,
    KIND_INTERACTION,
    KIND_NOVICE,
    KINDS,
    TaggingPolicy,
    TokenSequence,
    Vocabulary,
    encode_trace,
    sample_endpoints,
)

FRACTION_GRID = (0.0, 0.005, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0)


class BudgetInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    grid: GridSpec
    total_traces: int
    fraction_expert: float
    remainder_kind: str = KIND_INTERACTION
    tagging: TaggingPolicy = TaggingPolicy()
    token_budget: int | None = None
    seed: int = 0
    # (start, goal) pairs that may never be drawn, e.g. reserved test pairs
    exclude_pairs: frozenset = frozenset()

    def __post_init__(self):
        if not 0.0 <= self.fraction_expert <= 1.0:
            raise ValueError(f"fraction_expert must lie in [0, 1], got {self.fraction_expert}")
        if self.total_traces < 0:
            raise ValueError("total_traces must be non-negative")
        if self.remainder_kind not in (KIND_INTERACTION, KIND_NOVICE):
            raise ValueError(f"remainder_kind must be interaction or novice, got {self.remainder_kind!r}")
        if self.token_budget is not None and self.token_budget < 0:
            raise ValueError("token_budget must be non-negative")

    @property
    def n_expert(self) -> int:
        return int(math.floor(self.total_traces * self.fraction_expert + 0.5))

    def describe(self) -> dict:
        return {
            "grid": self.grid.digest(),
            "total_traces": self.total_traces,
            "fraction_expert": self.fraction_expert,
            "remainder_kind": self.remainder_kind,
            "tagging": {"mode": self.tagging.mode, "k": self.tagging.k},
            "token_budget": self.token_budget,
            "seed": self.seed,
            "n_excluded_pairs": len(self.exclude_pairs),
        }


@dataclass
class DatasetManifest:
    counts: dict[str, int]
    total_tokens: int
    mean_length: dict[str, float]
    pairs: frozenset
    tag_positions: int
    tags_emitted: int
    seed: int
    vocab: dict
    spec: dict = field(default_factory=dict)
    digest: str = ""
    max_length: int = 0

    @property
    def n_traces(self) -> int:
        return sum(self.counts.values())

    def has_pair(self, start, goal) -> bool:
        return (tuple(start), tuple(goal)) in self.pairs

    def to_json(self) -> dict:
        return {
            "counts": self.counts,
            "n_traces": self.n_traces,
            "total_tokens": self.total_tokens,
            "mean_length": self.mean_length,
            "tag_positions": self.tag_positions,
            "tags_emitted": self.tags_emitted,
            "seed": self.seed,
            "vocab": self.vocab,
            "spec": self.spec,
            "digest": self.digest,
            "max_length": self.max_length,
            "pairs": sorted([*s, *g] for s, g in self.pairs),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        pairs = frozenset((State(p[0], p[1]), State(p[2], p[3])) for p in obj["pairs"])
        return cls(
            obj["counts"], obj["total_tokens"], obj["mean_length"], pairs,
            obj["tag_positions"], obj["tags_emitted"], obj["seed"], obj["vocab"],
            obj.get("spec", {}), obj.get("digest", ""), obj.get("max_length", 0),
        )


def make_trace(grid: GridSpec, kind: str, vocab: Vocabulary, tagging: TaggingPolicy,
               seed: int, index: int, exclude=frozenset()) -> TokenSequence:
    """Trace ``index`` of a dataset; depends only on (seed, index, kind)."""
    rng = stream(seed, "trace", index)
    while True:
        start, goal = sample_endpoints(grid, BOTH_FREE, rng)
        if (start, goal) not in exclude:
            break
    if kind == KIND_EXPERT:
        traj = plan_expert(grid, start, goal)
    elif kind == KIND_INTERACTION:
        traj = plan_interaction(grid, start, goal)
    elif kind == KIND_NOVICE:
        traj = plan_novice(grid, start, goal)
    else:
        raise ValueError(f"unknown trace kind {kind!r}")
    return encode_trace(traj, vocab, tagging, rng, kind=kind, grid_id=grid.digest())


def _manifest(traces, spec: DatasetSpec, vocab: Vocabulary) -> DatasetManifest:
    counts = Counter(t.kind for t in traces)
    lengths = Counter()
    for t in traces:
        lengths[t.kind] += len(t.ids)
    return DatasetManifest(
        counts={k: counts.get(k, 0) for k in KINDS},
        total_tokens=sum(lengths.values()),
        mean_length={k: (lengths[k] / counts[k] if counts[k] else 0.0) for k in KINDS},
        pairs=frozenset((t.start, t.goal) for t in traces),
        tag_positions=sum(len(t.tags_emitted) for t in traces),
        tags_emitted=sum(sum(t.tags_emitted) for t in traces),
        seed=spec.seed,
        vocab={"width": vocab.width, "height": vocab.height, "size": vocab.size},
        spec=spec.describe(),
        digest=dataset_digest(traces),
        max_length=max((len(t.ids) for t in traces), default=0),
    )


def build_dataset(spec: DatasetSpec, vocab: Vocabulary | None = None):
    """Generate the composition described by ``spec``.

    Expert traces occupy indices ``0..n_expert-1`` before the shuffle, so two
    specs that differ only in the remainder share their expert traces.
    Returns ``(traces, manifest)``.
    """
    vocab = vocab or Vocabulary.for_grid(spec.grid)
    if not spec.grid.free_cells:
        raise ValueError("grid has no free cells")
    n_exp = spec.n_expert
    traces = [
        make_trace(spec.grid, KIND_EXPERT, vocab, spec.tagging, spec.seed, i, spec.exclude_pairs)
        for i in range(n_exp)
    ]
    if spec.token_budget is None:
        for i in range(n_exp, spec.total_traces):
            traces.append(make_trace(spec.grid, spec.remainder_kind, vocab, spec.tagging,
                                     spec.seed, i, spec.exclude_pairs))
    else:
        tokens = sum(len(t) for t in traces)
        if tokens > spec.token_budget:
            raise BudgetInfeasibleError(
                f"{n_exp} expert traces already use {tokens} tokens, budget is {spec.token_budget}"
            )
        i = n_exp
        while tokens < spec.token_budget:
            t = make_trace(spec.grid, spec.remainder_kind, vocab, spec.tagging,
                           spec.seed, i, spec.exclude_pairs)
            traces.append(t)
            tokens += len(t)
            i += 1
    order = stream(spec.seed, "shuffle").permutation(len(traces))
    traces = [traces[j] for j in order]
    return traces, _manifest(traces, spec, vocab)


def build_token_matched(expert_count: int, target_tokens: int, grid: GridSpec,
                        tagging: TaggingPolicy = TaggingPolicy(), seed: int = 0,
                        remainder_kind: str = KIND_INTERACTION, exclude_pairs=frozenset(),
                        vocab: Vocabulary | None = None):
    """``expert_count`` expert traces, then remainder traces until the token target."""
    spec = DatasetSpec(
        grid=grid,
        total_traces=expert_count,
        fraction_expert=1.0,
        remainder_kind=remainder_kind,
        tagging=tagging,
        token_budget=target_tokens,
        seed=seed,
        exclude_pairs=frozenset(exclude_pairs),
    )
    return build_dataset(spec, vocab)


def _jsonl_lines(traces):
    for t in traces:
        yield json.dumps(t.to_json(), separators=(",", ":")) + "\n"


def dataset_digest(traces) -> str:
    h = hashlib.sha256()
    for line in _jsonl_lines(traces):
        h.update(line.encode("utf-8"))
    return h.hexdigest()


def save_dataset(traces, manifest: DatasetManifest, path, manifest_path=None) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(_jsonl_lines(traces))
    manifest_path = Path(manifest_path) if manifest_path else path.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest.to_json(), indent=1) + "\n", encoding="utf-8")


def load_dataset(path) -> list[TokenSequence]:
    with open(path, encoding="utf-8") as fh:
        return [TokenSequence.from_json(json.loads(line)) for line in fh if line.strip()]


def load_manifest(path) -> DatasetManifest:
    return DatasetManifest.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
