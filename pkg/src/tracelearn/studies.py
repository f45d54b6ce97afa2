"""Study orchestration: grids -> held-out test sets -> datasets -> models -> metrics.

Every study reserves its safe and hazardous test pairs per grid before any
dataset is built. No training dataset may draw those pairs, and each
manifest is checked against the test sets afterwards. Trained models are
cached by content hash, so studies that share a dataset composition (e.g. the
with-source interaction mixtures used by both the fraction sweep and the
control comparison) train it once.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .config import RunConfig
from .datasets import DatasetSpec, build_dataset, build_token_matched, save_dataset
from .evaluation import (
    HAZARDOUS,
    NO_CUE,
    RECOVERY,
    SAFE,
    WITH_CUE,
    build_test_set,
    evaluate,
)
from .mdp import GridSpec, make_grid
from .model import (
    ModelConfig,
    TrainConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
    save_loss_curve,
    train,
)
from .rng import child_seed
from .traces import (
    KIND_INTERACTION,
    KIND_NOVICE,
    NO_SOURCE,
    WITH_SOURCE,
    TaggingPolicy,
    Vocabulary,
)

log = logging.getLogger(__name__)

STUDIES = ("study1", "study2a", "study2b", "drop_tags", "token_control")

METRIC_COLUMNS = [
    "grid_id", "dataset_kind", "fraction_expert", "tagging_mode", "k", "elicitation",
    "trial_kind", "n_pairs", "exact_match_rate", "correct_path_rate", "seed",
]

# bump when a change alters trained weights for an unchanged config
CACHE_VERSION = 1


class StudyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Recipe:
    """One training-dataset composition on one grid."""

    label: str
    fraction: float
    remainder: str = KIND_INTERACTION
    tagging: str = NO_SOURCE
    k: float = 1.0
    token_match: bool = False  # remainder fills the token count of the novice control


@dataclass
class Cell:
    grid_index: int
    recipe: Recipe
    evals: tuple[tuple[str, str], ...]  # (trial kind, elicitation)


@dataclass
class CellResult:
    cell: Cell
    rows: list[dict] = field(default_factory=list)
    details: list[str] = field(default_factory=list)
    manifest: dict | None = None
    error: str | None = None
    seconds: float = 0.0


def grid_seed(master: int, index: int) -> int:
    return child_seed(master, "grid", index)


def study_grids(cfg: RunConfig) -> list[GridSpec]:
    master = cfg.get_int("grid.seed")
    w, h = cfg.get_int("grid.width"), cfg.get_int("grid.height")
    return [make_grid(w, h, grid_seed(master, i)) for i in range(cfg.get_int("grid.count"))]


def model_config(cfg: RunConfig, vocab: Vocabulary, grid_index: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab.size,
        hidden_dim=cfg.get_int("model.hidden"),
        n_layers=cfg.get_int("model.layers"),
        n_heads=cfg.get_int("model.heads"),
        max_seq_len=cfg.get_int("model.max_seq_len"),
        seed=child_seed(cfg.get_int("model.seed"), "model", grid_index),
        ffn_dim=cfg.get_optional_int("model.ffn_dim"),
    )


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.get_int("train.epochs"),
        batch_size=cfg.get_int("train.batch"),
        learning_rate=cfg.get_float("train.lr"),
    )


def recipes_for(study: str, cfg: RunConfig) -> list[tuple[Recipe, tuple[tuple[str, str], ...]]]:
    fractions = cfg.get_list("study.fractions", float)
    elicit = tuple(cfg.get_list("eval.elicitations"))
    haz = tuple((HAZARDOUS, e) for e in elicit)
    if study == "study1":
        trials = tuple((t, NO_CUE) for t in (SAFE, HAZARDOUS, RECOVERY))
        return [(Recipe("expert", 1.0), trials), (Recipe("interaction", 0.0), trials)]
    if study == "study2a":
        return [
            (Recipe("interaction", f, KIND_INTERACTION, mode, 1.0), haz)
            for f in fractions for mode in (NO_SOURCE, WITH_SOURCE)
        ]
    if study == "study2b":
        return [
            (Recipe(label, f, rem, WITH_SOURCE, 1.0), ((HAZARDOUS, WITH_CUE),))
            for f in fractions
            for label, rem in (("interaction", KIND_INTERACTION), ("control", KIND_NOVICE))
        ]
    if study == "drop_tags":
        return [
            (Recipe("interaction", f, KIND_INTERACTION, WITH_SOURCE, k), haz)
            for f in cfg.get_list("study.drop_fractions", float)
            for k in cfg.get_list("study.k_values", float)
        ]
    if study == "token_control":
        total = cfg.get_int("dataset.total")
        f = cfg.get_int("study.token_expert_count") / total
        return [
            (Recipe("control", f, KIND_NOVICE, WITH_SOURCE, 1.0), haz),
            (Recipe("token_matched", f, KIND_INTERACTION, WITH_SOURCE, 1.0, token_match=True), haz),
            (Recipe("interaction", f, KIND_INTERACTION, WITH_SOURCE, 1.0), haz),
        ]
    raise StudyError(f"unknown study {study!r}; choose from {', '.join(STUDIES)}")


def _dataset_seed(cfg: RunConfig, grid_index: int) -> int:
    return child_seed(cfg.get_int("grid.seed"), "dataset", grid_index)


def reserved_test_sets(cfg: RunConfig, grid: GridSpec, grid_index: int, kinds=(SAFE, HAZARDOUS, RECOVERY)):
    n = cfg.get_int("eval.test_size")
    seed = child_seed(cfg.get_int("grid.seed"), "test", grid_index)
    return {kind: build_test_set(grid, kind, n, seed=seed) for kind in kinds}


def build_recipe(cfg: RunConfig, grid: GridSpec, grid_index: int, recipe: Recipe, exclude):
    total = cfg.get_int("dataset.total")
    seed = _dataset_seed(cfg, grid_index)
    tagging = TaggingPolicy(recipe.tagging, recipe.k)
    if recipe.token_match:
        control = DatasetSpec(grid, total, recipe.fraction, KIND_NOVICE, tagging, seed=seed, exclude_pairs=exclude)
        _, control_manifest = build_dataset(control)
        n_exp = control.n_expert
        traces, manifest = build_token_matched(
            n_exp, control_manifest.total_tokens, grid, tagging, seed,
            KIND_INTERACTION, exclude,
        )
        manifest.spec["matched_to_tokens"] = control_manifest.total_tokens
        return traces, manifest
    spec = DatasetSpec(grid, total, recipe.fraction, recipe.remainder, tagging, seed=seed, exclude_pairs=exclude)
    return build_dataset(spec)


def _cache_key(manifest, mcfg: ModelConfig, tcfg: TrainConfig) -> str:
    blob = json.dumps(
        {"data": manifest.digest, "model": asdict(mcfg), "train": asdict(tcfg), "v": CACHE_VERSION},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def trained_model(cfg: RunConfig, traces, manifest, vocab: Vocabulary, grid_index: int,
                  cache_dir: Path | None):
    mcfg = model_config(cfg, vocab, grid_index)
    tcfg = train_config(cfg)
    key = _cache_key(manifest, mcfg, tcfg)
    path = cache_dir / f"{key}.ckpt" if cache_dir else None
    if path is not None and path.exists():
        return load_checkpoint(path), True
    model = init_model(mcfg, pad_id=vocab.PAD, eos_id=vocab.EOS)
    train(model, traces, tcfg, provenance={"dataset_digest": manifest.digest, "dataset": manifest.spec})
    if path is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        save_checkpoint(model, tmp)
        tmp.with_suffix(".tmp.json").replace(path.with_suffix(".ckpt.json"))
        tmp.replace(path)
    return model, False


def run_cell(cfg_values: dict, cell: Cell, cache_dir: str | None) -> CellResult:
    """Build, train and evaluate one cell. Exceptions become ``error``."""
    t0 = time.time()
    cfg = RunConfig(cfg_values)
    res = CellResult(cell)
    try:
        grid = study_grids(cfg)[cell.grid_index]
        vocab = Vocabulary.for_grid(grid)
        kinds = sorted({t for t, _ in cell.evals} | {SAFE, HAZARDOUS})
        tests = reserved_test_sets(cfg, grid, cell.grid_index, kinds)
        exclude = frozenset(p for kind in (SAFE, HAZARDOUS) for p in tests[kind].pairs)
        traces, manifest = build_recipe(cfg, grid, cell.grid_index, cell.recipe, exclude)
        # held-out discipline, re-derived from the manifest itself
        for kind in (SAFE, HAZARDOUS):
            overlap = [p for p in tests[kind].pairs if manifest.has_pair(*p)]
            if overlap:
                raise StudyError(f"{len(overlap)} {kind} test pairs occur in the training data")
        model, cached = trained_model(cfg, traces, manifest, vocab, cell.grid_index,
                                      Path(cache_dir) if cache_dir else None)
        res.manifest = {k: v for k, v in manifest.to_json().items() if k != "pairs"}
        res.manifest["cached_model"] = cached
        res.manifest["loss_curve"] = list(model.loss_curve)
        max_len = cfg.get_optional_int("eval.max_len")
        r = cell.recipe
        for trial, elicitation in cell.evals:
            report = evaluate(model, tests[trial], elicitation, grid, vocab, max_len=max_len)
            res.rows.append({
                "grid_id": f"grid_{cell.grid_index}",
                "dataset_kind": r.label,
                "fraction_expert": f"{r.fraction:g}",
                "tagging_mode": r.tagging,
                "k": f"{r.k:g}" if r.tagging == WITH_SOURCE else "",
                "elicitation": elicitation,
                "trial_kind": trial,
                "n_pairs": report.n_pairs,
                "exact_match_rate": f"{report.exact_match_rate:.6f}",
                "correct_path_rate": f"{report.correct_path_rate:.6f}",
                "seed": cfg.get("grid.seed"),
            })
            res.details.extend(report.detail_lines())
    except Exception as exc:  # recorded per cell; the sweep continues
        log.exception("cell failed: %s", cell)
        res.error = f"{type(exc).__name__}: {exc}"
    res.seconds = time.time() - t0
    return res


def cell_name(cell: Cell) -> str:
    r = cell.recipe
    parts = [f"grid{cell.grid_index}", r.label, f"f{r.fraction:g}", r.tagging]
    if r.tagging == WITH_SOURCE:
        parts.append(f"k{r.k:g}")
    return "_".join(parts)


def _row_key(row):
    return (row["grid_id"], row["dataset_kind"], float(row["fraction_expert"]), row["tagging_mode"],
            row["k"], row["elicitation"], row["trial_kind"])


def summarize(rows: list[dict]) -> list[dict]:
    """Mean rates across grids for each (dataset, fraction, tagging, k, elicitation, trial)."""
    groups = defaultdict(list)
    for row in rows:
        key = (row["dataset_kind"], row["fraction_expert"], row["tagging_mode"], row["k"],
               row["elicitation"], row["trial_kind"])
        groups[key].append(row)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], float(k[1]), k[2], k[3], k[4], k[5])):
        rs = groups[key]
        out.append({
            "dataset_kind": key[0], "fraction_expert": float(key[1]), "tagging_mode": key[2],
            "k": float(key[3]) if key[3] else None, "elicitation": key[4], "trial_kind": key[5],
            "n_grids": len(rs),
            "exact_match_rate": sum(float(r["exact_match_rate"]) for r in rs) / len(rs),
            "correct_path_rate": sum(float(r["correct_path_rate"]) for r in rs) / len(rs),
        })
    return out


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def run_study(study: str, cfg: RunConfig, out_dir=None, jobs: int = 1, progress=None) -> Path:
    """Run one study end to end and write its report directory.

    Writes ``metrics.csv``, ``summary.json``, ``config.ini`` and per-cell
    detail files. Cells append to ``metrics.partial.csv`` as they finish.
    """
    recipes = recipes_for(study, cfg)
    out = Path(out_dir or cfg.get("paths.out_dir")) / study
    (out / "details").mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.ini")
    cache = cfg.get("paths.cache_dir") or str(Path(out_dir or cfg.get("paths.out_dir")) / "cache")
    cells = [Cell(i, recipe, evals) for i in range(cfg.get_int("grid.count")) for recipe, evals in recipes]

    partial = out / "metrics.partial.csv"
    write_metrics_csv([], partial)
    results: list[CellResult] = []

    def record(res: CellResult):
        results.append(res)
        with open(partial, "a", newline="", encoding="utf-8") as fh:
            csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n").writerows(res.rows)
        (out / "details" / f"{cell_name(res.cell)}.jsonl").write_text("".join(res.details), encoding="utf-8")
        if progress:
            progress(res)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, cfg.values, c, cache) for c in cells]
            for fut in futures:
                record(fut.result())
    else:
        for c in cells:
            record(run_cell(cfg.values, c, cache))

    rows = sorted((r for res in results for r in res.rows), key=_row_key)
    write_metrics_csv(rows, out / "metrics.csv")
    summary = {
        "study": study,
        "n_grids": cfg.get_int("grid.count"),
        "summary": summarize(rows),
        "manifests": {cell_name(r.cell): r.manifest for r in results if r.manifest},
        "failures": {cell_name(r.cell): r.error for r in results if r.error},
    }
    if study == "study2b":
        summary["interaction_minus_control_pp"] = control_gaps(summary["summary"])
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out


def control_gaps(summary: list[dict]) -> dict[str, float]:
    """Exact-match difference (percentage points), interaction minus control, by fraction."""
    by = {(s["dataset_kind"], s["fraction_expert"]): s["exact_match_rate"]
          for s in summary if s["elicitation"] == WITH_CUE and s["trial_kind"] == HAZARDOUS}
    return {
        f"{f:g}": 100.0 * (by[("interaction", f)] - by[("control", f)])
        for (kind, f) in sorted(by) if kind == "interaction" and ("control", f) in by
    }


def save_study_dataset(cfg: RunConfig, grid_index: int, recipe: Recipe, path) -> None:
    """Materialise one cell's training data (for inspection)."""
    grid = study_grids(cfg)[grid_index]
    tests = reserved_test_sets(cfg, grid, grid_index, (SAFE, HAZARDOUS))
    exclude = frozenset(p for t in tests.values() for p in t.pairs)
    traces, manifest = build_recipe(cfg, grid, grid_index, recipe, exclude)
    save_dataset(traces, manifest, path)
