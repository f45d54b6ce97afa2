"""Command-line entry point: gen-grids, build-dataset, train, eval, reproduce."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import kernels
from .acceptance import checks_for
from .config import ConfigKeyError, load_config
from .datasets import DatasetSpec, build_dataset, load_dataset, load_manifest, save_dataset
from .evaluation import ELICITATIONS, TRIAL_KINDS, build_test_set, evaluate, generation_cap
from .mdp import DimensionError, load_grid, make_grid, save_grid
from .model import (
    DivergenceError,
    ModelConfig,
    TrainConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
    save_loss_curve,
    train,
)
from .studies import METRIC_COLUMNS, STUDIES, grid_seed, run_study, write_metrics_csv
from .traces import KIND_INTERACTION, KIND_NOVICE, NO_SOURCE, WITH_SOURCE, TaggingPolicy, Vocabulary

log = logging.getLogger("tracelearn")


class CLIError(Exception):
    pass


GLOBAL_DEFAULTS = {"config": None, "out": None, "seed": None, "scale": "desk", "jobs": 1, "verbose": False}


def _global_flags() -> argparse.ArgumentParser:
    # defaults are suppressed so a flag given before the command is not
    # overwritten by the subcommand's copy of the same option
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="INI config file")
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--seed", type=int, help="master seed (PIPELINE_SEED overrides)")
    g.add_argument("--scale", choices=("desk", "paper"), help="size preset (default desk)")
    g.add_argument("--jobs", type=int, help="worker processes for study sweeps (default 1)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracelearn", description=__doc__, parents=[_global_flags()])
    parser.set_defaults(**GLOBAL_DEFAULTS)
    common = _global_flags()  # separate action objects, so the defaults above stay off the subcommands
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-grids", parents=[common], help="write grid_<i>.json files")
    p.add_argument("--count", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)

    p = sub.add_parser("build-dataset", parents=[common], help="write a JSONL dataset and manifest")
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--total", type=int)
    p.add_argument("--fraction-expert", type=float)
    p.add_argument("--remainder", choices=(KIND_INTERACTION, KIND_NOVICE))
    p.add_argument("--tagging", choices=(NO_SOURCE, WITH_SOURCE))
    p.add_argument("--k", type=float, help="tag keep probability")
    p.add_argument("--token-budget", type=int)
    p.add_argument("--exclude-test", type=int, default=0, metavar="N",
                   help="reserve N safe and N hazardous pairs (seeded) and keep them out of the data")
    p.add_argument("--name", default="dataset")

    p = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--max-seq-len", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--name", default="model")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a test set")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--trial", choices=TRIAL_KINDS, required=True)
    p.add_argument("--elicitation", choices=ELICITATIONS, default="no_cue")
    p.add_argument("--test-size", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--exclude", type=Path, help="training manifest whose pairs are held out")
    p.add_argument("--name", default="metrics")

    p = sub.add_parser("reproduce", parents=[common], help="run a study end to end")
    p.add_argument("study", choices=STUDIES)
    p.add_argument("--assert", dest="check", action="store_true",
                   help="evaluate acceptance assertions (also enabled by [assert] enabled=true)")
    return parser


def _config(args, overrides):
    seed = os.environ.get("PIPELINE_SEED")
    seed = int(seed) if seed not in (None, "") else args.seed
    if seed is not None:
        overrides = {**overrides, "grid.seed": seed}
    if args.out is not None:
        overrides = {**overrides, "paths.out_dir": str(args.out)}
    return load_config(args.config, args.scale, overrides)


def _out(cfg) -> Path:
    out = Path(cfg.get("paths.out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_grids(args) -> int:
    cfg = _config(args, {"grid.count": args.count, "grid.width": args.width, "grid.height": args.height})
    out = _out(cfg)
    w, h, master = cfg.get_int("grid.width"), cfg.get_int("grid.height"), cfg.get_int("grid.seed")
    print(f"{'file':<14} {'seed':>20} {'zones':>5} {'high_cost':>9}")
    for i in range(cfg.get_int("grid.count")):
        grid = make_grid(w, h, grid_seed(master, i))
        path = out / f"grid_{i}.json"
        try:
            save_grid(grid, path)
        except OSError as exc:
            raise CLIError(f"cannot write {path}: {exc}") from exc
        print(f"{path.name:<14} {grid.seed:>20} {len(grid.zones):>5} {len(grid.high_cost):>9}")
    cfg.write(out / "config.ini")
    return 0


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def cmd_build_dataset(args) -> int:
    cfg = _config(args, {
        "dataset.total": args.total, "dataset.fraction_expert": args.fraction_expert,
        "dataset.remainder": args.remainder, "dataset.tagging": args.tagging, "dataset.k": args.k,
        "dataset.token_budget": args.token_budget,
    })
    grid = load_grid(_require(args.grid, "grid file"))
    exclude = frozenset()
    if args.exclude_test:
        from .evaluation import HAZARDOUS, SAFE

        seed = cfg.get_int("grid.seed")
        exclude = frozenset(p for kind in (SAFE, HAZARDOUS)
                            for p in build_test_set(grid, kind, args.exclude_test, seed=seed).pairs)
    spec = DatasetSpec(
        grid=grid,
        total_traces=cfg.get_int("dataset.total"),
        fraction_expert=cfg.get_float("dataset.fraction_expert"),
        remainder_kind=cfg.get("dataset.remainder"),
        tagging=TaggingPolicy(cfg.get("dataset.tagging"), cfg.get_float("dataset.k")),
        token_budget=cfg.get_optional_int("dataset.token_budget"),
        seed=cfg.get_int("grid.seed"),
        exclude_pairs=exclude,
    )
    traces, manifest = build_dataset(spec)
    out = _out(cfg)
    path = out / f"{args.name}.jsonl"
    save_dataset(traces, manifest, path, out / f"{args.name}.manifest.json")
    cfg.write(out / "config.ini")
    print(f"wrote {path}")
    print(f"traces: {manifest.n_traces}  tokens: {manifest.total_tokens}")
    for kind, n in manifest.counts.items():
        print(f"  {kind:<12} {n:>8}  mean length {manifest.mean_length[kind]:.2f}")
    if manifest.tag_positions:
        print(f"tags emitted: {manifest.tags_emitted}/{manifest.tag_positions}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args, {
        "model.hidden": args.hidden, "model.layers": args.layers, "model.heads": args.heads,
        "model.max_seq_len": args.max_seq_len, "train.epochs": args.epochs,
        "train.batch": args.batch, "train.lr": args.lr,
    })
    traces = load_dataset(_require(args.dataset, "dataset"))
    manifest_path = args.dataset.with_suffix(".manifest.json")
    manifest = load_manifest(manifest_path) if manifest_path.exists() else None
    if manifest is not None:
        vocab = Vocabulary(manifest.vocab["width"], manifest.vocab["height"])
    else:
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    seed = cfg.get_int("grid.seed")
    mcfg = ModelConfig(
        vocab_size=vocab.size, hidden_dim=cfg.get_int("model.hidden"), n_layers=cfg.get_int("model.layers"),
        n_heads=cfg.get_int("model.heads"), max_seq_len=cfg.get_int("model.max_seq_len"),
        seed=seed, ffn_dim=cfg.get_optional_int("model.ffn_dim"),
    )
    tcfg = TrainConfig(epochs=cfg.get_int("train.epochs"), batch_size=cfg.get_int("train.batch"),
                       learning_rate=cfg.get_float("train.lr"), seed=seed)
    model = init_model(mcfg, pad_id=vocab.PAD, eos_id=vocab.EOS)
    try:
        train(model, traces, tcfg, progress=lambda e, l: print(f"epoch {e:>3}  loss {l:.5f}", flush=True),
              provenance={"dataset": str(args.dataset), "dataset_digest": manifest.digest})
    except DivergenceError as exc:
        raise CLIError(str(exc)) from exc
    out = _out(cfg)
    save_checkpoint(model, out / f"{args.name}.ckpt")
    save_loss_curve(model, out / f"{args.name}.loss.csv")
    cfg.write(out / "config.ini")
    print(f"wrote {out / (args.name + '.ckpt')}  digest {model.digest()[:16]}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args, {"eval.test_size": args.test_size, "eval.max_len": args.max_len})
    model = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    grid = load_grid(_require(args.grid, "grid file"))
    manifest = load_manifest(_require(args.exclude, "manifest")) if args.exclude else None
    test = build_test_set(grid, args.trial, cfg.get_int("eval.test_size"), exclude=manifest,
                          seed=cfg.get_int("grid.seed"))
    if manifest is not None:
        overlap = sum(manifest.has_pair(s, g) for s, g in test.pairs)
        print(f"held-out check: {overlap} test pairs appear in {args.exclude}")
        if overlap:
            raise CLIError("test pairs overlap the training manifest")
    report = evaluate(model, test, args.elicitation, grid, max_len=cfg.get_optional_int("eval.max_len"))
    out = _out(cfg)
    row = {
        "grid_id": args.grid.stem, "dataset_kind": "",
        "fraction_expert": "", "tagging_mode": "", "k": "", "elicitation": args.elicitation,
        "trial_kind": args.trial, "n_pairs": report.n_pairs,
        "exact_match_rate": f"{report.exact_match_rate:.6f}",
        "correct_path_rate": f"{report.correct_path_rate:.6f}", "seed": cfg.get("grid.seed"),
    }
    spec = model.provenance.get("dataset")
    if isinstance(spec, dict):
        row.update({"dataset_kind": spec.get("remainder_kind", ""),
                    "fraction_expert": spec.get("fraction_expert", ""),
                    "tagging_mode": spec.get("tagging", {}).get("mode", ""),
                    "k": spec.get("tagging", {}).get("k", "")})
    write_metrics_csv([row], out / f"{args.name}.csv")
    cfg.write(out / "config.ini")
    (out / f"{args.name}.details.jsonl").write_text("".join(report.detail_lines()), encoding="utf-8")
    print(f"{args.trial}/{args.elicitation}: exact {report.exact_match_rate:.3f}  "
          f"correct {report.correct_path_rate:.3f}  (n={report.n_pairs})")
    return 0


def cmd_reproduce(args) -> int:
    cfg = _config(args, {})
    out = _out(cfg)

    def progress(res):
        status = "FAILED " + res.error if res.error else "ok"
        print(f"[{args.study}] grid {res.cell.grid_index} {res.cell.recipe.label} "
              f"f={res.cell.recipe.fraction:g} {res.cell.recipe.tagging} k={res.cell.recipe.k:g}: "
              f"{status} ({res.seconds:.0f}s)", flush=True)

    report_dir = run_study(args.study, cfg, out, jobs=args.jobs, progress=progress)
    summary = json.loads((report_dir / "summary.json").read_text())
    with open(report_dir / "metrics.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            print("  ".join(f"{c}={row[c]}" for c in METRIC_COLUMNS if row[c] != ""))
    failures = summary["failures"]
    for name, err in failures.items():
        print(f"cell failure: {name}: {err}")
    status = 0 if not failures else 1
    if args.check or cfg.get_bool("assert.enabled"):
        results = checks_for(args.study, summary)
        for c in results:
            print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        (report_dir / "assertions.json").write_text(
            json.dumps([c.__dict__ for c in results], indent=1) + "\n", encoding="utf-8")
        if not all(c.passed for c in results):
            status = 1
    print(f"report: {report_dir}")
    return status


COMMANDS = {
    "gen-grids": cmd_gen_grids,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("planning kernels: %s", kernels.BACKEND)
    try:
        return COMMANDS[args.command](args)
    except (CLIError, ConfigKeyError, DimensionError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
