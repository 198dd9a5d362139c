"""Command-line pipeline: split, train, expand, eval, clean, gradcheck.

Every command reads a JSON config file (sections "model", "train",
top-level "seed") with individual flags taking precedence, and writes a
manifest recording the exact configuration, seed, and library versions
next to its outputs.  Outputs carry no timestamps: a fixed config and
seed reproduce them byte for byte.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import closest_neighbor, closest_parent
from .cleaning import self_clean, write_clean_report
from .errors import ConfigError, DivergenceError, TaxonomyError
from .gradcheck import model_cases, op_cases, run_cases
from .inference import build_anchor_cache, expand, rank_anchors
from .metrics import ranking_report, wu_palmer
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .taxonomy import (
    Concept,
    load_taxonomy,
    mask_leaves,
    read_embedding_file,
    read_split,
    write_edge_file,
    write_split,
)
from .training import TrainConfig, fit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_MODEL_FLAGS = (
    "arch",
    "hidden_dims",
    "heads",
    "position_dim",
    "readout",
    "matcher",
    "matcher_hidden",
    "dropout",
)
_TRAIN_FLAGS = (
    "negatives",
    "batch_size",
    "learning_rate",
    "scheduler_patience",
    "lr_decay",
    "max_epochs",
    "early_stop_patience",
    "loss",
)


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; route it to exit 1."""

    def error(self, message):
        raise ConfigError(message)


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    for section in ("model", "train"):
        if section in data and not isinstance(data[section], dict):
            raise ConfigError(f"config section {section!r} must be an object")
    return data


def _section(file_config: dict, name: str, flags, args) -> dict:
    """File values first, explicit flags override."""
    merged = dict(file_config.get(name, {}))
    for flag in flags:
        value = getattr(args, flag, None)
        if value is not None:
            merged[flag] = value
    return merged


def _model_config(args, file_config: dict, input_dim: int) -> ModelConfig:
    merged = _section(file_config, "model", _MODEL_FLAGS, args)
    for key in ("hidden_dims", "heads"):
        if isinstance(merged.get(key), list):
            merged[key] = tuple(merged[key])
    merged.pop("input_dim", None)
    try:
        return ModelConfig(input_dim=input_dim, **merged)
    except TypeError as exc:
        raise ConfigError(f"bad model config: {exc}")


def _train_config(args, file_config: dict, seed: int) -> TrainConfig:
    merged = _section(file_config, "train", _TRAIN_FLAGS, args)
    merged.pop("seed", None)
    try:
        return TrainConfig(seed=seed, **merged)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}")


def _seed(args, file_config: dict) -> int:
    if args.seed is not None:
        return args.seed
    return int(file_config.get("seed", 0))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, seed: int, args, extras: dict) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "threads": args.threads,
        "versions": {
            "taxograft": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        **extras,
    }
    path = out / f"{command}_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_extras(model_config=None, train_config=None, **rest) -> dict:
    config: dict = dict(rest)
    if model_config is not None:
        config["model"] = asdict(model_config)
    if train_config is not None:
        config["train"] = asdict(train_config)
    return {"config": config}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_split(args) -> int:
    taxonomy = load_taxonomy(args.edges, args.embeddings)
    file_config = _load_config_file(args.config)
    seed = _seed(args, file_config)
    split = mask_leaves(taxonomy, args.val_ratio, args.test_ratio, seed)
    out = _out_dir(args)
    write_split(split, out / "split.tsv")
    _write_manifest(
        out,
        "split",
        seed,
        args,
        _config_extras(
            val_ratio=args.val_ratio,
            test_ratio=args.test_ratio,
            edges=str(args.edges),
            embeddings=str(args.embeddings),
        ),
    )
    print(
        f"masked {len(split.validation_queries)} validation and "
        f"{len(split.test_queries)} test leaves -> {out / 'split.tsv'}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    taxonomy = load_taxonomy(args.edges, args.embeddings)
    split = read_split(taxonomy, args.split)
    file_config = _load_config_file(args.config)
    seed = _seed(args, file_config)
    train_config = _train_config(args, file_config, seed)

    start_epoch = 0
    initial_params = None
    if args.resume is not None:
        clashing = [f for f in _MODEL_FLAGS if getattr(args, f) is not None]
        if clashing:
            raise ConfigError(
                f"model flags {clashing} conflict with --resume; "
                "the checkpoint fixes the architecture"
            )
        initial_params, model_config, extra = load_checkpoint(args.resume)
        start_epoch = int(extra.get("epochs_completed", 0))
    else:
        model_config = _model_config(args, file_config, taxonomy.embedding_dim)

    result = fit(
        split,
        model_config,
        train_config,
        initial_params=initial_params,
        start_epoch=start_epoch,
    )
    out = _out_dir(args)
    save_checkpoint(
        out / "checkpoint.json",
        result.params,
        model_config,
        extra={
            "epochs_completed": result.epochs_completed,
            "best_epoch": result.best_epoch,
            "seed": seed,
            "train": asdict(train_config),
        },
    )
    mode = "a" if args.resume is not None else "w"
    with open(out / "train_log.jsonl", mode, encoding="utf-8") as fh:
        for row in result.log:
            fh.write(json.dumps(row) + "\n")
    _write_manifest(
        out,
        "train",
        seed,
        args,
        _config_extras(
            model_config=model_config,
            train_config=train_config,
            edges=str(args.edges),
            embeddings=str(args.embeddings),
            split=str(args.split),
            resume=str(args.resume) if args.resume else None,
        ),
    )
    best = "-" if result.best_epoch is None else str(result.best_epoch)
    print(
        f"trained epochs {start_epoch}..{result.epochs_completed - 1} "
        f"(best {best}) -> {out / 'checkpoint.json'}"
    )
    return EXIT_OK


def _query_concepts(taxonomy, path) -> list[Concept]:
    table = read_embedding_file(path)
    if table.dimension != taxonomy.embedding_dim:
        raise TaxonomyError(
            f"query embeddings are {table.dimension}-d but the taxonomy "
            f"uses {taxonomy.embedding_dim}-d"
        )
    known = {taxonomy.name_of(n) for n in taxonomy.ids()}
    clash = known & set(table.vectors)
    if clash:
        raise TaxonomyError(f"queries already in the taxonomy: {sorted(clash)[:5]}")
    next_id = max(taxonomy.ids()) + 1
    return [
        Concept(next_id + i, name, table.vectors[name])
        for i, name in enumerate(sorted(table.vectors))
    ]


def cmd_expand(args) -> int:
    taxonomy = load_taxonomy(args.edges, args.embeddings)
    params, model_config, _ = load_checkpoint(args.checkpoint)
    if model_config.input_dim != taxonomy.embedding_dim:
        raise TaxonomyError(
            f"checkpoint expects {model_config.input_dim}-d embeddings, "
            f"taxonomy has {taxonomy.embedding_dim}-d"
        )
    queries = _query_concepts(taxonomy, args.queries)
    grown, suggestions = expand(
        taxonomy, queries, params, model_config, top_k=args.top_k
    )
    out = _out_dir(args)
    write_edge_file(grown, out / "expanded_edges.tsv")
    with open(out / "suggestions.tsv", "w", encoding="utf-8") as fh:
        fh.write("query\trank\tanchor\tscore\n")
        for query in queries:
            for rank, (anchor, score) in enumerate(suggestions[query.id], start=1):
                fh.write(
                    f"{query.name}\t{rank}\t{taxonomy.name_of(anchor)}\t{score!r}\n"
                )
    file_config = _load_config_file(args.config)
    seed = _seed(args, file_config)
    _write_manifest(
        out,
        "expand",
        seed,
        args,
        _config_extras(
            model_config=model_config,
            top_k=args.top_k,
            edges=str(args.edges),
            embeddings=str(args.embeddings),
            queries=str(args.queries),
            checkpoint=str(args.checkpoint),
        ),
    )
    print(
        f"attached {len(queries)} concepts ({grown.num_edges} edges) -> "
        f"{out / 'expanded_edges.tsv'}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    taxonomy = load_taxonomy(args.edges, args.embeddings)
    split = read_split(taxonomy, args.split)
    queries = split.test_queries if args.queries == "test" else split.validation_queries
    if not queries:
        raise TaxonomyError(f"split has no {args.queries} queries")
    params, model_config, _ = load_checkpoint(args.checkpoint)
    cache = build_anchor_cache(split.existing, params, model_config)

    def model_rank(query):
        return rank_anchors(query, cache, params, model_config)

    def summarize(rank_fn):
        gold_ranks = []
        rows = []
        sims = []
        for query, gold in queries:
            result = rank_fn(query)
            ranks = result.gold_ranks(gold)
            gold_ranks.append(ranks)
            rows.append((query.name, min(ranks), result))
            predicted = int(result.ordered_anchors[0])
            sims.append(
                max(wu_palmer(split.existing, predicted, g) for g in gold)
            )
        report = ranking_report(gold_ranks)
        report["Wu&P"] = float(np.mean(sims))
        return report, rows

    metrics = {}
    metrics["model"], model_rows = summarize(model_rank)
    if args.baselines:
        metrics["closest_parent"], _ = summarize(
            lambda q: closest_parent(q, split.existing)
        )
        metrics["closest_neighbor"], _ = summarize(
            lambda q: closest_neighbor(q, split.existing)
        )

    out = _out_dir(args)
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "ranks.tsv", "w", encoding="utf-8") as fh:
        fh.write("query\trank_of_gold\ttop10_anchor_names\n")
        for name, gold_rank, result in model_rows:
            top = ",".join(
                split.existing.name_of(a) for a, _ in result.top(10)
            )
            fh.write(f"{name}\t{gold_rank}\t{top}\n")
    file_config = _load_config_file(args.config)
    seed = _seed(args, file_config)
    _write_manifest(
        out,
        "eval",
        seed,
        args,
        _config_extras(
            model_config=model_config,
            queries=args.queries,
            baselines=bool(args.baselines),
            edges=str(args.edges),
            embeddings=str(args.embeddings),
            split=str(args.split),
            checkpoint=str(args.checkpoint),
        ),
    )
    print(json.dumps(metrics["model"], sort_keys=True))
    return EXIT_OK


def cmd_clean(args) -> int:
    taxonomy = load_taxonomy(args.edges, args.embeddings)
    file_config = _load_config_file(args.config)
    seed = _seed(args, file_config)
    model_config = _model_config(args, file_config, taxonomy.embedding_dim)
    train_config = _train_config(args, file_config, seed)
    report = self_clean(
        taxonomy,
        args.folds,
        model_config,
        train_config,
        threshold=args.threshold,
    )
    out = _out_dir(args)
    write_clean_report(out / "clean_report.tsv", taxonomy, report)
    _write_manifest(
        out,
        "clean",
        seed,
        args,
        _config_extras(
            model_config=model_config,
            train_config=train_config,
            folds=args.folds,
            threshold=args.threshold,
            edges=str(args.edges),
            embeddings=str(args.embeddings),
        ),
    )
    print(
        f"checked {len(report.rows)} leaf edges, flagged "
        f"{len(report.flagged())} -> {out / 'clean_report.tsv'}"
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cases = op_cases() + model_cases()
    results = run_cases(cases, seeds=range(args.seeds), tol=args.tolerance)
    out = _out_dir(args)
    payload = {
        r.name: {"max_error": r.max_error, "passed": r.passed} for r in results
    }
    with open(out / "gradcheck_report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        out,
        "gradcheck",
        args.seed if args.seed is not None else 0,
        args,
        _config_extras(seeds=args.seeds, tolerance=args.tolerance),
    )
    failed = [r.name for r in results if not r.passed]
    print(
        f"{len(results) - len(failed)}/{len(results)} gradient cases passed "
        f"-> {out / 'gradcheck_report.json'}"
    )
    if failed:
        raise DivergenceError(f"gradient checks failed: {failed}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file (sections: model, train)")
    sub.add_argument("--seed", type=int, help="run seed (overrides config file)")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker thread bound; computation currently runs in-process",
    )


def _add_data(sub):
    sub.add_argument("--edges", required=True, help="taxonomy edge TSV")
    sub.add_argument("--embeddings", required=True, help="word2vec-text embeddings")


def _add_model_flags(sub):
    sub.add_argument("--arch", choices=("gcn", "gat", "pgcn", "pgat"))
    sub.add_argument("--hidden-dims", dest="hidden_dims", type=_int_tuple)
    sub.add_argument("--heads", type=_int_tuple)
    sub.add_argument("--position-dim", dest="position_dim", type=int)
    sub.add_argument("--readout", choices=("mean", "weighted", "concat"))
    sub.add_argument("--matcher", choices=("mlp", "bilinear"))
    sub.add_argument("--matcher-hidden", dest="matcher_hidden", type=int)
    sub.add_argument("--dropout", type=float)


def _add_train_flags(sub):
    sub.add_argument("--negatives", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_argument("--scheduler-patience", dest="scheduler_patience", type=int)
    sub.add_argument("--lr-decay", dest="lr_decay", type=float)
    sub.add_argument("--max-epochs", dest="max_epochs", type=int)
    sub.add_argument("--early-stop-patience", dest="early_stop_patience", type=int)
    sub.add_argument("--loss", choices=("info_nce", "bce"))


def build_parser() -> _Parser:
    parser = _Parser(prog="taxograft", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    split = commands.add_parser("split", help="mask random leaves into a split file")
    _add_data(split)
    split.add_argument("--val-ratio", dest="val_ratio", type=float, default=0.1)
    split.add_argument("--test-ratio", dest="test_ratio", type=float, default=0.2)
    _add_common(split)
    split.set_defaults(handler=cmd_split)

    train = commands.add_parser("train", help="self-supervised training")
    _add_data(train)
    train.add_argument("--split", required=True, help="split file from `split`")
    train.add_argument("--resume", help="checkpoint to continue from")
    _add_model_flags(train)
    _add_train_flags(train)
    _add_common(train)
    train.set_defaults(handler=cmd_train)

    grow = commands.add_parser("expand", help="attach new concepts to the taxonomy")
    _add_data(grow)
    grow.add_argument("--queries", required=True, help="embeddings of new concepts")
    grow.add_argument("--checkpoint", required=True)
    grow.add_argument("--top-k", dest="top_k", type=int, default=1)
    _add_common(grow)
    grow.set_defaults(handler=cmd_expand)

    evaluate = commands.add_parser("eval", help="rank held-out queries and score")
    _add_data(evaluate)
    evaluate.add_argument("--split", required=True)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument(
        "--queries", choices=("test", "validation"), default="test"
    )
    evaluate.add_argument("--baselines", action="store_true")
    _add_common(evaluate)
    evaluate.set_defaults(handler=cmd_eval)

    clean = commands.add_parser("clean", help="flag suspicious existing edges")
    _add_data(clean)
    clean.add_argument("--folds", type=int, default=5)
    clean.add_argument("--threshold", type=float, default=1000)
    _add_model_flags(clean)
    _add_train_flags(clean)
    _add_common(clean)
    clean.set_defaults(handler=cmd_clean)

    grad = commands.add_parser("gradcheck", help="finite-difference gradient audit")
    grad.add_argument("--seeds", type=int, default=10)
    grad.add_argument("--tolerance", type=float, default=1e-4)
    _add_common(grad)
    grad.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        return args.handler(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TaxonomyError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
