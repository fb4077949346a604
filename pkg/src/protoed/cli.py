"""Command-line experiment runner.

Subcommands: ``gen-synth`` (synthetic corpus), ``sample`` (K-shot train/dev
draw), ``split-transfer`` (class-transfer partition), ``train`` (one run),
``eval`` (score prediction files), ``grid`` and ``transfer-grid`` (repeated
protocols). Every subcommand exits 0 on success; failures print one
machine-readable JSON error line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .corpus import (
    SEQUENCE_LABELING,
    SPAN_CLASSIFICATION,
    Dataset,
    Sentence,
    load_schema,
    parse_corpus,
    save_schema,
    write_corpus,
)
from .exceptions import ConfigError
from .metrics import micro_f1
from .presets import PRESETS, MethodConfig, config_hash, method_preset
from .runs import (
    build_estimator,
    grid,
    run_class_transfer,
    run_low_resource,
    sample_for_seed,
    transfer_grid,
)
from .sampling import (
    SampleSpec,
    sample_stats,
    sample_train_dev,
    split_class_transfer,
    top_frequent_types,
)
from .synth import SyntheticSpec, gen_synthetic

ESTIMATOR_OVERRIDE_KEYS = (
    "lr",
    "lr_grid",
    "steps",
    "batch_size",
    "queue_capacity",
    "momentum",
    "dim",
    "n_buckets",
    "hidden",
    "context_radius",
    "window_width",
    "support_shots",
    "query_shots",
    "na_ratio",
    "na_proto_cap",
    "weight_decay",
    "warmup_frac",
    "clip_norm",
    "max_span_len",
)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg


def _read_dataset(path: str, schema_path: str | None, paradigm: str) -> Dataset:
    schema = load_schema(schema_path) if schema_path else None
    return parse_corpus(path, schema=schema, paradigm=paradigm)


def _method_from(cfg: dict, args) -> MethodConfig:
    """Resolve a method: --method name wins, then config 'method'/'elements'."""
    name = getattr(args, "method", None) or cfg.get("method")
    if name:
        method = method_preset(name) if isinstance(name, str) else MethodConfig.from_dict(name)
    elif "elements" in cfg:
        method = MethodConfig.from_dict(cfg["elements"])
    else:
        raise ConfigError("no method given: use --method or a config with 'method'/'elements'")
    if getattr(args, "tau", None) is not None:
        method = dataclasses.replace(method, tau=args.tau)
    return method


def _overrides_from(cfg: dict, args) -> dict:
    overrides = dict(cfg.get("overrides", {}))
    for key in ESTIMATOR_OVERRIDE_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if "lr_grid" in overrides and isinstance(overrides["lr_grid"], str):
        overrides["lr_grid"] = tuple(float(x) for x in overrides["lr_grid"].split(","))
    return overrides


def _methods_list(raw) -> list[MethodConfig]:
    out = []
    for item in raw:
        out.append(method_preset(item) if isinstance(item, str) else MethodConfig.from_dict(item))
    return out


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# ----------------------------------------------------------------- commands


def cmd_gen_synth(args) -> int:
    spec = SyntheticSpec(
        n_types=args.n_types,
        n_sentences=args.n_sentences,
        vocab_size=args.vocab_size,
        triggers_per_type=args.triggers_per_type,
        distractor_rate=args.distractor_rate,
        min_len=args.min_len,
        max_len=args.max_len,
        max_triggers=args.max_triggers,
        seed=args.seed,
    )
    data = gen_synthetic(spec)
    write_corpus(data, args.out)
    if args.schema_out:
        save_schema(data.schema, args.schema_out)
    _print_json(
        {
            "sentences": len(data),
            "mentions": data.mention_count(),
            "types": len(data.schema),
            "out": str(args.out),
        }
    )
    return 0


def cmd_sample(args) -> int:
    data = _read_dataset(args.corpus, args.schema, args.paradigm)
    train, dev = sample_train_dev(data, SampleSpec(args.k, args.k_dev, args.seed))
    write_corpus(train, args.train_out)
    if args.dev_out:
        write_corpus(dev, args.dev_out)
    if args.rest_out:
        rest = data.without(train.ids() | dev.ids())
        write_corpus(rest, args.rest_out)
    stats = sample_stats(train)
    _print_json(
        {
            "train_sentences": stats.n_sentences,
            "train_mentions": stats.n_mentions,
            "avg_shot": stats.avg_shot,
            "dev_sentences": len(dev),
        }
    )
    return 0


def cmd_split_transfer(args) -> int:
    data = _read_dataset(args.corpus, args.schema, args.paradigm)
    if args.source_types:
        source_types = tuple(args.source_types.split(","))
    elif args.n_source:
        source_types = top_frequent_types(data, args.n_source)
    else:
        raise ConfigError("give --source-types or --n-source")
    split = split_class_transfer(data, source_types)
    write_corpus(split.source, args.source_out)
    write_corpus(split.target, args.target_out)
    if args.source_schema_out:
        save_schema(split.source.schema, args.source_schema_out)
    if args.target_schema_out:
        save_schema(split.target.schema, args.target_schema_out)
    _print_json(
        {
            "source_types": list(split.source.schema.types),
            "target_types": list(split.target.schema.types),
            "source_sentences": len(split.source),
            "target_sentences": len(split.target),
        }
    )
    return 0


def _write_predictions(est, test: Dataset, path: str) -> None:
    preds = est.predict(test)
    sentences = tuple(
        Sentence(s.id, s.tokens, tuple(p)) for s, p in zip(test.sentences, preds)
    )
    write_corpus(Dataset(test.schema, sentences, test.paradigm), path)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    method = _method_from(cfg, args)
    overrides = _overrides_from(cfg, args)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    paradigm = args.paradigm
    train = _read_dataset(args.train, args.schema, paradigm)
    dev = _read_dataset(args.dev, args.schema, paradigm) if args.dev else None
    log_path = args.log or cfg.get("log")
    if args.test:
        test = _read_dataset(args.test, args.schema, paradigm)
        est, scores = run_low_resource(
            method, train, dev, test, seed=seed, overrides=overrides, log_path=log_path
        )
        result = {
            "config_hash": config_hash(method.to_dict()),
            "method": method.name,
            "seed": seed,
            "lr": est.lr_,
            **scores.as_dict(),
        }
        if args.pred_out:
            _write_predictions(est, test, args.pred_out)
    else:
        est = build_estimator(method, seed=seed, overrides=overrides)
        est.fit(train, dev=dev)
        result = {
            "config_hash": config_hash(method.to_dict()),
            "method": method.name,
            "seed": seed,
            "lr": est.lr_,
            "final_loss": est.loss_history_[-1],
        }
    if args.save_model:
        est.save(args.save_model)
    _print_json(result)
    return 0


def cmd_eval(args) -> int:
    gold = _read_dataset(args.gold, args.schema, args.paradigm)
    pred = parse_corpus(args.pred, schema=gold.schema, paradigm=args.paradigm)
    scores = micro_f1(
        {s.id: list(s.mentions) for s in pred.sentences},
        {s.id: list(s.mentions) for s in gold.sentences},
    )
    print(f"precision={scores.precision:.4f} recall={scores.recall:.4f} f1={scores.f1:.4f}")
    return 0


def cmd_grid(args) -> int:
    cfg = _load_config(args.config)
    methods = _methods_list(cfg.get("methods", []))
    if not methods:
        raise ConfigError("grid config needs a non-empty 'methods' list")
    data = _read_dataset(cfg["corpus"], cfg.get("schema"), cfg.get("paradigm", SEQUENCE_LABELING))
    test = (
        _read_dataset(cfg["test"], cfg.get("schema"), cfg.get("paradigm", SEQUENCE_LABELING))
        if cfg.get("test")
        else None
    )
    seeds = [int(s) for s in (args.seeds.split(",") if args.seeds else cfg.get("seeds", [0]))]
    rows = grid(
        methods,
        data,
        int(cfg.get("k", 5)),
        seeds,
        k_dev=int(cfg.get("k_dev", 0)),
        test=test,
        overrides=cfg.get("overrides"),
        log_path=args.log or cfg.get("log"),
    )
    for row in rows:
        _print_json(row)
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_transfer_grid(args) -> int:
    cfg = _load_config(args.config)
    data = _read_dataset(cfg["corpus"], cfg.get("schema"), cfg.get("paradigm", SEQUENCE_LABELING))
    if cfg.get("source_types"):
        source_types = tuple(cfg["source_types"])
    elif cfg.get("n_source"):
        source_types = top_frequent_types(data, int(cfg["n_source"]))
    else:
        raise ConfigError("transfer-grid config needs 'source_types' or 'n_source'")
    split = split_class_transfer(data, source_types)
    sources = [None if m == "none" else m for m in cfg.get("sources", ["none"])]
    sources = [m if m is None else (method_preset(m) if isinstance(m, str) else MethodConfig.from_dict(m)) for m in sources]
    targets = _methods_list(cfg.get("targets", []))
    if not targets:
        raise ConfigError("transfer-grid config needs a non-empty 'targets' list")
    seeds = [int(s) for s in (args.seeds.split(",") if args.seeds else cfg.get("seeds", [0]))]
    rows = transfer_grid(
        sources,
        targets,
        split,
        int(cfg.get("k", 5)),
        seeds,
        k_dev=int(cfg.get("k_dev", 0)),
        source_overrides=cfg.get("source_overrides") or cfg.get("overrides"),
        target_overrides=cfg.get("target_overrides") or cfg.get("overrides"),
        log_path=args.log or cfg.get("log"),
    )
    for row in rows:
        _print_json(row)
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protoed",
        description="Prototype-based few-shot event detection experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, seed_default=None):
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--config", help="JSON config file")
        p.add_argument(
            "--paradigm",
            choices=[SEQUENCE_LABELING, SPAN_CLASSIFICATION],
            default=SEQUENCE_LABELING,
        )

    p = sub.add_parser("gen-synth", help="generate a planted-trigger synthetic corpus")
    common(p, seed_default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out")
    p.add_argument("--n-types", type=int, default=10)
    p.add_argument("--n-sentences", type=int, default=200)
    p.add_argument("--vocab-size", type=int, default=150)
    p.add_argument("--triggers-per-type", type=int, default=3)
    p.add_argument("--distractor-rate", type=float, default=0.3)
    p.add_argument("--min-len", type=int, default=6)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--max-triggers", type=int, default=2)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("sample", help="draw a K-shot train/dev sample")
    common(p, seed_default=0)
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--k-dev", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--dev-out")
    p.add_argument("--rest-out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("split-transfer", help="partition a corpus for class transfer")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema")
    p.add_argument("--source-types", help="comma-separated source type names")
    p.add_argument("--n-source", type=int, help="take the N most frequent types as source")
    p.add_argument("--source-out", required=True)
    p.add_argument("--target-out", required=True)
    p.add_argument("--source-schema-out")
    p.add_argument("--target-schema-out")
    p.set_defaults(func=cmd_split_transfer)

    p = sub.add_parser("train", help="train one method on a sampled train set")
    common(p)
    p.add_argument("--method", help=f"preset name, one of: {', '.join(sorted(PRESETS))}")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--schema")
    p.add_argument("--tau", type=float)
    for key in ESTIMATOR_OVERRIDE_KEYS:
        flag = "--" + key.replace("_", "-")
        if key in ("lr", "weight_decay", "warmup_frac", "clip_norm", "momentum"):
            p.add_argument(flag, type=float, dest=key)
        elif key == "lr_grid":
            p.add_argument(flag, type=str, dest=key, help="comma-separated rates")
        else:
            p.add_argument(flag, type=int, dest=key)
    p.add_argument("--pred-out")
    p.add_argument("--save-model")
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a prediction file against gold")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--schema")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="methods x seeds under the repeated protocol")
    common(p)
    p.add_argument("--seeds", help="comma-separated, overrides config")
    p.add_argument("--out")
    p.add_argument("--log")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("transfer-grid", help="source x target methods over a transfer split")
    common(p)
    p.add_argument("--seeds", help="comma-separated, overrides config")
    p.add_argument("--out")
    p.add_argument("--log")
    p.set_defaults(func=cmd_transfer_grid)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - contract: machine-readable line + nonzero exit
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
