"""Experiment runners: single runs, repeated-seed grids, and class transfer.

A "run" samples nothing by itself — callers pass already-sampled train/dev
sets — but the grid helpers implement the repeated protocol: for each seed,
draw a fresh K-shot train/dev sample, train, and evaluate on a fixed or
remainder test set. Class transfer first fits a source model on the full
source portion, copies its encoder into the target estimator (all heads
reinitialize, since the schemas are disjoint), and proceeds as usual.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping, Sequence

from .corpus import Dataset
from .exceptions import ValidationError
from .metrics import RunReport, Scores, aggregate_runs
from .model import FewShotEventDetector
from .presets import MethodConfig, config_hash
from .sampling import SampleSpec, TransferSplit, sample_train_dev


def build_estimator(
    method: MethodConfig, *, seed: int = 0, overrides: Mapping[str, Any] | None = None
) -> FewShotEventDetector:
    kwargs = method.estimator_kwargs()
    if overrides:
        kwargs.update(overrides)
    kwargs["seed"] = seed
    return FewShotEventDetector(**kwargs)


def _append_log(log_path, record: Mapping[str, Any]) -> None:
    if log_path is None:
        return
    path = Path(log_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def _log_record(kind: str, method: MethodConfig, seed: int, scores: Scores, **extra) -> dict:
    config = method.to_dict()
    rec = {
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "scores": scores.as_dict(),
    }
    rec.update(extra)
    return rec


def run_low_resource(
    method: MethodConfig,
    train: Dataset,
    dev: Dataset | None,
    test: Dataset,
    *,
    seed: int = 0,
    overrides: Mapping[str, Any] | None = None,
    log_path=None,
) -> tuple[FewShotEventDetector, Scores]:
    """Train one method on a sampled train/dev pair and score it on test.
    The dev set is consulted only for learning-rate selection over a grid."""
    est = build_estimator(method, seed=seed, overrides=overrides)
    est.fit(train, dev=dev)
    scores = est.evaluate(test)
    _append_log(log_path, _log_record("low-resource", method, seed, scores))
    return est, scores


def check_transfer_split(split: TransferSplit) -> None:
    """Raise if any class or sentence leaks across the transfer boundary."""
    src_types = set(split.source.schema.types)
    tgt_types = set(split.target.schema.types)
    if src_types & tgt_types:
        raise ValidationError(f"class leakage: shared types {sorted(src_types & tgt_types)}")
    src_ids = {s.id for s in split.source.sentences}
    tgt_ids = {s.id for s in split.target.sentences}
    if src_ids & tgt_ids:
        raise ValidationError("sentence leakage: source and target share sentence ids")
    for name, data, banned in (
        ("source", split.source, tgt_types),
        ("target", split.target, src_types),
    ):
        for s in data.sentences:
            hit = s.mention_labels() & banned
            if hit:
                raise ValidationError(
                    f"label leakage: {name} sentence {s.id!r} mentions {sorted(hit)}"
                )


def sample_for_seed(
    corpus: Dataset, k_train: int, k_dev: int, seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """K-shot train/dev sample plus the untouched remainder."""
    train, dev = sample_train_dev(corpus, SampleSpec(k_train, k_dev, seed))
    used = {s.id for s in train.sentences} | {s.id for s in dev.sentences}
    return train, dev, corpus.without(used)


def run_class_transfer(
    source_method: MethodConfig | None,
    target_method: MethodConfig,
    split: TransferSplit,
    k_train: int,
    k_dev: int = 0,
    *,
    seed: int = 0,
    source_overrides: Mapping[str, Any] | None = None,
    target_overrides: Mapping[str, Any] | None = None,
    test: Dataset | None = None,
    log_path=None,
) -> tuple[FewShotEventDetector, Scores]:
    """Source-then-target training across a class-transfer split.

    ``source_method=None`` skips the source phase entirely, which makes the
    run identical to plain low-resource training on the target sample.
    """
    check_transfer_split(split)
    encoder_init = None
    source_name = "none"
    if source_method is not None:
        source_name = source_method.name
        src = build_estimator(source_method, seed=seed, overrides=source_overrides)
        src.fit(split.source)
        encoder_init = src.encoder_params_
    train, dev, remainder = sample_for_seed(split.target, k_train, k_dev, seed)
    test_set = test if test is not None else remainder
    tgt = build_estimator(target_method, seed=seed, overrides=target_overrides)
    tgt.fit(train, dev=dev if len(dev) else None, encoder_init=encoder_init)
    scores = tgt.evaluate(test_set)
    _append_log(
        log_path,
        _log_record("transfer", target_method, seed, scores, source=source_name),
    )
    return tgt, scores


def grid(
    methods: Sequence[MethodConfig],
    corpus: Dataset,
    k_train: int,
    seeds: Sequence[int],
    *,
    k_dev: int = 0,
    test: Dataset | None = None,
    overrides: Mapping[str, Any] | None = None,
    log_path=None,
) -> list[dict[str, Any]]:
    """Method × seed grid under the repeated-sampling protocol. Per-seed
    failures are recorded in the row and do not stop the grid."""
    if not methods or not seeds:
        raise ValidationError("grid needs at least one method and one seed")
    rows = []
    for method in methods:
        f1s: list[float] = []
        ok_seeds: list[int] = []
        runs: list[Scores] = []
        errors: dict[int, str] = {}
        for seed in seeds:
            try:
                train, dev, remainder = sample_for_seed(corpus, k_train, k_dev, seed)
                test_set = test if test is not None else remainder
                _, scores = run_low_resource(
                    method,
                    train,
                    dev if len(dev) else None,
                    test_set,
                    seed=seed,
                    overrides=overrides,
                    log_path=log_path,
                )
            except Exception as e:  # noqa: BLE001 - cell isolation is the contract
                errors[seed] = f"{type(e).__name__}: {e}"
                continue
            ok_seeds.append(seed)
            runs.append(scores)
            f1s.append(scores.f1)
        row: dict[str, Any] = {
            "config": method.to_dict(),
            "config_hash": config_hash(method.to_dict()),
        }
        if runs:
            report: RunReport = aggregate_runs(ok_seeds, runs)
            row.update(
                seeds=list(report.seeds),
                f1s=[s.f1 for s in report.runs],
                mean_f1=report.mean_f1,
                std_f1=report.std_f1,
            )
        else:
            row.update(seeds=[], f1s=[], mean_f1=None, std_f1=None)
        if errors:
            row["errors"] = {str(k): v for k, v in errors.items()}
        rows.append(row)
    return rows


def transfer_grid(
    source_methods: Sequence[MethodConfig | None],
    target_methods: Sequence[MethodConfig],
    split: TransferSplit,
    k_train: int,
    seeds: Sequence[int],
    *,
    k_dev: int = 0,
    source_overrides: Mapping[str, Any] | None = None,
    target_overrides: Mapping[str, Any] | None = None,
    log_path=None,
) -> list[dict[str, Any]]:
    """Full source × target grid over the given seeds, one row per pair."""
    if not source_methods or not target_methods or not seeds:
        raise ValidationError("transfer grid needs sources, targets, and seeds")
    rows = []
    for src in source_methods:
        for tgt in target_methods:
            f1s: list[float] = []
            ok_seeds: list[int] = []
            runs: list[Scores] = []
            errors: dict[int, str] = {}
            for seed in seeds:
                try:
                    _, scores = run_class_transfer(
                        src,
                        tgt,
                        split,
                        k_train,
                        k_dev,
                        seed=seed,
                        source_overrides=source_overrides,
                        target_overrides=target_overrides,
                        log_path=log_path,
                    )
                except Exception as e:  # noqa: BLE001 - cell isolation
                    errors[seed] = f"{type(e).__name__}: {e}"
                    continue
                ok_seeds.append(seed)
                runs.append(scores)
                f1s.append(scores.f1)
            row: dict[str, Any] = {
                "source": src.name if src is not None else "none",
                "target": tgt.name,
            }
            if runs:
                report = aggregate_runs(ok_seeds, runs)
                row.update(
                    seeds=list(report.seeds),
                    f1s=[s.f1 for s in report.runs],
                    mean_f1=report.mean_f1,
                    std_f1=report.std_f1,
                )
            else:
                row.update(seeds=[], f1s=[], mean_f1=None, std_f1=None)
            if errors:
                row["errors"] = {str(k): v for k, v in errors.items()}
            rows.append(row)
    return rows
