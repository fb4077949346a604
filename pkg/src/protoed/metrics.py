"""Mention-level micro precision/recall/F1 and multi-run aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Mention
from .exceptions import ValidationError


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class RunReport:
    """Per-seed scores plus mean and sample standard deviation of F1."""

    seeds: tuple[int, ...]
    runs: tuple[Scores, ...]
    mean_f1: float
    std_f1: float | None

    def as_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "runs": [r.as_dict() for r in self.runs],
            "mean_f1": self.mean_f1,
            "std_f1": self.std_f1,
        }


def micro_f1(
    predictions: Mapping[str, Sequence[Mention]],
    gold: Mapping[str, Sequence[Mention]],
) -> Scores:
    """Micro-averaged scores over exact (span, type) matches.

    Both mappings are keyed by sentence id and must cover the same sentences.
    An empty prediction set against an empty gold set scores 1.0 across the
    board; an empty side against a non-empty one scores 0.0 on its axis.
    """
    if set(predictions) != set(gold):
        missing = set(gold) ^ set(predictions)
        raise ValidationError(f"sentence ids do not align; mismatched: {sorted(missing)[:5]}")
    n_pred = n_gold = n_hit = 0
    for sid, gold_mentions in gold.items():
        gold_keys = {m.key() for m in gold_mentions}
        pred_keys = {m.key() for m in predictions[sid]}
        n_gold += len(gold_keys)
        n_pred += len(pred_keys)
        n_hit += len(gold_keys & pred_keys)
    if n_pred == 0:
        precision = 1.0 if n_gold == 0 else 0.0
    else:
        precision = n_hit / n_pred
    if n_gold == 0:
        recall = 1.0 if n_pred == 0 else 0.0
    else:
        recall = n_hit / n_gold
    if precision + recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return Scores(precision, recall, f1)


def aggregate_runs(seeds: Sequence[int], runs: Sequence[Scores]) -> RunReport:
    """Collect per-seed scores; std uses the n-1 denominator and is absent
    for a single run."""
    if len(runs) == 0:
        raise ValidationError("no runs to aggregate")
    if len(seeds) != len(runs):
        raise ValidationError("seeds and runs must align")
    f1s = [r.f1 for r in runs]
    mean = sum(f1s) / len(f1s)
    if len(f1s) == 1:
        std: float | None = None
    else:
        var = sum((x - mean) ** 2 for x in f1s) / (len(f1s) - 1)
        std = math.sqrt(var)
    return RunReport(tuple(seeds), tuple(runs), mean, std)
