"""Few-shot dataset construction.

Two builders live here. ``greedy_sample`` draws a K-shot subset from an
annotated corpus: types are visited from rarest to most frequent, sentences
containing the current type are drawn uniformly at random, the per-type
counter is credited for every mention in a drawn sentence, and a final
pruning pass drops any sentence whose removal keeps all types at K or more.
``split_class_transfer`` partitions a corpus into a source dataset and a
target pool with disjoint type inventories and disjoint sentences.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Dataset, Mention, Schema, Sentence
from .exceptions import InfeasibleSampleError, ValidationError


@dataclass(frozen=True)
class SampleSpec:
    """Shot counts and seed for drawing a train/dev pair."""

    k_train: int
    k_dev: int
    seed: int

    def __post_init__(self) -> None:
        if self.k_train < 1:
            raise ValidationError("k_train must be >= 1")
        if self.k_dev < 0:
            raise ValidationError("k_dev must be >= 0")


@dataclass(frozen=True)
class SampleStats:
    n_sentences: int
    n_mentions: int
    avg_shot: float


def _sentence_type_counts(sentence: Sentence) -> dict[str, int]:
    counts: dict[str, int] = {}
    for m in sentence.mentions:
        counts[m.label] = counts.get(m.label, 0) + 1
    return counts


def _greedy_core(
    dataset: Dataset,
    targets: Mapping[str, int],
    rng: random.Random,
    strict: bool,
) -> list[Sentence]:
    """Shared greedy draw. In strict mode a type that cannot reach its target
    raises; otherwise the target is silently clamped to what the pool offers.
    """
    remaining = list(dataset.sentences)
    counter = {t: 0 for t in targets}
    picked: list[Sentence] = []

    order = sorted(targets, key=lambda t: (dataset.mention_count(t), t))
    for y in order:
        while counter[y] < targets[y]:
            pool = [s for s in remaining if any(m.label == y for m in s.mentions)]
            if not pool:
                if strict:
                    raise InfeasibleSampleError(
                        f"type {y!r}: cannot reach {targets[y]} mentions "
                        f"(got {counter[y]}, pool exhausted)"
                    )
                break
            choice = rng.choice(pool)
            remaining.remove(choice)
            picked.append(choice)
            for label, c in _sentence_type_counts(choice).items():
                if label in counter:
                    counter[label] += c

    # Pruning pass: drop sentences one at a time while every type stays at its
    # floor. In lenient mode the floor is whatever the pool could offer.
    floors = {t: min(targets[t], counter[t]) for t in targets}
    kept = list(picked)
    for s in picked:
        relevant = {
            label: c for label, c in _sentence_type_counts(s).items() if label in counter
        }
        if all(counter[label] - c >= floors[label] for label, c in relevant.items()):
            kept.remove(s)
            for label, c in relevant.items():
                counter[label] -= c
    return kept


def greedy_sample(dataset: Dataset, k: int, seed: int) -> Dataset:
    """Draw a K-shot subset: every schema type keeps at least K mentions and
    no single sentence can be removed without dropping some type below K.

    Raises InfeasibleSampleError, naming the type, when the corpus itself has
    fewer than K mentions of some type.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    counts = dataset.type_counts()
    for t in dataset.schema.types:
        if counts[t] < k:
            raise InfeasibleSampleError(
                f"type {t!r}: corpus holds {counts[t]} mentions, {k} required"
            )
    rng = random.Random(seed)
    kept = _greedy_core(dataset, {t: k for t in dataset.schema.types}, rng, strict=True)
    kept_ids = {s.id for s in kept}
    return dataset.subset(kept_ids)


def sample_train_dev(dataset: Dataset, spec: SampleSpec) -> tuple[Dataset, Dataset]:
    """Draw disjoint train and dev subsets.

    The train subset uses ``spec.seed``; the dev subset is drawn from the
    remaining sentences with ``spec.seed + 1``. A zero k_dev yields an empty
    dev dataset.
    """
    train = greedy_sample(dataset, spec.k_train, spec.seed)
    rest = dataset.without(train.ids())
    if spec.k_dev == 0:
        return train, Dataset(dataset.schema, (), dataset.paradigm)
    dev = greedy_sample(rest, spec.k_dev, spec.seed + 1)
    return train, dev


def sample_stats(dataset: Dataset) -> SampleStats:
    """Sentence count, mention count, and mean shots per schema type."""
    if len(dataset.schema) == 0:
        raise ValidationError("schema is empty")
    n_mentions = dataset.mention_count()
    avg = n_mentions / len(dataset.schema)
    return SampleStats(len(dataset), n_mentions, avg)


@dataclass(frozen=True)
class TransferSplit:
    """Disjoint source dataset and target pool produced by class transfer."""

    source_types: tuple[str, ...]
    target_types: tuple[str, ...]
    source: Dataset
    target: Dataset


def _drop_labels(sentence: Sentence, drop: set[str]) -> Sentence:
    mentions = tuple(m for m in sentence.mentions if m.label not in drop)
    return Sentence(sentence.id, sentence.tokens, mentions)


def split_class_transfer(dataset: Dataset, source_types: Sequence[str]) -> TransferSplit:
    """Split a corpus by event type for class-transfer experiments.

    Sentences holding at least one target-type mention form the target pool,
    with source-type mentions removed (relabeled to the non-event class).
    All remaining sentences form the source dataset; target-type mentions are
    removed there symmetrically. Types and sentences never cross sides.
    """
    source_set = set(source_types)
    unknown = source_set - set(dataset.schema.types)
    if unknown:
        raise ValidationError(f"unknown source types: {sorted(unknown)}")
    target_types = tuple(t for t in dataset.schema.types if t not in source_set)
    if not target_types:
        raise ValidationError("no target types remain after removing source types")
    if not source_set:
        raise ValidationError("source type list is empty")
    source_tuple = tuple(t for t in dataset.schema.types if t in source_set)

    target_sentences: list[Sentence] = []
    source_sentences: list[Sentence] = []
    target_set = set(target_types)
    for s in dataset.sentences:
        if any(m.label in target_set for m in s.mentions):
            target_sentences.append(_drop_labels(s, source_set))
        else:
            source_sentences.append(_drop_labels(s, target_set))

    source_schema = dataset.schema.restrict(source_tuple)
    target_schema = dataset.schema.restrict(target_types)
    return TransferSplit(
        source_types=source_tuple,
        target_types=target_types,
        source=Dataset(source_schema, tuple(source_sentences), dataset.paradigm),
        target=Dataset(target_schema, tuple(target_sentences), dataset.paradigm),
    )


def top_frequent_types(dataset: Dataset, n: int) -> tuple[str, ...]:
    """The n most frequent event types, ties broken lexicographically."""
    counts = dataset.type_counts()
    if not 0 < n < len(dataset.schema):
        raise ValidationError(
            f"n must be in [1, {len(dataset.schema) - 1}] to leave at least one target type"
        )
    ranked = sorted(dataset.schema.types, key=lambda t: (-counts[t], t))
    return tuple(ranked[:n])


def episode_split(
    train: Dataset, k_support: int, k_query: int, seed: int
) -> tuple[Dataset, Dataset]:
    """Partition a train set into a support part (k_support mentions per type,
    greedy draw) and a query part holding up to k_query per type from the rest.

    Every type must bring at least k_support + 1 mentions so the query side is
    never structurally empty.
    """
    if k_support < 1 or k_query < 1:
        raise ValidationError("k_support and k_query must be >= 1")
    counts = train.type_counts()
    for t in train.schema.types:
        if counts[t] < k_support + 1:
            raise InfeasibleSampleError(
                f"type {t!r}: needs {k_support + 1} mentions for a support/query split, "
                f"got {counts[t]}"
            )
    support = greedy_sample(train, k_support, seed)
    rest = train.without(support.ids())
    rng = random.Random(seed + 1)
    targets = {t: k_query for t in train.schema.types}
    query_sents = _greedy_core(rest, targets, rng, strict=False)
    query = rest.subset({s.id for s in query_sents})
    return support, query
