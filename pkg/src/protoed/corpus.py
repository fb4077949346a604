"""Corpus data model: sentences, trigger mentions, schemas, and tag codecs.

A corpus is a list of tokenized sentences, each carrying zero or more event
mentions. A mention is a half-open token span ``[start, end)`` plus an event
type drawn from the schema. The reserved label ``N.A.`` marks the non-event
class and never appears in a schema or on a mention.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .exceptions import CorpusParseError, ValidationError

NA_LABEL = "N.A."

SEQUENCE_LABELING = "sequence-labeling"
SPAN_CLASSIFICATION = "span-classification"
PARADIGMS = (SEQUENCE_LABELING, SPAN_CLASSIFICATION)

DEFAULT_MAX_SPAN_LEN = 3


@dataclass(frozen=True)
class Mention:
    """An event trigger: half-open token span plus event type."""

    start: int
    end: int
    label: str

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValidationError(
                f"mention span [{self.start}, {self.end}) is not a valid half-open range"
            )
        if self.label == NA_LABEL:
            raise ValidationError(f"mention label must not be the reserved {NA_LABEL!r}")

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def key(self) -> tuple[int, int, str]:
        return (self.start, self.end, self.label)


@dataclass(frozen=True)
class Sentence:
    """A tokenized sentence with non-overlapping mentions, sorted by start."""

    id: str
    tokens: tuple[str, ...]
    mentions: tuple[Mention, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        mentions = tuple(sorted(self.mentions, key=lambda m: (m.start, m.end, m.label)))
        object.__setattr__(self, "mentions", mentions)
        if len(self.tokens) == 0:
            raise ValidationError(f"sentence {self.id!r} has no tokens")
        n = len(self.tokens)
        prev_end = 0
        for m in mentions:
            if m.end > n:
                raise ValidationError(
                    f"sentence {self.id!r}: mention span [{m.start}, {m.end}) exceeds length {n}"
                )
            if m.start < prev_end:
                raise ValidationError(f"sentence {self.id!r}: overlapping mentions")
            prev_end = m.end

    def __len__(self) -> int:
        return len(self.tokens)

    def mention_labels(self) -> set[str]:
        return {m.label for m in self.mentions}

    def trigger_positions(self) -> set[int]:
        return {i for m in self.mentions for i in range(m.start, m.end)}

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "tokens": list(self.tokens),
            "events": [{"type": m.label, "start": m.start, "end": m.end} for m in self.mentions],
        }


def default_label_text(type_name: str) -> str:
    """Label text used for embedding a type name: separators become spaces."""
    return re.sub(r"[-_./]+", " ", type_name).strip()


@dataclass(frozen=True)
class Schema:
    """Ordered event-type inventory with a natural-language text per type."""

    types: tuple[str, ...]
    label_texts: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "types", tuple(self.types))
        if len(set(self.types)) != len(self.types):
            raise ValidationError("schema types must be unique")
        if NA_LABEL in self.types:
            raise ValidationError(f"{NA_LABEL!r} is reserved and cannot be a schema type")
        texts = {t: default_label_text(t) for t in self.types}
        for t, text in dict(self.label_texts).items():
            if t not in texts:
                raise ValidationError(f"label text given for unknown type {t!r}")
            texts[t] = text
        object.__setattr__(self, "label_texts", texts)

    def __contains__(self, t: str) -> bool:
        return t in self.types

    def __len__(self) -> int:
        return len(self.types)

    def index(self, t: str) -> int:
        return self.types.index(t)

    def restrict(self, keep: Iterable[str]) -> "Schema":
        keep = set(keep)
        types = tuple(t for t in self.types if t in keep)
        return Schema(types, {t: self.label_texts[t] for t in types})

    def to_dict(self) -> dict:
        return {"types": list(self.types), "label_texts": dict(self.label_texts)}

    @staticmethod
    def from_dict(d: Mapping) -> "Schema":
        return Schema(tuple(d["types"]), dict(d.get("label_texts", {})))


@dataclass(frozen=True)
class Dataset:
    """An immutable corpus slice bound to a schema and a task paradigm."""

    schema: Schema
    sentences: tuple[Sentence, ...]
    paradigm: str = SEQUENCE_LABELING

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if self.paradigm not in PARADIGMS:
            raise ValidationError(f"unknown paradigm {self.paradigm!r}; expected one of {PARADIGMS}")
        seen_ids: set[str] = set()
        for s in self.sentences:
            if s.id in seen_ids:
                raise ValidationError(f"duplicate sentence id {s.id!r}")
            seen_ids.add(s.id)
            for m in s.mentions:
                if m.label not in self.schema:
                    raise ValidationError(
                        f"sentence {s.id!r}: mention label {m.label!r} not in schema"
                    )

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def ids(self) -> set[str]:
        return {s.id for s in self.sentences}

    def mention_count(self, label: str | None = None) -> int:
        if label is None:
            return sum(len(s.mentions) for s in self.sentences)
        return sum(1 for s in self.sentences for m in s.mentions if m.label == label)

    def type_counts(self) -> dict[str, int]:
        counts = {t: 0 for t in self.schema.types}
        for s in self.sentences:
            for m in s.mentions:
                counts[m.label] += 1
        return counts

    def subset(self, ids: Iterable[str]) -> "Dataset":
        ids = set(ids)
        return Dataset(self.schema, tuple(s for s in self.sentences if s.id in ids), self.paradigm)

    def without(self, ids: Iterable[str]) -> "Dataset":
        ids = set(ids)
        return Dataset(
            self.schema, tuple(s for s in self.sentences if s.id not in ids), self.paradigm
        )


def parse_corpus(
    path: str | Path,
    schema: Schema | None = None,
    paradigm: str = SEQUENCE_LABELING,
) -> Dataset:
    """Read a JSONL corpus file into a Dataset.

    Each line holds one sentence object: ``{"id", "tokens", "events": [{"type",
    "start", "end"}]}``. When no schema is given, one is inferred from the
    labels present, ordered lexicographically. Malformed lines raise
    CorpusParseError naming the 1-based line number.
    """
    sentences: list[Sentence] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                sentences.append(sentence_from_dict(record))
            except (ValidationError, KeyError, TypeError) as exc:
                raise CorpusParseError(f"{path}: line {lineno}: {exc}") from exc
    if schema is None:
        labels = sorted({m.label for s in sentences for m in s.mentions})
        schema = Schema(tuple(labels))
    try:
        return Dataset(schema, tuple(sentences), paradigm)
    except ValidationError as exc:
        raise CorpusParseError(f"{path}: {exc}") from exc


def sentence_from_dict(record: Mapping) -> Sentence:
    tokens = record["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ValidationError("'tokens' must be a list of strings")
    mentions = tuple(
        Mention(int(ev["start"]), int(ev["end"]), str(ev["type"]))
        for ev in record.get("events", [])
    )
    return Sentence(str(record["id"]), tuple(tokens), mentions)


def write_corpus(dataset: Dataset, path: str | Path) -> None:
    """Write a Dataset as JSONL, one sentence object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.sentences:
            fh.write(json.dumps(s.to_dict()) + "\n")


def load_schema(path: str | Path) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        return Schema.from_dict(json.load(fh))


def save_schema(schema: Schema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


def bio_tags(schema: Schema) -> tuple[str, ...]:
    """Full tag alphabet: O first, then B/I pairs in schema order."""
    tags = ["O"]
    for t in schema.types:
        tags.append(f"B-{t}")
        tags.append(f"I-{t}")
    return tuple(tags)


def encode_bio(sentence: Sentence, schema: Schema) -> list[str]:
    """Project mentions onto per-token BIO tags."""
    for m in sentence.mentions:
        if m.label not in schema:
            raise ValidationError(f"label {m.label!r} not in schema")
    tags = ["O"] * len(sentence)
    for m in sentence.mentions:
        tags[m.start] = f"B-{m.label}"
        for i in range(m.start + 1, m.end):
            tags[i] = f"I-{m.label}"
    return tags


def _split_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    raise ValidationError(f"unknown BIO tag {tag!r}")


def decode_bio(tags: Sequence[str]) -> tuple[Mention, ...]:
    """Recover mentions from a BIO tag sequence.

    Decoding is lenient: an I tag whose type does not continue the running
    mention starts a new mention, exactly as if it were a B tag.
    """
    mentions: list[Mention] = []
    start: int | None = None
    label: str | None = None
    for i, tag in enumerate(tags):
        role, t = _split_tag(tag)
        continues = role == "I" and label is not None and t == label
        if not continues and label is not None:
            mentions.append(Mention(start, i, label))
            start = label = None
        if role == "B" or (role == "I" and not continues):
            start, label = i, t
    if label is not None:
        mentions.append(Mention(start, len(tags), label))
    return tuple(mentions)


def enumerate_spans(n_tokens: int, max_len: int = DEFAULT_MAX_SPAN_LEN) -> list[tuple[int, int]]:
    """All candidate half-open spans up to max_len tokens, in lexicographic order."""
    if max_len < 1:
        raise ValidationError("max_len must be >= 1")
    spans = []
    for i in range(n_tokens):
        for j in range(i + 1, min(i + max_len, n_tokens) + 1):
            spans.append((i, j))
    return spans
