"""Design elements of prototype-based detection.

A method is assembled from interchangeable pieces: a transfer function that
maps encoder output into a comparison space, a distance in that space, a
prototype source (annotated mentions, label texts, or both), and an
aggregation form (average features into one prototype per type, average
scores over many prototypes, or keep sources as separate loss branches).
Smaller distance always means closer; classification logits are negated
distances throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import torch

from .corpus import NA_LABEL, Schema
from .exceptions import ConfigError, ValidationError

TRANSFER_KINDS = ("I", "N", "D", "DN", "R")
DISTANCE_KINDS = ("S", "SS", "EU", "SEU", "KL")
SCALED_DISTANCES = ("SS", "SEU")

VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class TransferSpec:
    """Transfer function choice. ``out_dim`` only applies to projections."""

    kind: str
    out_dim: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in TRANSFER_KINDS:
            raise ConfigError(f"unknown transfer kind {self.kind!r}; expected {TRANSFER_KINDS}")
        if self.out_dim is not None and self.out_dim < 1:
            raise ConfigError("out_dim must be positive")

    def resolved_out_dim(self, dim: int) -> int:
        if self.kind in ("I", "N"):
            return dim
        if self.kind in ("D", "DN"):
            return self.out_dim or max(1, dim // 2)
        return self.out_dim or dim  # R keeps the encoder width by default

    def param_shapes(self, dim: int) -> dict[str, tuple[int, ...]]:
        out = self.resolved_out_dim(dim)
        if self.kind in ("D", "DN"):
            return {"proj": (out, dim)}
        if self.kind == "R":
            return {
                "mu_w": (out, dim),
                "mu_b": (out,),
                "var_w": (out, dim),
                "var_b": (out,),
            }
        return {}


@dataclass(frozen=True)
class DistanceSpec:
    """Distance choice; scaled kinds carry a temperature."""

    kind: str
    tau: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in DISTANCE_KINDS:
            raise ConfigError(f"unknown distance kind {self.kind!r}; expected {DISTANCE_KINDS}")
        if self.kind in SCALED_DISTANCES:
            if self.tau is None or self.tau <= 0:
                raise ConfigError(f"distance {self.kind} requires tau > 0")
        elif self.tau is not None:
            raise ConfigError(f"distance {self.kind} takes no tau")

    @property
    def scaled(self) -> bool:
        return self.kind in SCALED_DISTANCES


@dataclass(frozen=True)
class GaussianRepr:
    """Diagonal Gaussian over the comparison space; variances strictly positive."""

    mean: torch.Tensor
    var: torch.Tensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.var.shape:
            raise ValidationError("mean and var shapes differ")

    def detach(self) -> "GaussianRepr":
        return GaussianRepr(self.mean.detach(), self.var.detach())


Repr = torch.Tensor | GaussianRepr


def transfer(
    spec: TransferSpec, params: Mapping[str, torch.Tensor], h: torch.Tensor
) -> Repr:
    """Apply the transfer function along the last axis of ``h``."""
    if spec.kind == "I":
        return h
    if spec.kind == "N":
        return _normalize(h)
    if spec.kind == "D":
        return h @ params["proj"].T
    if spec.kind == "DN":
        return _normalize(h) @ params["proj"].T
    mean = h @ params["mu_w"].T + params["mu_b"]
    var = torch.nn.functional.softplus(h @ params["var_w"].T + params["var_b"]) + VAR_FLOOR
    return GaussianRepr(mean, var)


def _normalize(h: torch.Tensor) -> torch.Tensor:
    norm = torch.linalg.vector_norm(h, dim=-1, keepdim=True)
    if bool((norm == 0).any()):
        raise ValidationError("cannot normalize a zero vector")
    return h / norm


def distance(spec: DistanceSpec, a: Repr, b: Repr) -> torch.Tensor:
    """Distance between two representations; smaller means closer."""
    if spec.kind == "KL":
        if not isinstance(a, GaussianRepr) or not isinstance(b, GaussianRepr):
            raise ValidationError("KL distance requires Gaussian representations")
        return _sym_gaussian_kl(a.mean, a.var, b.mean, b.var)
    if isinstance(a, GaussianRepr) or isinstance(b, GaussianRepr):
        raise ValidationError(f"distance {spec.kind} requires plain vectors")
    if spec.kind == "S":
        return -(a * b).sum(dim=-1)
    if spec.kind == "SS":
        return -(a * b).sum(dim=-1) / spec.tau
    if spec.kind == "EU":
        return torch.linalg.vector_norm(a - b, dim=-1)
    return torch.linalg.vector_norm(a - b, dim=-1) / spec.tau


def _sym_gaussian_kl(
    mu1: torch.Tensor, var1: torch.Tensor, mu2: torch.Tensor, var2: torch.Tensor
) -> torch.Tensor:
    diff_sq = (mu1 - mu2) ** 2
    terms = var1 / var2 + var2 / var1 - 2.0 + diff_sq * (1.0 / var1 + 1.0 / var2)
    return 0.25 * terms.sum(dim=-1)


def pairwise_distance(
    spec: DistanceSpec, queries: Repr, keys: Repr, chunk: int = 512
) -> torch.Tensor:
    """[Q, K] distance matrix; rows are computed independently in chunks so
    results do not depend on the chunk size."""
    if spec.kind == "KL":
        q_mean, q_var = queries.mean, queries.var
        k_mean, k_var = keys.mean, keys.var
        rows = []
        for i in range(0, q_mean.shape[0], chunk):
            rows.append(
                _sym_gaussian_kl(
                    q_mean[i : i + chunk, None, :],
                    q_var[i : i + chunk, None, :],
                    k_mean[None, :, :],
                    k_var[None, :, :],
                )
            )
        return torch.cat(rows)
    if spec.kind in ("S", "SS"):
        out = -(queries @ keys.T)
        return out / spec.tau if spec.kind == "SS" else out
    rows = []
    for i in range(0, queries.shape[0], chunk):
        diff = queries[i : i + chunk, None, :] - keys[None, :, :]
        rows.append(torch.linalg.vector_norm(diff, dim=-1))
    out = torch.cat(rows)
    return out / spec.tau if spec.kind == "SEU" else out


def stack_reprs(reprs: Sequence[Repr]) -> Repr:
    """Stack a non-empty list of same-kind representations along a new axis."""
    if len(reprs) == 0:
        raise ValidationError("cannot stack zero representations")
    if isinstance(reprs[0], GaussianRepr):
        return GaussianRepr(
            torch.stack([r.mean for r in reprs]), torch.stack([r.var for r in reprs])
        )
    return torch.stack(list(reprs))


def mean_repr(reprs: Sequence[Repr]) -> Repr:
    """Mean of representations in the comparison space. Gaussians average both
    their means and their variances, which stays a valid diagonal Gaussian."""
    stacked = stack_reprs(reprs)
    if isinstance(stacked, GaussianRepr):
        return GaussianRepr(stacked.mean.mean(dim=0), stacked.var.mean(dim=0))
    return stacked.mean(dim=0)


MENTION_ORIGIN = "mention"
LABEL_ORIGIN = "label"
NULL_ORIGIN = "null"


@dataclass(frozen=True)
class PrototypeEntry:
    value: Repr
    origin: str


@dataclass(frozen=True)
class PrototypeSet:
    """Per-type prototype entries in the comparison space, schema-ordered with
    the non-event class last."""

    schema: Schema
    entries: Mapping[str, tuple[PrototypeEntry, ...]]

    def __post_init__(self) -> None:
        expected = set(self.schema.types) | {NA_LABEL}
        if set(self.entries) != expected:
            raise ValidationError("prototype set must cover every type plus the non-event class")
        for t, es in self.entries.items():
            if len(es) == 0:
                raise ValidationError(f"type {t!r} has no prototypes")

    def labels(self) -> tuple[str, ...]:
        return tuple(self.schema.types) + (NA_LABEL,)

    def merged(self, other: "PrototypeSet") -> "PrototypeSet":
        if other.schema.types != self.schema.types:
            raise ValidationError("cannot merge prototype sets over different schemas")
        entries = {t: self.entries[t] + other.entries[t] for t in self.entries}
        return PrototypeSet(self.schema, entries)


def build_prototypes(
    schema: Schema,
    source: str,
    aggregation: str,
    *,
    mention_reps: Mapping[str, Sequence[Repr]] | None = None,
    label_reps: Mapping[str, Repr] | None = None,
    null_repr: Repr | None = None,
    na_reps: Sequence[Repr] | None = None,
) -> PrototypeSet:
    """Assemble prototypes from already-transferred representations.

    ``source`` picks which inputs contribute ('mentions', 'label', 'both').
    ``aggregation`` is 'feature' (mean per type) or 'score' (keep every
    entry). The non-event class uses ``na_reps`` when given, otherwise the
    learnable ``null_repr``.
    """
    if source not in ("mentions", "label", "both"):
        raise ConfigError(f"unknown prototype source {source!r}")
    if aggregation not in ("feature", "score"):
        raise ConfigError(f"build_prototypes aggregates 'feature' or 'score', got {aggregation!r}")
    entries: dict[str, tuple[PrototypeEntry, ...]] = {}
    for t in schema.types:
        collected: list[PrototypeEntry] = []
        if source in ("mentions", "both"):
            reps = (mention_reps or {}).get(t, ())
            if len(reps) == 0:
                raise ValidationError(f"type {t!r} has an empty mention support set")
            collected.extend(PrototypeEntry(r, MENTION_ORIGIN) for r in reps)
        if source in ("label", "both"):
            if label_reps is None or t not in label_reps:
                raise ValidationError(f"type {t!r} has no label representation")
            collected.append(PrototypeEntry(label_reps[t], LABEL_ORIGIN))
        if aggregation == "feature" and len(collected) > 1:
            origin = MENTION_ORIGIN if source != "label" else LABEL_ORIGIN
            collected = [PrototypeEntry(mean_repr([e.value for e in collected]), origin)]
        entries[t] = tuple(collected)
    if na_reps:
        na_entries = tuple(PrototypeEntry(r, MENTION_ORIGIN) for r in na_reps)
        if aggregation == "feature" and len(na_entries) > 1:
            na_entries = (PrototypeEntry(mean_repr([e.value for e in na_entries]), MENTION_ORIGIN),)
    else:
        if null_repr is None:
            raise ValidationError("non-event class needs na_reps or a null prototype")
        na_entries = (PrototypeEntry(null_repr, NULL_ORIGIN),)
    entries[NA_LABEL] = na_entries
    return PrototypeSet(schema, entries)


def logits_feature(
    query: Repr, protos: PrototypeSet, dspec: DistanceSpec
) -> dict[str, torch.Tensor]:
    """Negated distance to each type's single prototype."""
    out: dict[str, torch.Tensor] = {}
    for t in protos.labels():
        es = protos.entries[t]
        if len(es) != 1:
            raise ValidationError(f"feature-level logits need one prototype per type; {t!r} has {len(es)}")
        out[t] = -distance(dspec, query, es[0].value)
    return out


def logits_score(
    query: Repr, protos: PrototypeSet, dspec: DistanceSpec
) -> dict[str, torch.Tensor]:
    """Mean of negated distances over each type's prototypes."""
    out: dict[str, torch.Tensor] = {}
    for t in protos.labels():
        scores = [-distance(dspec, query, e.value) for e in protos.entries[t]]
        out[t] = torch.stack(scores).mean(dim=0)
    return out


def predict_nn(query: Repr, protos: PrototypeSet, dspec: DistanceSpec) -> str:
    """Nearest-prototype label: minimize over each type's closest entry.

    Ties keep the earlier label in schema order; the non-event class is
    considered last, so it never wins a tie.
    """
    best_label: str | None = None
    best = None
    for t in protos.labels():
        d = min(float(distance(dspec, query, e.value)) for e in protos.entries[t])
        if best is None or d < best:
            best, best_label = d, t
    return best_label
