"""Linear-chain CRF over BIO tags.

Three transition flavors are supported: a fully learnable tag-pair table, a
nine-parameter collapsed table keyed by abstract tag roles and expanded to
the full tag alphabet (applied at decode time only), and a table derived from
type prototypes through a bilinear form. All log-space computation runs at
64-bit; forbidden transitions may be ``-inf`` sentinels, though gradients are
only defined for finite tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from .corpus import NA_LABEL, Schema, bio_tags
from .exceptions import ValidationError

DTYPE = torch.float64


@dataclass(frozen=True)
class TransitionTable:
    """Tag-pair scores plus start/stop scores, aligned with ``tags``."""

    tags: tuple[str, ...]
    trans: torch.Tensor
    start: torch.Tensor
    stop: torch.Tensor

    def __post_init__(self) -> None:
        t = len(self.tags)
        if self.trans.shape != (t, t) or self.start.shape != (t,) or self.stop.shape != (t,):
            raise ValidationError("transition table shapes do not match the tag alphabet")
        for tensor in (self.trans, self.start, self.stop):
            if bool(torch.isnan(tensor).any()) or bool(torch.isposinf(tensor).any()):
                raise ValidationError("transition scores must be real or -inf")


def zero_table(schema: Schema) -> TransitionTable:
    tags = bio_tags(schema)
    t = len(tags)
    return TransitionTable(
        tags,
        torch.zeros(t, t, dtype=DTYPE),
        torch.zeros(t, dtype=DTYPE),
        torch.zeros(t, dtype=DTYPE),
    )


def _check_emissions(emissions: torch.Tensor, table: TransitionTable) -> None:
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise ValidationError("emissions must be a non-empty [N, T] matrix")
    if emissions.shape[1] != len(table.tags):
        raise ValidationError(
            f"emissions width {emissions.shape[1]} != tag alphabet size {len(table.tags)}"
        )


def crf_log_partition(emissions: torch.Tensor, table: TransitionTable) -> torch.Tensor:
    """Log of the summed exponentiated scores over all tag paths."""
    _check_emissions(emissions, table)
    alpha = table.start + emissions[0]
    for i in range(1, emissions.shape[0]):
        alpha = torch.logsumexp(alpha[:, None] + table.trans, dim=0) + emissions[i]
    return torch.logsumexp(alpha + table.stop, dim=0)


def crf_path_score(
    emissions: torch.Tensor, table: TransitionTable, path: Sequence[int]
) -> torch.Tensor:
    _check_emissions(emissions, table)
    if len(path) != emissions.shape[0]:
        raise ValidationError("path length must match the number of positions")
    idx = torch.tensor(list(path), dtype=torch.long)
    score = table.start[idx[0]] + emissions[0, idx[0]] + table.stop[idx[-1]]
    for i in range(1, len(path)):
        score = score + table.trans[idx[i - 1], idx[i]] + emissions[i, idx[i]]
    return score


def crf_nll(emissions: torch.Tensor, table: TransitionTable, path: Sequence[int]) -> torch.Tensor:
    """Negative log-likelihood of a gold path; non-negative up to rounding."""
    return crf_log_partition(emissions, table) - crf_path_score(emissions, table, path)


def crf_viterbi(emissions: torch.Tensor, table: TransitionTable) -> list[int]:
    """Highest-scoring tag path.

    Among equal-scoring paths the lexicographically smallest tag-index
    sequence wins, compared from the first position onward. The suffix values
    are computed right to left, then the path is built left to right taking
    the smallest state that attains the optimum at each step.
    """
    _check_emissions(emissions, table)
    em = emissions.detach().numpy()
    trans = table.trans.detach().numpy()
    start = table.start.detach().numpy()
    stop = table.stop.detach().numpy()
    n, t = em.shape

    # suffix[i][s]: best score of positions i..n-1 given state s at position i.
    suffix = np.empty((n, t), dtype=np.float64)
    suffix[n - 1] = em[n - 1] + stop
    for i in range(n - 2, -1, -1):
        suffix[i] = em[i] + (trans + suffix[i + 1][None, :]).max(axis=1)

    path = [int(np.argmax(start + suffix[0]))]
    for i in range(1, n):
        path.append(int(np.argmax(trans[path[-1]] + suffix[i])))
    return path


COLLAPSED_ROLES = (
    "O>B",
    "O>O",
    "B>I-same",
    "B>B",
    "B>O",
    "I>I-same",
    "I>B",
    "I>O",
    ">I-diff",
)


@dataclass(frozen=True)
class CollapsedTransitions:
    """Nine role scores shared across all event types, in COLLAPSED_ROLES order."""

    values: torch.Tensor

    def __post_init__(self) -> None:
        if self.values.shape != (len(COLLAPSED_ROLES),):
            raise ValidationError(f"collapsed table needs {len(COLLAPSED_ROLES)} values")

    @staticmethod
    def zeros() -> "CollapsedTransitions":
        return CollapsedTransitions(torch.zeros(len(COLLAPSED_ROLES), dtype=DTYPE))

    def value(self, role: str) -> torch.Tensor:
        return self.values[COLLAPSED_ROLES.index(role)]


def _role_of(tag_a: str, tag_b: str) -> str:
    role_a, type_a = (tag_a[0], tag_a[2:]) if tag_a != "O" else ("O", None)
    role_b, type_b = (tag_b[0], tag_b[2:]) if tag_b != "O" else ("O", None)
    if role_a == "O":
        # A dangling I opens a mention under lenient decoding, so entering I
        # from O scores like entering B.
        return "O>O" if role_b == "O" else "O>B"
    if role_b == "O":
        return f"{role_a}>O"
    if role_b == "B":
        return f"{role_a}>B"
    if type_a == type_b:
        return f"{role_a}>I-same"
    return ">I-diff"


def _role_masks(tags: tuple[str, ...]) -> torch.Tensor:
    t = len(tags)
    masks = torch.zeros(len(COLLAPSED_ROLES), t, t, dtype=DTYPE)
    for i, a in enumerate(tags):
        for j, b in enumerate(tags):
            masks[COLLAPSED_ROLES.index(_role_of(a, b)), i, j] = 1.0
    return masks


def expand_collapsed(ct: CollapsedTransitions, schema: Schema) -> TransitionTable:
    """Spread the nine role scores over the full tag-pair table. Start and
    stop scores are zero; roles only describe interior transitions."""
    tags = bio_tags(schema)
    masks = _role_masks(tags)
    trans = (ct.values[:, None, None] * masks).sum(dim=0)
    t = len(tags)
    return TransitionTable(tags, trans, torch.zeros(t, dtype=DTYPE), torch.zeros(t, dtype=DTYPE))


def emissions_from_type_logits(type_logits: torch.Tensor, schema: Schema) -> torch.Tensor:
    """Spread per-type logits (non-event class in the last column) onto BIO
    emissions: B and I variants share their type's logit, O takes the
    non-event logit."""
    n_types = len(schema)
    if type_logits.ndim != 2 or type_logits.shape[1] != n_types + 1:
        raise ValidationError(f"expected [N, {n_types + 1}] type logits")
    index = [n_types]
    for i in range(n_types):
        index.extend([i, i])
    return type_logits[:, index]


def cdt_decode(
    type_logits: torch.Tensor, ct: CollapsedTransitions, schema: Schema
) -> list[str]:
    """Viterbi decode with the expanded collapsed table. Inference-only: the
    result is a tag path and nothing here is part of a training graph."""
    table = expand_collapsed(ct, schema)
    emissions = emissions_from_type_logits(type_logits.detach(), schema)
    path = crf_viterbi(emissions, table)
    return [table.tags[i] for i in path]


def pa_transitions(
    prototypes: Mapping[str, torch.Tensor], bilinear: torch.Tensor, schema: Schema
) -> TransitionTable:
    """Transition table scored from type prototypes: the score for moving
    between two tags is a bilinear form over their types' prototype vectors,
    with O mapped to the non-event prototype. Start and stop scores are zero.
    Fully differentiable in both the prototypes and the bilinear weights."""
    types = list(schema.types) + [NA_LABEL]
    missing = [t for t in types if t not in prototypes]
    if missing:
        raise ValidationError(f"missing prototypes for transition scoring: {missing}")
    p = torch.stack([prototypes[t] for t in types])
    if bilinear.shape != (p.shape[1], p.shape[1]):
        raise ValidationError("bilinear weight shape does not match prototype width")
    type_scores = p @ bilinear @ p.T
    tags = bio_tags(schema)
    na_idx = len(schema)
    tag_to_type = [na_idx]
    for i in range(len(schema)):
        tag_to_type.extend([i, i])
    idx = torch.tensor(tag_to_type, dtype=torch.long)
    trans = type_scores[idx][:, idx]
    t = len(tags)
    return TransitionTable(tags, trans, torch.zeros(t, dtype=DTYPE), torch.zeros(t, dtype=DTYPE))
