"""Training primitives: losses, contrastive logits, queue, and optimizer.

The contrastive branch scores a query against keys of each type by averaging
negated distances. Keys come either from the rest of the batch (small train
sets) or from a FIFO queue filled by a momentum encoder (large train sets).
The optimizer is Adam with decoupled weight decay, a linear warmup/decay
schedule, and global gradient-norm clipping.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import torch

from .elements import DistanceSpec, Repr, pairwise_distance, stack_reprs
from .exceptions import ConfigError, ValidationError
from .sampling import episode_split  # re-exported: episodes feed prototypical branches

__all__ = [
    "ce_loss",
    "CLQueue",
    "inbatch_cl_logits",
    "moco_cl_logits",
    "grouped_cl_logits",
    "fused_loss",
    "select_cl_mode",
    "OptimizerSpec",
    "linear_lr",
    "clip_gradients",
    "AdamW",
    "episode_split",
    "INBATCH_SENTENCE_LIMIT",
    "FULL_SCALE_LR_GRID",
    "FULL_SCALE_TAU_GRID",
    "FULL_SCALE_QUEUE_SIZES",
]

# Below this many train sentences the batch itself supplies contrastive keys;
# at or above it a momentum-encoded queue takes over.
INBATCH_SENTENCE_LIMIT = 128

# Reference grids for full-scale (pretrained-encoder) runs; the desk-scale
# defaults baked into the estimator differ.
FULL_SCALE_LR_GRID = (1e-5, 2e-5, 5e-5, 1e-4)
FULL_SCALE_TAU_GRID = (0.1, 0.2, 0.3)
FULL_SCALE_QUEUE_SIZES = (2048, 8192)


def ce_loss(logits: torch.Tensor, gold: int) -> torch.Tensor:
    """Cross entropy of a single sample: softmax over logits, negative log of
    the gold entry."""
    if logits.ndim != 1:
        raise ValidationError("ce_loss expects a 1-D logit vector")
    if not 0 <= gold < logits.shape[0]:
        raise ValidationError(f"gold index {gold} out of range")
    return -torch.log_softmax(logits, dim=0)[gold]


class CLQueue:
    """Bounded FIFO of (representation, label) pairs holding contrastive keys."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValidationError("queue capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[tuple[Repr, str]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, rep: Repr, label: str) -> None:
        self._items.append((rep.detach(), label))

    def extend(self, pairs: Iterable[tuple[Repr, str]]) -> None:
        for rep, label in pairs:
            self.push(rep, label)

    def items(self) -> list[tuple[Repr, str]]:
        return list(self._items)

    def labels(self) -> list[str]:
        return [label for _, label in self._items]


def select_cl_mode(n_train_sentences: int) -> str:
    """'inbatch' below the sentence limit, 'moco' at or above it."""
    return "inbatch" if n_train_sentences < INBATCH_SENTENCE_LIMIT else "moco"


def grouped_cl_logits(
    queries: Repr,
    keys: Repr,
    key_labels: Sequence[str],
    dspec: DistanceSpec,
    exclude: torch.Tensor | None = None,
) -> tuple[list[str], torch.Tensor, torch.Tensor]:
    """Vectorized contrastive logits.

    Returns the ordered label list (first-appearance order over keys), a
    [Q, L] matrix of per-type means of negated distances, and a [Q, L] bool
    mask marking which (query, type) cells had at least one admissible key.
    ``exclude`` is a [Q, K] bool mask removing specific query/key pairs, used
    to keep a sample from being its own key.
    """
    n_keys = len(key_labels)
    if n_keys == 0:
        raise ValidationError("no contrastive keys available")
    scores = -pairwise_distance(dspec, queries, keys)  # [Q, K]
    keep = torch.ones_like(scores, dtype=torch.bool) if exclude is None else ~exclude
    labels: list[str] = []
    for lab in key_labels:
        if lab not in labels:
            labels.append(lab)
    cols: dict[str, list[int]] = {lab: [] for lab in labels}
    for j, lab in enumerate(key_labels):
        cols[lab].append(j)
    per_label = []
    valid = []
    for lab in labels:
        idx = torch.tensor(cols[lab], dtype=torch.long)
        sub = scores[:, idx]
        sub_keep = keep[:, idx]
        count = sub_keep.sum(dim=1)
        total = (sub * sub_keep).sum(dim=1)
        per_label.append(total / count.clamp(min=1))
        valid.append(count > 0)
    return labels, torch.stack(per_label, dim=1), torch.stack(valid, dim=1)


def inbatch_cl_logits(
    batch: Sequence[tuple[Repr, str]], i: int, dspec: DistanceSpec
) -> dict[str, torch.Tensor]:
    """Contrastive logits for batch sample i against the rest of the batch:
    per type, the mean of negated distances to same-type samples other than i.
    Types with no other sample are omitted."""
    if len(batch) < 2:
        raise ValidationError("in-batch contrastive logits need at least two samples")
    if not 0 <= i < len(batch):
        raise ValidationError(f"query index {i} out of range")
    query = stack_reprs([batch[i][0]])
    keys = stack_reprs([rep for rep, _ in batch])
    key_labels = [lab for _, lab in batch]
    exclude = torch.zeros(1, len(batch), dtype=torch.bool)
    exclude[0, i] = True
    labels, logits, valid = grouped_cl_logits(query, keys, key_labels, dspec, exclude)
    return {lab: logits[0, j] for j, lab in enumerate(labels) if bool(valid[0, j])}


def moco_cl_logits(
    query: Repr, queue: CLQueue, dspec: DistanceSpec
) -> dict[str, torch.Tensor]:
    """Contrastive logits against the queue: per type, the mean of negated
    distances to queued keys. Types absent from the queue are omitted."""
    items = queue.items()
    if not items:
        raise ValidationError("contrastive queue is empty")
    q = stack_reprs([query])
    keys = stack_reprs([rep for rep, _ in items])
    key_labels = [lab for _, lab in items]
    labels, logits, valid = grouped_cl_logits(q, keys, key_labels, dspec)
    return {lab: logits[0, j] for j, lab in enumerate(labels) if bool(valid[0, j])}


def fused_loss(branch_losses: Mapping[str, torch.Tensor]) -> torch.Tensor:
    """Exact unweighted sum of branch losses, in mapping order."""
    if not branch_losses:
        raise ValidationError("no branch losses to fuse")
    total = None
    for loss in branch_losses.values():
        total = loss if total is None else total + loss
    return total


@dataclass(frozen=True)
class OptimizerSpec:
    """Optimization protocol: Adam with decoupled weight decay, linear
    warmup/decay, and global-norm clipping."""

    lr: float
    total_steps: int
    weight_decay: float = 1e-5
    warmup_frac: float = 0.1
    batch_size: int = 128
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("lr, total_steps and batch_size must be positive")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigError("warmup_frac must lie in [0, 1]")
        if self.weight_decay < 0 or self.clip_norm <= 0:
            raise ConfigError("weight_decay must be >= 0 and clip_norm > 0")


def linear_lr(spec: OptimizerSpec, step: int) -> float:
    """Learning rate for 1-based ``step``: linear ramp over the warmup span,
    then linear decay to zero at the final step."""
    if not 1 <= step <= spec.total_steps:
        raise ValidationError(f"step {step} outside [1, {spec.total_steps}]")
    warmup = max(spec.warmup_frac * spec.total_steps, 1.0)
    decay_den = max(spec.total_steps - warmup, 1.0)
    return spec.lr * min(step / warmup, (spec.total_steps - step) / decay_den)


def clip_gradients(grads: Mapping[str, torch.Tensor], max_norm: float) -> dict[str, torch.Tensor]:
    """Scale all gradients together so their global L2 norm is at most max_norm."""
    if not grads:
        return {}
    total = torch.sqrt(sum((g**2).sum() for g in grads.values()))
    if float(total) > max_norm:
        scale = max_norm / float(total)
        return {k: g * scale for k, g in grads.items()}
    return dict(grads)


class AdamW:
    """Adam with decoupled weight decay over a named parameter dict."""

    def __init__(self, params: Mapping[str, torch.Tensor], spec: OptimizerSpec):
        self.params = dict(params)
        self.spec = spec
        self.step_count = 0
        self._m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self._v = {k: torch.zeros_like(p) for k, p in self.params.items()}

    @torch.no_grad()
    def step(self, grads: Mapping[str, torch.Tensor]) -> float:
        """Apply one clipped, scheduled update. Returns the learning rate used."""
        self.step_count += 1
        lr_t = linear_lr(self.spec, self.step_count)
        grads = clip_gradients(grads, self.spec.clip_norm)
        s = self.spec
        bc1 = 1.0 - s.beta1**self.step_count
        bc2 = 1.0 - s.beta2**self.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m.mul_(s.beta1).add_(g, alpha=1.0 - s.beta1)
            v.mul_(s.beta2).addcmul_(g, g, value=1.0 - s.beta2)
            p.add_(p, alpha=-lr_t * s.weight_decay)
            p.addcdiv_(m / bc1, (v / bc2).sqrt() + s.eps, value=-lr_t)
        return lr_t
