"""Trainable few-shot event detector.

The estimator assembles a method from the design elements: prototype source,
aggregation form, transfer function, distance, optional CRF, and optional
contrastive branch. Training minimizes the unweighted sum of one loss per
configured branch; inference labels each token (or candidate span) by the
nearest prototype over the union of every branch's prototype set.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .corpus import (
    NA_LABEL,
    SEQUENCE_LABELING,
    SPAN_CLASSIFICATION,
    Dataset,
    Mention,
    Schema,
    Sentence,
    decode_bio,
    encode_bio,
    enumerate_spans,
)
from .crf import (
    CollapsedTransitions,
    TransitionTable,
    bio_tags,
    cdt_decode,
    crf_nll,
    crf_viterbi,
    emissions_from_type_logits,
    expand_collapsed,
    pa_transitions,
)
from .elements import (
    DistanceSpec,
    GaussianRepr,
    PrototypeSet,
    Repr,
    TransferSpec,
    build_prototypes,
    pairwise_distance,
    stack_reprs,
    transfer,
)
from .encoding import (
    DTYPE,
    EncoderConfig,
    EncoderParams,
    encode,
    label_embed,
    momentum_update,
    save_checkpoint,
    seeded_generator,
    span_repr,
    window,
)
from .exceptions import ConfigError, TrainingDivergedError, ValidationError
from .metrics import Scores, micro_f1
from .training import (
    AdamW,
    CLQueue,
    OptimizerSpec,
    episode_split,
    fused_loss,
    grouped_cl_logits,
    select_cl_mode,
)

MASKED_LOGIT = -1e30
MISSING_EMISSION = -30.0

BRANCH_ORDER = ("linear", "label", "mention", "merged")

STEPS_SCALED = 200
STEPS_UNSCALED = 500


def derived_int(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class Unit:
    """A classification unit: a half-open span in one sentence with its label."""

    sent: int
    start: int
    end: int
    label: str

    def span_key(self) -> tuple[int, int, int]:
        return (self.sent, self.start, self.end)


@dataclass
class BatchPlan:
    """A frozen draw of one training step: which sentences and units enter
    the losses. Deterministic given the step RNG, independent of parameters."""

    sentence_ids: list[int]
    units: list[Unit]  # trigger units then sampled non-event units


class FewShotEventDetector(BaseEstimator):
    """Prototype-based few-shot event detector with configurable elements.

    Parameters mirror the design-element matrix. ``prototype_source`` 'none'
    trains a plain linear classification head instead of prototypes.
    ``aggregation`` 'loss' and 'score+loss' split the sources into separate
    loss branches; with the contrastive branch disabled, 'score+loss'
    degenerates to the label branch alone. ``steps=0`` resolves to 200 for
    scaled distances and 500 otherwise.
    """

    def __init__(
        self,
        prototype_source: str = "both",
        aggregation: str = "score+loss",
        distance: str = "SS",
        transfer: str = "N",
        tau: float = 0.2,
        proj_dim: int | None = None,
        crf: str = "none",
        cl_mode: str = "auto",
        queue_capacity: int = 256,
        momentum: float = 0.999,
        support_shots: int = 2,
        query_shots: int = 3,
        na_ratio: int = 3,
        na_proto_cap: int = 512,
        n_buckets: int = 4096,
        dim: int = 64,
        hidden: int = 0,
        context_radius: int = 2,
        window_width: int = 128,
        lr: float = 0.05,
        lr_grid: tuple[float, ...] | None = None,
        steps: int = 0,
        batch_size: int = 128,
        weight_decay: float = 1e-5,
        warmup_frac: float = 0.1,
        clip_norm: float = 1.0,
        max_span_len: int = 3,
        seed: int = 0,
    ):
        self.prototype_source = prototype_source
        self.aggregation = aggregation
        self.distance = distance
        self.transfer = transfer
        self.tau = tau
        self.proj_dim = proj_dim
        self.crf = crf
        self.cl_mode = cl_mode
        self.queue_capacity = queue_capacity
        self.momentum = momentum
        self.support_shots = support_shots
        self.query_shots = query_shots
        self.na_ratio = na_ratio
        self.na_proto_cap = na_proto_cap
        self.n_buckets = n_buckets
        self.dim = dim
        self.hidden = hidden
        self.context_radius = context_radius
        self.window_width = window_width
        self.lr = lr
        self.lr_grid = lr_grid
        self.steps = steps
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.warmup_frac = warmup_frac
        self.clip_norm = clip_norm
        self.max_span_len = max_span_len
        self.seed = seed

    # ------------------------------------------------------------------ config

    def _distance_spec(self) -> DistanceSpec:
        tau = self.tau if self.distance in ("SS", "SEU") else None
        return DistanceSpec(self.distance, tau)

    def _transfer_spec(self) -> TransferSpec:
        return TransferSpec(self.transfer, self.proj_dim)

    def _resolve_branches(self, n_train_sentences: int) -> tuple[tuple[str, ...], str]:
        """Returns (branches, resolved CL mode)."""
        src = self.prototype_source
        agg = self.aggregation
        if src not in ("none", "mentions", "label", "both"):
            raise ConfigError(f"unknown prototype source {src!r}")
        if agg not in ("feature", "score", "loss", "score+loss"):
            raise ConfigError(f"unknown aggregation {agg!r}")
        if self.crf not in ("none", "vanilla", "cdt", "pa"):
            raise ConfigError(f"unknown crf mode {self.crf!r}")
        if self.cl_mode not in ("none", "inbatch", "moco", "auto"):
            raise ConfigError(f"unknown cl mode {self.cl_mode!r}")
        cl = self.cl_mode
        if cl == "auto":
            cl = select_cl_mode(n_train_sentences) if src in ("mentions", "both") else "none"
        if cl != "none" and src not in ("mentions", "both"):
            raise ConfigError("a contrastive branch requires mentions among the sources")
        if src == "none":
            if cl != "none":
                raise ConfigError("the linear head does not take a contrastive branch")
            return ("linear",), "none"
        if src == "label":
            return ("label",), "none"
        if src == "mentions":
            if cl != "none" and agg == "feature":
                raise ConfigError("contrastive learning is score-level; use aggregation='score'")
            return ("mention",), cl
        # both sources
        if agg in ("loss", "score+loss"):
            if cl == "none":
                if agg == "score+loss":
                    # Contrastive branch disabled: only the label branch remains.
                    return ("label",), "none"
                return ("label", "mention"), "none"
            return ("label", "mention"), cl
        if cl != "none":
            raise ConfigError(
                "both-source contrastive methods merge at the loss level; "
                "use aggregation 'loss' or 'score+loss'"
            )
        return ("merged",), "none"

    def _validate_for_fit(self, train: Dataset) -> None:
        if len(train) == 0:
            raise ValidationError("train dataset is empty")
        if len(train.schema) == 0:
            raise ValidationError("train schema is empty")
        if train.paradigm == SPAN_CLASSIFICATION and self.crf != "none":
            raise ConfigError("CRF modules apply to the sequence-labeling paradigm only")
        if self.momentum < 0 or self.momentum > 1:
            raise ConfigError("momentum must lie in [0, 1]")
        if self.na_ratio < 1:
            raise ConfigError("na_ratio must be >= 1")

    # ------------------------------------------------------------- parameters

    def _encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.n_buckets, self.dim, self.hidden, self.context_radius)

    def _init_params(
        self, schema: Schema, branches: tuple[str, ...], encoder_init: EncoderParams | None
    ) -> dict[str, torch.Tensor]:
        params: dict[str, torch.Tensor] = {}
        enc = EncoderParams.init(self._encoder_config(), self.seed)
        if encoder_init is not None:
            if encoder_init.config != self._encoder_config():
                raise ConfigError("encoder_init was built with a different encoder shape")
            enc = encoder_init.clone()
        for name, t in enc.named_tensors():
            params[f"encoder.{name}"] = t.clone()

        def normal(name: str, shape: tuple[int, ...], std: float) -> torch.Tensor:
            g = seeded_generator(self.seed, name)
            return torch.normal(0.0, std, shape, generator=g, dtype=DTYPE)

        tspec = self._transfer_spec()
        for pname, shape in tspec.param_shapes(self.dim).items():
            if pname.endswith("_b"):
                params[f"transfer.{pname}"] = torch.zeros(shape, dtype=DTYPE)
            else:
                params[f"transfer.{pname}"] = normal(f"transfer.{pname}", shape, (1.0 / self.dim) ** 0.5)
        for branch in branches:
            if branch == "linear":
                t = len(schema) + 1
                params["linear.w"] = normal("linear.w", (t, self.dim), (1.0 / self.dim) ** 0.5)
                params["linear.b"] = torch.zeros(t, dtype=DTYPE)
            else:
                params[f"null.{branch}"] = normal(f"null.{branch}", (self.dim,), 0.5)
        n_tags = len(bio_tags(schema))
        if self.crf == "vanilla":
            params["crf.trans"] = torch.zeros(n_tags, n_tags, dtype=DTYPE)
            params["crf.start"] = torch.zeros(n_tags, dtype=DTYPE)
            params["crf.stop"] = torch.zeros(n_tags, dtype=DTYPE)
        elif self.crf == "cdt":
            params["crf.collapsed"] = torch.zeros(9, dtype=DTYPE)
        elif self.crf == "pa":
            out = tspec.resolved_out_dim(self.dim)
            params["crf.bilinear"] = torch.zeros(out, out, dtype=DTYPE)
        return params

    def _encoder_view(self, params: Mapping[str, torch.Tensor]) -> EncoderParams:
        tensors = {n: params[f"encoder.{n}"] for n in EncoderParams.FIELDS}
        return EncoderParams(self._encoder_config(), tensors)

    def _transfer_params(self, params: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
        return {
            name.split(".", 1)[1]: t for name, t in params.items() if name.startswith("transfer.")
        }

    def _apply_transfer(self, params: Mapping[str, torch.Tensor], h: torch.Tensor) -> Repr:
        return transfer(self._transfer_spec(), self._transfer_params(params), h)

    # ------------------------------------------------------------------- data

    def _trigger_units(self, dataset: Dataset, sent_indices: Iterable[int]) -> list[Unit]:
        units = []
        for i in sent_indices:
            for m in dataset.sentences[i].mentions:
                units.append(Unit(i, m.start, m.end, m.label))
        return units

    def _na_candidates(self, dataset: Dataset, sent_indices: Iterable[int]) -> list[Unit]:
        units = []
        for i in sent_indices:
            s = dataset.sentences[i]
            if dataset.paradigm == SEQUENCE_LABELING:
                covered = s.trigger_positions()
                units.extend(
                    Unit(i, p, p + 1, NA_LABEL) for p in range(len(s)) if p not in covered
                )
            else:
                gold = {(m.start, m.end) for m in s.mentions}
                units.extend(
                    Unit(i, a, b, NA_LABEL)
                    for a, b in enumerate_spans(len(s), self.max_span_len)
                    if (a, b) not in gold
                )
        return units

    def _draw_batch(self, rng: random.Random) -> BatchPlan:
        pool = self._batch_pool
        n = min(self.batch_size, len(pool))
        chosen = rng.sample(pool, n)
        triggers = self._trigger_units(self._train, chosen)
        candidates = self._na_candidates(self._train, chosen)
        k = min(self.na_ratio * max(1, len(triggers)), len(candidates))
        nas = rng.sample(candidates, k) if k else []
        return BatchPlan(chosen, triggers + nas)

    def _encode_batch(
        self, params: Mapping[str, torch.Tensor], sent_indices: Sequence[int]
    ) -> dict[int, torch.Tensor]:
        enc = self._encoder_view(params)
        out: dict[int, torch.Tensor] = {}
        for i in sent_indices:
            s = self._train.sentences[i]
            out[i] = encode(enc, s.tokens)
        return out

    def _unit_reps(
        self,
        params: Mapping[str, torch.Tensor],
        units: Sequence[Unit],
        reps_by_sent: Mapping[int, torch.Tensor],
    ) -> torch.Tensor:
        enc = None
        rows = []
        for u in units:
            sent = self._train.sentences[u.sent]
            if len(sent) <= self.window_width:
                rows.append(span_repr(reps_by_sent[u.sent], u.start, u.end))
            else:
                # Long sentences are cropped around the unit before encoding.
                if enc is None:
                    enc = self._encoder_view(params)
                center = (u.start + u.end - 1) // 2
                cropped, new_center = window(sent, center, self.window_width)
                shift = center - new_center
                local = encode(enc, cropped.tokens)
                rows.append(span_repr(local, u.start - shift, u.end - shift))
        return torch.stack(rows)

    # ----------------------------------------------------------------- losses

    def _label_reps(self, params: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
        enc = self._encoder_view(params)
        return {t: label_embed(enc, self._schema.label_texts[t]) for t in self._schema.types}

    def _gold_index(self, label: str) -> int:
        return self._schema.index(label) if label != NA_LABEL else len(self._schema)

    def _matrix_ce(self, logits: torch.Tensor, gold: Sequence[int]) -> torch.Tensor:
        idx = torch.tensor(list(gold), dtype=torch.long)
        rows = -torch.log_softmax(logits, dim=1)[torch.arange(len(gold)), idx]
        return rows.mean()

    def _label_branch_keys(self, params: Mapping[str, torch.Tensor]) -> Repr:
        label_reps = self._label_reps(params)
        raw = torch.stack(
            [label_reps[t] for t in self._schema.types] + [params["null.label"]]
        )
        return self._apply_transfer(params, raw)

    def _label_logits(self, params: Mapping[str, torch.Tensor], queries: Repr) -> torch.Tensor:
        keys = self._label_branch_keys(params)
        return -pairwise_distance(self._distance_spec(), queries, keys)

    def _support_material(
        self, params: Mapping[str, torch.Tensor]
    ) -> tuple[dict[str, list[torch.Tensor]], dict[int, torch.Tensor]]:
        reps = self._encode_batch(params, self._support_sent_indices)
        per_type: dict[str, list[torch.Tensor]] = {t: [] for t in self._schema.types}
        raw = self._unit_reps(params, self._support_units, reps)
        for u, row in zip(self._support_units, raw):
            per_type[u.label].append(row)
        return per_type, reps

    def _pl_keys(
        self, params: Mapping[str, torch.Tensor], include_label: bool
    ) -> tuple[Repr, list[str]]:
        """Prototype keys for prototypical branches, in schema order with the
        non-event null last. Feature aggregation means in the transfer space."""
        per_type, _ = self._support_material(params)
        raws: list[torch.Tensor] = []
        labels: list[str] = []
        label_reps = self._label_reps(params) if include_label else None
        for t in self._schema.types:
            if not per_type[t]:
                raise ValidationError(f"type {t!r} has an empty support set")
            for row in per_type[t]:
                raws.append(row)
                labels.append(t)
            if include_label:
                raws.append(label_reps[t])
                labels.append(t)
        null_name = "null.merged" if include_label else "null.mention"
        raws.append(params[null_name])
        labels.append(NA_LABEL)
        keys = self._apply_transfer(params, torch.stack(raws))
        return keys, labels

    def _pl_logits(
        self, params: Mapping[str, torch.Tensor], queries: Repr, include_label: bool
    ) -> torch.Tensor:
        """[Q, T+1] logits for prototypical branches (feature or score level)."""
        keys, key_labels = self._pl_keys(params, include_label)
        dspec = self._distance_spec()
        if self._pl_feature_level():
            grouped = self._feature_means(keys, key_labels)
            return -pairwise_distance(dspec, queries, grouped)
        labels, logits, valid = grouped_cl_logits(queries, keys, key_labels, dspec)
        order = [labels.index(t) for t in list(self._schema.types) + [NA_LABEL]]
        assert bool(valid.all())
        return logits[:, order]

    def _pl_feature_level(self) -> bool:
        return self.aggregation == "feature"

    def _feature_means(self, keys: Repr, key_labels: Sequence[str]) -> Repr:
        """Mean per type over already-transferred keys, schema order, null last."""
        order = list(self._schema.types) + [NA_LABEL]
        means = []
        for t in order:
            idx = [j for j, lab in enumerate(key_labels) if lab == t]
            if isinstance(keys, GaussianRepr):
                means.append(
                    GaussianRepr(keys.mean[idx].mean(dim=0), keys.var[idx].mean(dim=0))
                )
            else:
                means.append(keys[idx].mean(dim=0))
        return stack_reprs(means)

    def _cl_key_material(
        self,
        params: Mapping[str, torch.Tensor],
        plan: BatchPlan,
        reps_by_sent: Mapping[int, torch.Tensor],
    ) -> tuple[Repr | None, list[str], list[Unit] | None]:
        """Contrastive keys, their labels, and their unit identities (None for
        queue keys, which can never coincide with a current query)."""
        if self._cl_resolved == "inbatch":
            if len(plan.units) < 2:
                raise ValidationError("in-batch contrastive learning needs at least two units")
            raw = self._unit_reps(params, plan.units, reps_by_sent)
            keys = self._apply_transfer(params, raw)
            return keys, [u.label for u in plan.units], list(plan.units)
        items = self._queue.items()
        if not items:
            return None, [], None
        return stack_reprs([r for r, _ in items]), [lab for _, lab in items], None

    @staticmethod
    def _exclusion(
        query_units: Sequence[Unit], key_units: Sequence[Unit] | None
    ) -> torch.Tensor | None:
        """[Q, K] mask marking keys that are the same span as the query."""
        if key_units is None:
            return None
        key_index: dict[tuple[int, int, int], list[int]] = {}
        for j, u in enumerate(key_units):
            key_index.setdefault(u.span_key(), []).append(j)
        mask = torch.zeros(len(query_units), len(key_units), dtype=torch.bool)
        for i, u in enumerate(query_units):
            for j in key_index.get(u.span_key(), ()):
                mask[i, j] = True
        return mask

    def _cl_loss(
        self,
        params: Mapping[str, torch.Tensor],
        plan: BatchPlan,
        queries: Repr,
        reps_by_sent: Mapping[int, torch.Tensor],
    ) -> torch.Tensor:
        keys, key_labels, key_units = self._cl_key_material(params, plan, reps_by_sent)
        if keys is None:
            # Warm-up: queue still empty, the branch contributes nothing yet.
            return torch.zeros((), dtype=DTYPE)
        exclude = self._exclusion(plan.units, key_units)
        dspec = self._distance_spec()
        labels, logits, valid = grouped_cl_logits(queries, keys, key_labels, dspec, exclude)
        col = {lab: j for j, lab in enumerate(labels)}
        gold_cols = []
        usable_rows = []
        for i, u in enumerate(plan.units):
            j = col.get(u.label)
            if j is not None and bool(valid[i, j]):
                usable_rows.append(i)
                gold_cols.append(j)
        if not usable_rows:
            return torch.zeros((), dtype=DTYPE)
        masked = torch.where(valid, logits, torch.full_like(logits, MASKED_LOGIT))
        rows = torch.tensor(usable_rows, dtype=torch.long)
        idx = torch.tensor(gold_cols, dtype=torch.long)
        ce = -torch.log_softmax(masked[rows], dim=1)[torch.arange(len(rows)), idx]
        return ce.mean()

    def _branch_unit_logits(
        self,
        branch: str,
        params: Mapping[str, torch.Tensor],
        plan: BatchPlan,
        queries: Repr,
        reps_by_sent: Mapping[int, torch.Tensor] | None = None,
        query_units: Sequence[Unit] | None = None,
    ) -> torch.Tensor:
        """[N, T+1] per-unit type logits for CE or CRF emissions."""
        if branch == "linear":
            return queries @ params["linear.w"].T + params["linear.b"]
        if branch == "label":
            return self._label_logits(params, queries)
        if branch == "merged":
            return self._pl_logits(params, queries, include_label=True)
        if self._cl_resolved == "none":
            return self._pl_logits(params, queries, include_label=False)
        keys, key_labels, key_units = self._cl_key_material(params, plan, reps_by_sent)
        order = list(self._schema.types) + [NA_LABEL]
        missing = torch.full((self._q_len(queries),), MISSING_EMISSION, dtype=DTYPE)
        if keys is None:
            return torch.stack([missing for _ in order], dim=1)
        exclude = self._exclusion(query_units, key_units) if query_units is not None else None
        labels, logits, valid = grouped_cl_logits(
            queries, keys, key_labels, self._distance_spec(), exclude
        )
        out_cols = []
        for t in order:
            if t in labels:
                j = labels.index(t)
                colv = torch.where(valid[:, j], logits[:, j], missing)
            else:
                colv = missing
            out_cols.append(colv)
        return torch.stack(out_cols, dim=1)

    @staticmethod
    def _q_len(queries: Repr) -> int:
        return queries.mean.shape[0] if isinstance(queries, GaussianRepr) else queries.shape[0]

    def _transition_prototypes(
        self,
        params: Mapping[str, torch.Tensor],
        plan: BatchPlan,
        reps_by_sent: Mapping[int, torch.Tensor],
    ) -> dict[str, torch.Tensor]:
        """Feature-level prototype vectors for transition scoring, one per
        type plus the non-event class. Gaussians contribute their means."""

        def as_vec(r: Repr) -> torch.Tensor:
            return r.mean if isinstance(r, GaussianRepr) else r

        branch = self._crf_branch
        protos: dict[str, torch.Tensor] = {}
        if branch == "label":
            mat = as_vec(self._label_branch_keys(params))
            for j, t in enumerate(list(self._schema.types) + [NA_LABEL]):
                protos[t] = mat[j]
            return protos
        if branch == "merged" or (branch == "mention" and self._cl_resolved == "none"):
            keys, key_labels = self._pl_keys(params, include_label=branch == "merged")
            mat = as_vec(keys)
            for t in list(self._schema.types) + [NA_LABEL]:
                idx = [j for j, lab in enumerate(key_labels) if lab == t]
                protos[t] = mat[idx].mean(dim=0)
            return protos
        # Contrastive branch: average the current batch units per type, with
        # the learnable null standing in for types absent from the batch.
        raw = self._unit_reps(params, plan.units, reps_by_sent)
        mat = as_vec(self._apply_transfer(params, raw))
        null = as_vec(self._apply_transfer(params, params["null.mention"][None, :]))[0]
        for t in list(self._schema.types) + [NA_LABEL]:
            idx = [j for j, u in enumerate(plan.units) if u.label == t]
            protos[t] = mat[idx].mean(dim=0) if idx else null
        return protos

    def _crf_table(
        self,
        params: Mapping[str, torch.Tensor],
        plan: BatchPlan,
        reps_by_sent: Mapping[int, torch.Tensor],
    ) -> TransitionTable:
        if self.crf == "vanilla":
            return TransitionTable(
                bio_tags(self._schema), params["crf.trans"], params["crf.start"], params["crf.stop"]
            )
        if self.crf == "pa":
            protos = self._transition_prototypes(params, plan, reps_by_sent)
            return pa_transitions(protos, params["crf.bilinear"], self._schema)
        raise ConfigError(f"no transition table for crf mode {self.crf!r}")

    def _crf_loss(
        self,
        params: Mapping[str, torch.Tensor],
        plan: BatchPlan,
        reps_by_sent: Mapping[int, torch.Tensor],
        detach_emissions: bool,
    ) -> torch.Tensor:
        """Sentence-level negative log-likelihood under the configured table.

        With ``detach_emissions`` the emissions enter the score graph as
        constants, which is how the collapsed table is fitted without
        influencing the branches.
        """
        token_units = []
        for i in plan.sentence_ids:
            token_units.extend(
                Unit(i, p, p + 1, NA_LABEL) for p in range(len(self._train.sentences[i]))
            )
        raw = self._unit_reps(params, token_units, reps_by_sent)
        tq = self._apply_transfer(params, raw) if self._crf_branch != "linear" else raw
        logits = self._branch_unit_logits(
            self._crf_branch, params, plan, tq, reps_by_sent, token_units
        )
        if detach_emissions:
            logits = logits.detach()
        table = (
            expand_collapsed(CollapsedTransitions(params["crf.collapsed"]), self._schema)
            if self.crf == "cdt"
            else self._crf_table(params, plan, reps_by_sent)
        )
        tag_index = {t: j for j, t in enumerate(bio_tags(self._schema))}
        nlls = []
        offset = 0
        for i in plan.sentence_ids:
            s = self._train.sentences[i]
            n = len(s)
            em = emissions_from_type_logits(logits[offset : offset + n], self._schema)
            gold = [tag_index[t] for t in encode_bio(s, self._schema)]
            nlls.append(crf_nll(em, table, gold))
            offset += n
        return torch.stack(nlls).mean()

    def _losses(
        self, params: Mapping[str, torch.Tensor], plan: BatchPlan
    ) -> tuple[dict[str, torch.Tensor], dict[str, torch.Tensor]]:
        """One loss per branch, plus auxiliary losses outside the branch sum."""
        reps_by_sent = self._encode_batch(params, plan.sentence_ids)
        raw = self._unit_reps(params, plan.units, reps_by_sent)
        gold = [self._gold_index(u.label) for u in plan.units]
        branch_losses: dict[str, torch.Tensor] = {}
        aux: dict[str, torch.Tensor] = {}
        queries_cache: dict[bool, Repr] = {}

        def queries(transferred: bool) -> Repr:
            if transferred not in queries_cache:
                queries_cache[transferred] = (
                    self._apply_transfer(params, raw) if transferred else raw
                )
            return queries_cache[transferred]

        crf_replaces = self._crf_branch if self.crf in ("vanilla", "pa") else None
        for branch in self._branches:
            q = queries(branch != "linear")
            if branch == crf_replaces:
                branch_losses[branch] = self._crf_loss(
                    params, plan, reps_by_sent, detach_emissions=False
                )
                continue
            if branch == "mention" and self._cl_resolved != "none":
                branch_losses[branch] = self._cl_loss(params, plan, q, reps_by_sent)
            else:
                logits = self._branch_unit_logits(
                    branch, params, plan, q, reps_by_sent, plan.units
                )
                branch_losses[branch] = self._matrix_ce(logits, gold)
        if self.crf == "cdt":
            aux["cdt"] = self._crf_loss(params, plan, reps_by_sent, detach_emissions=True)
        return branch_losses, aux

    # --------------------------------------------------------------- training

    def fit(
        self,
        X: Dataset,
        y: None = None,
        dev: Dataset | None = None,
        encoder_init: EncoderParams | None = None,
    ) -> "FewShotEventDetector":
        """Train on a (typically K-shot) dataset. ``dev`` drives learning-rate
        selection when ``lr_grid`` has more than one entry. ``encoder_init``
        warm-starts the encoder (heads always reinitialize)."""
        torch.set_num_threads(1)
        self._validate_for_fit(X)
        grid = tuple(self.lr_grid) if self.lr_grid else (self.lr,)
        if len(grid) > 1 and (dev is None or len(dev) == 0):
            raise ConfigError("learning-rate selection over a grid needs a dev set")
        best = None
        for lr in grid:
            state = self._fit_once(X, lr, encoder_init)
            if len(grid) == 1:
                best = (lr, state, None)
                break
            self._install(state)
            dev_f1 = self.evaluate(dev).f1
            if best is None or dev_f1 > best[2]:
                best = (lr, state, dev_f1)
        self.lr_ = best[0]
        self._install(best[1])
        return self

    def _fit_once(
        self, train: Dataset, lr: float, encoder_init: EncoderParams | None
    ) -> dict:
        self._train = train
        self._schema = train.schema
        self._branches, self._cl_resolved = self._resolve_branches(len(train))
        self._crf_branch = self._pick_crf_branch()
        params = self._init_params(self._schema, self._branches, encoder_init)

        self._support_units: list[Unit] = []
        self._support_sent_indices: list[int] = []
        self._batch_pool = list(range(len(train)))
        if self._needs_episode():
            counts = train.type_counts()
            min_count = min(counts[t] for t in train.schema.types)
            k_support = min(self.support_shots, min_count - 1)
            if k_support >= 1:
                support, query = episode_split(
                    train,
                    k_support,
                    self.query_shots,
                    derived_int(self.seed, "episode") % (2**31),
                )
                id_to_idx = {s.id: i for i, s in enumerate(train.sentences)}
                self._support_sent_indices = sorted(id_to_idx[s.id] for s in support.sentences)
                self._batch_pool = sorted(id_to_idx[s.id] for s in query.sentences)
                if not self._batch_pool:
                    # Degenerate split (support swallowed everything): query
                    # against the full train set rather than nothing.
                    self._batch_pool = list(range(len(train)))
            else:
                # Too few mentions to hold any out (e.g. 1-shot): the whole
                # train set serves as both support and query pool.
                self._support_sent_indices = list(range(len(train)))
            self._support_units = self._trigger_units(train, self._support_sent_indices)

        self._queue = CLQueue(self.queue_capacity)
        momentum_enc = None
        if self._cl_resolved == "moco":
            momentum_enc = self._encoder_view(params).clone()

        total_steps = self.steps or (
            STEPS_SCALED if self._distance_spec().scaled else STEPS_UNSCALED
        )
        opt_spec = OptimizerSpec(
            lr=lr,
            total_steps=total_steps,
            weight_decay=self.weight_decay,
            warmup_frac=self.warmup_frac,
            batch_size=self.batch_size,
            clip_norm=self.clip_norm,
        )
        optimizer = AdamW(params, opt_spec)
        rng = random.Random(derived_int(self.seed, "batch"))
        names = list(params)
        history: list[float] = []
        for step in range(1, total_steps + 1):
            for t in params.values():
                t.requires_grad_(True)
            plan = self._draw_batch(rng)
            branch_losses, aux = self._losses(params, plan)
            total = fused_loss(branch_losses)
            for a in aux.values():
                total = total + a
            if not bool(torch.isfinite(total)):
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            grads = torch.autograd.grad(
                total, [params[n] for n in names], allow_unused=True
            )
            grad_map = {
                n: (g if g is not None else torch.zeros_like(params[n]))
                for n, g in zip(names, grads)
            }
            for t in params.values():
                t.requires_grad_(False)
            optimizer.step(grad_map)
            history.append(float(total.detach()))
            if momentum_enc is not None:
                momentum_update(momentum_enc, self._encoder_view(params), self.momentum)
                self._push_keys(params, momentum_enc, plan)
        return {
            "params": params,
            "history": history,
            "queue": self._queue,
            "momentum": momentum_enc,
            "train": train,
            "branches": self._branches,
            "cl": self._cl_resolved,
            "crf_branch": self._crf_branch,
            "support_units": self._support_units,
            "support_sents": self._support_sent_indices,
        }

    def _needs_episode(self) -> bool:
        return any(b in ("mention", "merged") for b in self._branches) and self._cl_resolved == "none"

    def _pick_crf_branch(self) -> str | None:
        if self.crf == "none":
            return None
        for b in ("mention", "merged", "label", "linear"):
            if b in self._branches:
                return b
        return None

    @torch.no_grad()
    def _push_keys(
        self,
        params: Mapping[str, torch.Tensor],
        momentum_enc: EncoderParams,
        plan: BatchPlan,
    ) -> None:
        """Encode the step's units with the momentum encoder, transfer with the
        current primary transfer parameters, and enqueue them as keys."""
        reps = {}
        for i in plan.sentence_ids:
            reps[i] = encode(momentum_enc, self._train.sentences[i].tokens)
        saved_train = self._train
        rows = []
        for u in plan.units:
            sent = saved_train.sentences[u.sent]
            if len(sent) <= self.window_width:
                rows.append(span_repr(reps[u.sent], u.start, u.end))
            else:
                center = (u.start + u.end - 1) // 2
                cropped, new_center = window(sent, center, self.window_width)
                shift = center - new_center
                local = encode(momentum_enc, cropped.tokens)
                rows.append(span_repr(local, u.start - shift, u.end - shift))
        keys = self._apply_transfer(params, torch.stack(rows))
        for j, u in enumerate(plan.units):
            if isinstance(keys, GaussianRepr):
                self._queue.push(GaussianRepr(keys.mean[j], keys.var[j]), u.label)
            else:
                self._queue.push(keys[j], u.label)

    def _install(self, state: dict) -> None:
        self._train = state["train"]
        self._schema = state["train"].schema
        self._branches = state["branches"]
        self._cl_resolved = state["cl"]
        self._crf_branch = state["crf_branch"]
        self._support_units = state["support_units"]
        self._support_sent_indices = state["support_sents"]
        self._queue = state["queue"]
        self.params_ = state["params"]
        self.loss_history_ = state["history"]
        self.schema_ = self._schema
        self.cl_mode_ = self._cl_resolved
        self.branches_ = self._branches
        if self._branches == ("linear",):
            self.prototypes_ = None
            self._predict_keys = None
        else:
            self.prototypes_ = self._inference_prototypes()
            self._predict_keys = self._flatten_prototypes(self.prototypes_)

    # -------------------------------------------------------------- inference

    def _inference_prototypes(self) -> PrototypeSet:
        """Union of per-branch prototype sets under the final parameters."""
        params = self.params_
        sets: list[PrototypeSet] = []
        tspec_agg = "feature" if self.aggregation == "feature" else "score"
        for branch in self._branches:
            if branch == "linear":
                continue
            if branch == "label":
                label_reps = {
                    t: self._apply_transfer(params, r[None, :])
                    for t, r in self._label_reps(params).items()
                }
                label_reps = {t: self._row(r, 0) for t, r in label_reps.items()}
                sets.append(
                    build_prototypes(
                        self._schema,
                        "label",
                        "feature",
                        label_reps=label_reps,
                        null_repr=self._row(
                            self._apply_transfer(params, params["null.label"][None, :]), 0
                        ),
                    )
                )
            elif branch == "merged" or (branch == "mention" and self._cl_resolved == "none"):
                include_label = branch == "merged"
                keys, key_labels = self._pl_keys(params, include_label)
                mention_reps: dict[str, list[Repr]] = {t: [] for t in self._schema.types}
                for j, lab in enumerate(key_labels):
                    if lab != NA_LABEL:
                        mention_reps[lab].append(self._row(keys, j))
                null_name = "null.merged" if include_label else "null.mention"
                sets.append(
                    build_prototypes(
                        self._schema,
                        "mentions",
                        tspec_agg,
                        mention_reps=mention_reps,
                        null_repr=self._row(
                            self._apply_transfer(params, params[null_name][None, :]), 0
                        ),
                    )
                )
            else:
                sets.append(self._cl_inference_prototypes(params))
        if not sets:
            raise ValidationError("the linear head exposes no prototype set")
        merged = sets[0]
        for s in sets[1:]:
            merged = merged.merged(s)
        return merged

    def _cl_inference_prototypes(self, params: Mapping[str, torch.Tensor]) -> PrototypeSet:
        """Contrastive branches treat every annotated mention as a prototype;
        the non-event class is represented by a deterministic sample of
        non-trigger units (falling back to the null when none exist)."""
        all_idx = list(range(len(self._train)))
        reps_by_sent = self._encode_batch(params, all_idx)
        triggers = self._trigger_units(self._train, all_idx)
        mention_reps: dict[str, list[Repr]] = {t: [] for t in self._schema.types}
        na_reps: list[Repr] = []
        if triggers:
            raw = self._unit_reps(params, triggers, reps_by_sent)
            keys = self._apply_transfer(params, raw)
            for j, u in enumerate(triggers):
                mention_reps[u.label].append(self._row(keys, j))
        candidates = self._na_candidates(self._train, all_idx)
        rng = random.Random(derived_int(self.seed, "na-protos"))
        cap = min(self.na_proto_cap, len(candidates))
        chosen = rng.sample(candidates, cap) if cap else []
        if chosen:
            raw = self._unit_reps(params, chosen, reps_by_sent)
            keys = self._apply_transfer(params, raw)
            na_reps = [self._row(keys, j) for j in range(len(chosen))]
        return build_prototypes(
            self._schema,
            "mentions",
            "score",
            mention_reps=mention_reps,
            na_reps=na_reps or None,
            null_repr=self._row(
                self._apply_transfer(params, params["null.mention"][None, :]), 0
            ),
        )

    @staticmethod
    def _row(r: Repr, j: int) -> Repr:
        if isinstance(r, GaussianRepr):
            return GaussianRepr(r.mean[j], r.var[j])
        return r[j]

    def _flatten_prototypes(
        self, protos: PrototypeSet
    ) -> tuple[Repr, list[str]]:
        values: list[Repr] = []
        labels: list[str] = []
        for t in protos.labels():
            for e in protos.entries[t]:
                values.append(e.value)
                labels.append(t)
        return stack_reprs(values), labels

    def _min_distance_logits(self, queries: Repr) -> torch.Tensor:
        """[N, T+1] inference logits: negated distance to each type's closest
        prototype, non-event class in the last column."""
        keys, key_labels = self._predict_keys
        d = pairwise_distance(self._distance_spec(), queries, keys)
        order = list(self._schema.types) + [NA_LABEL]
        cols = []
        for t in order:
            idx = [j for j, lab in enumerate(key_labels) if lab == t]
            cols.append(d[:, idx].min(dim=1).values)
        return -torch.stack(cols, dim=1)

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise ValidationError("this estimator is not fitted yet; call fit first")

    @torch.no_grad()
    def predict(self, X: Dataset | Iterable[Sentence]) -> list[list[Mention]]:
        """Predicted mentions per sentence, in input order."""
        self._check_fitted()
        sentences = list(X.sentences) if isinstance(X, Dataset) else list(X)
        paradigm = X.paradigm if isinstance(X, Dataset) else self._train.paradigm
        if not sentences:
            return []
        enc = self._encoder_view(self.params_)
        out: list[list[Mention]] = []
        for s in sentences:
            reps = encode(enc, s.tokens)
            if paradigm == SEQUENCE_LABELING:
                out.append(self._decode_sequence(s, reps))
            else:
                out.append(self._decode_spans(s, reps))
        return out

    def _token_type_logits(self, reps: torch.Tensor) -> torch.Tensor:
        if "linear" in self._branches:
            return reps @ self.params_["linear.w"].T + self.params_["linear.b"]
        queries = self._apply_transfer(self.params_, reps)
        return self._min_distance_logits(queries)

    def _decode_sequence(self, sentence: Sentence, reps: torch.Tensor) -> list[Mention]:
        logits = self._token_type_logits(reps)
        if self.crf == "none" or self._crf_branch is None:
            types = self._argmax_types(logits)
            return self._runs_to_mentions(types)
        if self.crf == "cdt":
            tags = cdt_decode(
                logits, CollapsedTransitions(self.params_["crf.collapsed"]), self._schema
            )
        else:
            table = self._inference_crf_table()
            em = emissions_from_type_logits(logits, self._schema)
            path = crf_viterbi(em, table)
            tags = [table.tags[i] for i in path]
        return list(decode_bio(tags))

    def _inference_crf_table(self) -> TransitionTable:
        if self.crf == "vanilla":
            return TransitionTable(
                bio_tags(self._schema),
                self.params_["crf.trans"],
                self.params_["crf.start"],
                self.params_["crf.stop"],
            )
        # Prototype-derived transitions from the fitted prototype set.
        protos: dict[str, torch.Tensor] = {}
        for t in self.prototypes_.labels():
            vecs = [
                e.value.mean if isinstance(e.value, GaussianRepr) else e.value
                for e in self.prototypes_.entries[t]
            ]
            protos[t] = torch.stack(vecs).mean(dim=0)
        return pa_transitions(protos, self.params_["crf.bilinear"], self._schema)

    def _argmax_types(self, logits: torch.Tensor) -> list[str]:
        order = list(self._schema.types) + [NA_LABEL]
        idx = np.argmax(logits.detach().numpy(), axis=1)
        return [order[i] for i in idx]

    def _runs_to_mentions(self, types: list[str]) -> list[Mention]:
        mentions = []
        start = None
        current = None
        for i, t in enumerate(types + [NA_LABEL]):
            if t != current:
                if current is not None and current != NA_LABEL:
                    mentions.append(Mention(start, i, current))
                start, current = i, t
        return mentions

    def _decode_spans(self, sentence: Sentence, reps: torch.Tensor) -> list[Mention]:
        spans = enumerate_spans(len(sentence), self.max_span_len)
        raw = torch.stack([span_repr(reps, a, b) for a, b in spans])
        logits = (
            raw @ self.params_["linear.w"].T + self.params_["linear.b"]
            if "linear" in self._branches
            else self._min_distance_logits(self._apply_transfer(self.params_, raw))
        )
        order = list(self._schema.types) + [NA_LABEL]
        scores = logits.detach().numpy()
        idx = np.argmax(scores, axis=1)
        # Positive spans compete greedily: best (most confident) span first,
        # ties by span position; overlapping later spans are dropped.
        candidates = [
            (-scores[j][k], a, b, order[k])
            for j, ((a, b), k) in enumerate(zip(spans, idx))
            if order[k] != NA_LABEL
        ]
        candidates.sort()
        chosen: list[Mention] = []
        taken: set[int] = set()
        for _, a, b, lab in candidates:
            if any(p in taken for p in range(a, b)):
                continue
            taken.update(range(a, b))
            chosen.append(Mention(a, b, lab))
        chosen.sort(key=lambda m: (m.start, m.end))
        return chosen

    def predict_mapping(self, X: Dataset) -> dict[str, list[Mention]]:
        preds = self.predict(X)
        return {s.id: p for s, p in zip(X.sentences, preds)}

    def evaluate(self, X: Dataset) -> Scores:
        gold = {s.id: list(s.mentions) for s in X.sentences}
        return micro_f1(self.predict_mapping(X), gold)

    def score(self, X: Dataset, y: None = None) -> float:
        return self.evaluate(X).f1

    @property
    def encoder_params_(self) -> EncoderParams:
        """Detached copy of the fitted encoder (for warm-starting transfer)."""
        self._check_fitted()
        return self._encoder_view(self.params_).clone()

    # ------------------------------------------------------------ persistence

    def save(self, path) -> None:
        self._check_fitted()
        meta = {"params": {k: str(v) for k, v in self.get_params().items()}}
        save_checkpoint(path, self.params_, meta)
