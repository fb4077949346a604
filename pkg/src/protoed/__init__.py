"""Prototype-based few-shot event detection.

A unified implementation of prototype methods for trigger detection:
configurable prototype sources (mention supports, label semantics, both),
feature-/score-/loss-level aggregation, five distance functions, five
transfer functions, optional CRF modules, contrastive branches with an
optional momentum-encoded key queue, greedy K-shot sampling, class-transfer
splits, micro-F1 evaluation, and an experiment runner with a CLI.
"""

from .corpus import (
    NA_LABEL,
    SEQUENCE_LABELING,
    SPAN_CLASSIFICATION,
    Dataset,
    Mention,
    Schema,
    Sentence,
    bio_tags,
    decode_bio,
    encode_bio,
    enumerate_spans,
    load_schema,
    parse_corpus,
    save_schema,
    write_corpus,
)
from .crf import (
    COLLAPSED_ROLES,
    CollapsedTransitions,
    TransitionTable,
    cdt_decode,
    crf_log_partition,
    crf_nll,
    crf_path_score,
    crf_viterbi,
    emissions_from_type_logits,
    expand_collapsed,
    pa_transitions,
    zero_table,
)
from .elements import (
    DISTANCE_KINDS,
    SCALED_DISTANCES,
    TRANSFER_KINDS,
    DistanceSpec,
    GaussianRepr,
    PrototypeEntry,
    PrototypeSet,
    TransferSpec,
    build_prototypes,
    distance,
    logits_feature,
    logits_score,
    mean_repr,
    pairwise_distance,
    predict_nn,
    stack_reprs,
    transfer,
)
from .encoding import (
    EncoderConfig,
    EncoderParams,
    encode,
    label_embed,
    load_checkpoint,
    momentum_update,
    save_checkpoint,
    seeded_generator,
    span_repr,
    stable_bucket,
    window,
)
from .exceptions import (
    ConfigError,
    CorpusParseError,
    InfeasibleSampleError,
    ProtoedError,
    TrainingDivergedError,
    ValidationError,
)
from .metrics import RunReport, Scores, aggregate_runs, micro_f1
from .model import FewShotEventDetector
from .presets import PRESETS, MethodConfig, config_hash, method_preset
from .runs import (
    build_estimator,
    check_transfer_split,
    grid,
    run_class_transfer,
    run_low_resource,
    sample_for_seed,
    transfer_grid,
)
from .sampling import (
    SampleSpec,
    SampleStats,
    TransferSplit,
    episode_split,
    greedy_sample,
    sample_stats,
    sample_train_dev,
    split_class_transfer,
    top_frequent_types,
)
from .synth import SyntheticSpec, gen_synthetic
from .training import (
    AdamW,
    CLQueue,
    FULL_SCALE_LR_GRID,
    FULL_SCALE_QUEUE_SIZES,
    FULL_SCALE_TAU_GRID,
    INBATCH_SENTENCE_LIMIT,
    OptimizerSpec,
    ce_loss,
    clip_gradients,
    fused_loss,
    grouped_cl_logits,
    inbatch_cl_logits,
    linear_lr,
    moco_cl_logits,
    select_cl_mode,
)

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "CLQueue",
    "COLLAPSED_ROLES",
    "CollapsedTransitions",
    "ConfigError",
    "CorpusParseError",
    "DISTANCE_KINDS",
    "Dataset",
    "DistanceSpec",
    "EncoderConfig",
    "EncoderParams",
    "FULL_SCALE_LR_GRID",
    "FULL_SCALE_QUEUE_SIZES",
    "FULL_SCALE_TAU_GRID",
    "FewShotEventDetector",
    "GaussianRepr",
    "INBATCH_SENTENCE_LIMIT",
    "InfeasibleSampleError",
    "Mention",
    "MethodConfig",
    "NA_LABEL",
    "OptimizerSpec",
    "PRESETS",
    "ProtoedError",
    "PrototypeEntry",
    "PrototypeSet",
    "RunReport",
    "SCALED_DISTANCES",
    "SEQUENCE_LABELING",
    "SPAN_CLASSIFICATION",
    "SampleSpec",
    "SampleStats",
    "Schema",
    "Scores",
    "Sentence",
    "SyntheticSpec",
    "TRANSFER_KINDS",
    "TrainingDivergedError",
    "TransferSpec",
    "TransferSplit",
    "TransitionTable",
    "ValidationError",
    "aggregate_runs",
    "bio_tags",
    "build_estimator",
    "build_prototypes",
    "cdt_decode",
    "ce_loss",
    "check_transfer_split",
    "clip_gradients",
    "config_hash",
    "crf_log_partition",
    "crf_nll",
    "crf_path_score",
    "crf_viterbi",
    "decode_bio",
    "distance",
    "emissions_from_type_logits",
    "encode",
    "encode_bio",
    "enumerate_spans",
    "episode_split",
    "expand_collapsed",
    "fused_loss",
    "gen_synthetic",
    "greedy_sample",
    "grid",
    "grouped_cl_logits",
    "inbatch_cl_logits",
    "label_embed",
    "linear_lr",
    "load_checkpoint",
    "load_schema",
    "logits_feature",
    "logits_score",
    "mean_repr",
    "method_preset",
    "micro_f1",
    "moco_cl_logits",
    "momentum_update",
    "pa_transitions",
    "pairwise_distance",
    "parse_corpus",
    "predict_nn",
    "run_class_transfer",
    "run_low_resource",
    "sample_for_seed",
    "sample_stats",
    "sample_train_dev",
    "save_checkpoint",
    "save_schema",
    "seeded_generator",
    "select_cl_mode",
    "span_repr",
    "split_class_transfer",
    "stable_bucket",
    "stack_reprs",
    "top_frequent_types",
    "transfer",
    "transfer_grid",
    "window",
    "write_corpus",
    "zero_table",
]
