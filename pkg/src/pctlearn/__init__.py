"""Streaming contrastive-percentile learning.

Converts heterogeneous per-user engagement magnitudes into percentile
training targets using reservoir-sampled per-user pools, trains a small
dual-head model on them, and ships the statistical machinery to verify
the construction's guarantees.
"""

from .config import EvalSettings, ExperimentConfig, load_experiment_config
from .errors import ConfigError
from .labels import (
    ContrastiveLabel,
    GatingError,
    bootstrapped_label,
    multi_sample_label,
    single_sample_label,
    value_weighted_label,
)
from .losses import LossOutput, cotrain_loss, mbce_per_term, soft_bce, vwbce
from .metrics import EvalReport, MetricValue, cohort_report, uauc, ureg_auc
from .model import DualHeadModel
from .state import (
    PoolEntry,
    SnapshotError,
    StateStore,
    UserState,
    gating_allows,
    load_store,
    reservoir_update,
    snapshot_store,
)
from .synth import (
    COHORTS,
    Interaction,
    PercentileOracle,
    Population,
    PopulationConfig,
    generate_stream,
    read_stream_jsonl,
    write_stream_jsonl,
)
from .trainer import TrainConfig, TrainLog, predict_scores, train, train_step

__all__ = [
    "COHORTS",
    "ConfigError",
    "ContrastiveLabel",
    "DualHeadModel",
    "EvalReport",
    "EvalSettings",
    "ExperimentConfig",
    "GatingError",
    "Interaction",
    "LossOutput",
    "MetricValue",
    "PercentileOracle",
    "PoolEntry",
    "Population",
    "PopulationConfig",
    "SnapshotError",
    "StateStore",
    "TrainConfig",
    "TrainLog",
    "UserState",
    "bootstrapped_label",
    "cohort_report",
    "cotrain_loss",
    "gating_allows",
    "generate_stream",
    "load_experiment_config",
    "load_store",
    "mbce_per_term",
    "multi_sample_label",
    "predict_scores",
    "read_stream_jsonl",
    "reservoir_update",
    "single_sample_label",
    "snapshot_store",
    "soft_bce",
    "train",
    "train_step",
    "uauc",
    "ureg_auc",
    "value_weighted_label",
    "vwbce",
    "write_stream_jsonl",
]
