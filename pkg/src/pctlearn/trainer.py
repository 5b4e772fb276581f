"""Single-pass streaming training loop.

Per interaction, in this order: forward pass, gating check against the
pre-insert counter, label construction from the pre-insert pool, loss and
descent step, and only then the reservoir update. The current interaction
therefore never contrasts against itself, and the prediction stored next
to it in the pool is the one the model made before learning from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .labels import (
    ContrastiveLabel,
    bootstrapped_label,
    gated_off,
    multi_sample_label,
    single_sample_label,
    value_weighted_label,
)
from .losses import CLAMP_EPS, LossOutput, cotrain_loss, soft_bce
from .model import DualHeadModel
from .state import PoolEntry, StateStore, gating_allows, reservoir_update
from .synth import Interaction

# percentile-head-only variants; "single" exists for verification runs, the
# recommended streaming variants all average over the whole pool
PERCENTILE_VARIANTS = ("single", "multi", "value_weighted")
# variants that also fit the magnitude head
COTRAIN_VARIANTS = ("bootstrapped", "cotrain", "regression")
ALL_VARIANTS = PERCENTILE_VARIANTS + COTRAIN_VARIANTS

_LABEL_STREAM_KEY = 0x51E7
_STRICT_TARGETS = ("magnitude", "binary")


@dataclass(frozen=True)
class TrainConfig:
    """Training knobs.

    ``target`` picks which raw value feeds the pools and raw labels: the
    continuous magnitude or the sparse binary flag. The magnitude head is
    always regressed on the continuous magnitude, which is what makes its
    predictions usable as bootstrapping references for sparse targets.
    """

    variant: str = "multi"
    target: str = "magnitude"
    pool_capacity: int = 50
    gate_threshold: int = 10
    rank_weight: float = 1.0
    learning_rate: float = 0.05
    lr_decay_steps: int = 0
    epochs: int = 1
    hidden: tuple[int, ...] = (32,)
    seed: int = 0
    clamp_eps: float = CLAMP_EPS

    def step_learning_rate(self, step: int) -> float:
        """Learning rate at a step: constant, or harmonically decayed when
        ``lr_decay_steps`` is set (halved after that many steps)."""
        if self.lr_decay_steps <= 0:
            return self.learning_rate
        return self.learning_rate / (1.0 + step / self.lr_decay_steps)

    def validate(self) -> None:
        def fail(name: str, why: str):
            raise ConfigError(f"train.{name}: {why}")

        if self.variant not in ALL_VARIANTS:
            fail("variant", f"must be one of {ALL_VARIANTS}, got {self.variant!r}")
        if self.target not in _STRICT_TARGETS:
            fail("target", f"must be one of {_STRICT_TARGETS}, got {self.target!r}")
        if self.pool_capacity < 1:
            fail("pool_capacity", f"must be >= 1, got {self.pool_capacity}")
        if self.gate_threshold < 1:
            fail("gate_threshold", f"must be >= 1, got {self.gate_threshold}")
        if self.rank_weight < 0:
            fail("rank_weight", f"must be >= 0, got {self.rank_weight}")
        if self.learning_rate <= 0:
            fail("learning_rate", f"must be > 0, got {self.learning_rate}")
        if self.lr_decay_steps < 0:
            fail("lr_decay_steps", f"must be >= 0, got {self.lr_decay_steps}")
        if self.epochs < 1:
            fail("epochs", f"must be >= 1, got {self.epochs}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            fail("hidden", f"layer sizes must all be >= 1, got {self.hidden}")
        if self.seed < 0:
            fail("seed", f"must be non-negative, got {self.seed}")
        if not 0 < self.clamp_eps < 0.5:
            fail("clamp_eps", f"must be in (0, 0.5), got {self.clamp_eps}")


@dataclass(frozen=True)
class StepRecord:
    step: int
    user_id: str
    gated: bool
    label: float | None
    loss: float | None
    reg_loss: float | None
    rank_loss: float | None
    avg_loss: float | None


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as sink:
            for r in self.records:
                sink.write(json.dumps({
                    "step": r.step,
                    "user_id": r.user_id,
                    "gated": r.gated,
                    "label": r.label,
                    "loss": r.loss,
                    "reg_loss": r.reg_loss,
                    "rank_loss": r.rank_loss,
                    "avg_loss": r.avg_loss,
                }) + "\n")


def _build_label(
    config: TrainConfig,
    y_raw: float,
    y_hat: float,
    pool,
    label_rng: np.random.Generator,
) -> ContrastiveLabel:
    if config.variant == "single":
        return single_sample_label(y_raw, pool, label_rng)
    if config.variant == "value_weighted":
        return value_weighted_label(y_raw, pool)
    if config.variant == "bootstrapped":
        return bootstrapped_label(y_hat, pool)
    # multi, cotrain, and the regression twin (whose label is unused)
    return multi_sample_label(y_raw, pool)


def train_step(
    model: DualHeadModel,
    store: StateStore,
    interaction: Interaction,
    config: TrainConfig,
    label_rng: np.random.Generator,
    step: int = 0,
) -> StepRecord:
    """Process one interaction; mutates model and store, returns the record."""
    it = interaction
    learning_rate = config.step_learning_rate(step)
    y_raw = it.y if config.target == "magnitude" else float(it.b)
    state = store.state(it.user_id)
    y_hat, p_hat = model.forward(it.features)
    gated = gating_allows(state, config.gate_threshold)

    label: ContrastiveLabel | None = None
    out: LossOutput | None = None
    if config.variant in PERCENTILE_VARIANTS:
        if gated:
            label = _build_label(config, y_raw, y_hat, state.pool, label_rng)
            out = soft_bce(p_hat, label.value, config.clamp_eps)
            grads = model.backward(it.features, 0.0, out.d_loss_d_phat)
            model.sgd_step(grads, learning_rate)
        reg_loss = None
        rank_loss = out.loss if out is not None else None
    else:
        if gated and config.variant != "regression":
            label = _build_label(config, y_raw, y_hat, state.pool, label_rng)
        else:
            label = gated_off("multi" if config.variant == "regression"
                              else config.variant)
        rank_weight = 0.0 if config.variant == "regression" else config.rank_weight
        out = cotrain_loss(y_hat, it.y, p_hat, label, rank_weight, config.clamp_eps)
        grads = model.backward(it.features, out.d_loss_d_yhat, out.d_loss_d_phat)
        model.sgd_step(grads, learning_rate)
        reg_loss = (np.log1p(y_hat) - np.log1p(it.y)) ** 2
        rank_loss = (out.loss - reg_loss) if label.gated else None

    reservoir_update(state, PoolEntry(y_raw, y_hat), store.rng(it.user_id))
    return StepRecord(
        step=step,
        user_id=it.user_id,
        gated=bool(label.gated) if label is not None else False,
        label=label.value if (label is not None and label.gated) else None,
        loss=out.loss if out is not None else None,
        reg_loss=float(reg_loss) if reg_loss is not None else None,
        rank_loss=float(rank_loss) if rank_loss is not None else None,
        avg_loss=None,
    )


def train(
    stream: Iterable[Interaction],
    config: TrainConfig,
    feature_dim: int | None = None,
) -> tuple[DualHeadModel, StateStore, TrainLog]:
    """Fold train_step over a timestamp-ordered stream. Deterministic per seed.

    Multi-epoch runs replay the stream against a reset store each epoch so
    pools stay uniform samples of a single pass of history.
    """
    config.validate()
    interactions = list(stream)
    for prev, cur in zip(interactions, interactions[1:]):
        if cur.ts < prev.ts:
            raise ConfigError(
                f"stream: out-of-order timestamp {cur.ts} after {prev.ts}; "
                "streaming training requires timestamp order"
            )
    if feature_dim is None:
        if not interactions:
            raise ConfigError("stream: empty and no feature_dim given; "
                              "cannot size the model")
        feature_dim = len(interactions[0].features)
    model = DualHeadModel(feature_dim, config.hidden, config.seed)
    store = StateStore(config.pool_capacity, config.gate_threshold, config.seed)
    label_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, _LABEL_STREAM_KEY])
    )
    log = TrainLog()
    loss_sum = 0.0
    loss_count = 0
    step = 0
    for epoch in range(config.epochs):
        if epoch > 0:
            store.reset()
        for it in interactions:
            record = train_step(model, store, it, config, label_rng, step)
            if record.loss is not None:
                loss_sum += record.loss
                loss_count += 1
            avg = loss_sum / loss_count if loss_count else None
            log.records.append(StepRecord(
                record.step, record.user_id, record.gated, record.label,
                record.loss, record.reg_loss, record.rank_loss, avg,
            ))
            step += 1
    return model, store, log


def predict_scores(
    model: DualHeadModel, interactions: Sequence[Interaction]
) -> tuple[np.ndarray, np.ndarray]:
    """Both heads evaluated over a batch: (magnitudes, percentiles)."""
    y_hats = np.empty(len(interactions))
    p_hats = np.empty(len(interactions))
    for i, it in enumerate(interactions):
        y_hats[i], p_hats[i] = model.forward(it.features)
    return y_hats, p_hats
