"""Loss family for percentile training, with closed-form gradients.

All functions return the loss value together with its exact derivatives
with respect to the two head outputs (predicted percentile p_hat and
predicted magnitude y_hat), so the model layer can backpropagate without
any numeric differentiation. Per-reference forms (``mbce_per_term``,
``vwbce``) are kept alongside the collapsed soft-label form on purpose:
their agreement to ~1e-12 is one of the verified guarantees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .labels import ContrastiveLabel, GatingError
from .state import PoolEntry

CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class LossOutput:
    loss: float
    d_loss_d_phat: float
    d_loss_d_yhat: float


def _checked_probability(p_hat: float, eps: float) -> float:
    if math.isnan(p_hat):
        raise FloatingPointError("p_hat is NaN; refusing to train on it")
    return min(max(p_hat, eps), 1.0 - eps)


def _bce(p: float, target: float) -> tuple[float, float]:
    # target in [0, 1], p already clamped into (0, 1)
    loss = -(target * math.log(p) + (1.0 - target) * math.log(1.0 - p))
    grad = -target / p + (1.0 - target) / (1.0 - p)
    return loss, grad


def soft_bce(p_hat: float, p_bar: float, eps: float = CLAMP_EPS) -> LossOutput:
    """Binary cross-entropy against a soft target p_bar in [0, 1].

    p_hat is clamped to [eps, 1-eps] before both the loss and its gradient
    are evaluated. The unique minimizer over p_hat is p_bar itself.
    """
    if math.isnan(p_bar):
        raise FloatingPointError("p_bar is NaN; refusing to train on it")
    if not 0.0 <= p_bar <= 1.0:
        raise ValueError(f"soft target {p_bar} outside [0, 1]")
    p = _checked_probability(p_hat, eps)
    loss, grad = _bce(p, p_bar)
    return LossOutput(loss, grad, 0.0)


def mbce_per_term(
    p_hat: float, indicators: Sequence[float], eps: float = CLAMP_EPS
) -> LossOutput:
    """Mean of per-reference BCE terms over hard 0/1 indicators.

    Algebraically identical to ``soft_bce(p_hat, mean(indicators))``; both
    routes are implemented so the identity can be checked, not assumed.
    """
    if len(indicators) == 0:
        raise GatingError("empty indicator list")
    p = _checked_probability(p_hat, eps)
    loss_sum = 0.0
    grad_sum = 0.0
    for b in indicators:
        if b not in (0, 1):
            raise ValueError(f"indicators must be 0 or 1, got {b}")
        term_loss, term_grad = _bce(p, float(b))
        loss_sum += term_loss
        grad_sum += term_grad
    n = len(indicators)
    return LossOutput(loss_sum / n, grad_sum / n, 0.0)


def vwbce(
    p_hat: float, pool: Sequence[PoolEntry], y: float, eps: float = CLAMP_EPS
) -> LossOutput:
    """BCE over pool indicators, each weighted by its reference magnitude.

    Weights are magnitudes normalized by their sum, so the collapsed form is
    a single BCE against the value-weighted label. An all-zero pool has no
    weights and falls back to the unweighted per-term mean.
    """
    if len(pool) == 0:
        raise GatingError("empty contrastive pool")
    total = sum(entry.magnitude for entry in pool)
    if total == 0.0:
        return mbce_per_term(
            p_hat, [1.0 if y > e.magnitude else 0.0 for e in pool], eps
        )
    p = _checked_probability(p_hat, eps)
    loss_sum = 0.0
    grad_sum = 0.0
    for entry in pool:
        indicator = 1.0 if y > entry.magnitude else 0.0
        term_loss, term_grad = _bce(p, indicator)
        loss_sum += entry.magnitude * term_loss
        grad_sum += entry.magnitude * term_grad
    return LossOutput(loss_sum / total, grad_sum / total, 0.0)


def regression_loss(y_hat: float, y: float) -> LossOutput:
    """Squared error between log1p-transformed magnitudes.

    The log1p transform keeps long-tailed magnitudes from letting a handful
    of huge engagements dominate every gradient step.
    """
    if math.isnan(y_hat) or math.isnan(y):
        raise FloatingPointError("regression inputs contain NaN")
    residual = math.log1p(y_hat) - math.log1p(y)
    return LossOutput(residual * residual, 0.0, 2.0 * residual / (1.0 + y_hat))


def cotrain_loss(
    y_hat: float,
    y: float,
    p_hat: float,
    label: ContrastiveLabel,
    rank_weight: float,
    eps: float = CLAMP_EPS,
) -> LossOutput:
    """Joint objective: magnitude regression plus weighted percentile BCE.

    The percentile term only exists when the label passed gating and the
    weight is positive; otherwise the regression part applies alone and
    d_loss_d_phat is exactly zero, leaving the percentile head untouched.
    """
    if rank_weight < 0:
        raise ValueError(f"rank weight must be >= 0, got {rank_weight}")
    reg = regression_loss(y_hat, y)
    if not label.gated or rank_weight == 0.0:
        return LossOutput(reg.loss, 0.0, reg.d_loss_d_yhat)
    rank = soft_bce(p_hat, label.value, eps)
    return LossOutput(
        reg.loss + rank_weight * rank.loss,
        rank_weight * rank.d_loss_d_phat,
        reg.d_loss_d_yhat,
    )
