"""Soft contrastive targets computed against a user's pool.

Every variant turns (current value, pool) into a target in [0, 1] that
estimates where the current interaction sits inside the user's own history:

* ``single``          one uniformly drawn reference, hard 0/1 indicator
* ``multi``           fraction of the whole pool strictly below the value
* ``value_weighted``  fraction of total pool magnitude strictly below it
* ``bootstrapped``    the multi-sample fraction computed in prediction space

Ties always count as "not above" (indicator 0), so an interaction equal to
every reference lands at percentile zero rather than one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .state import PoolEntry

VARIANTS = ("single", "multi", "value_weighted", "bootstrapped")


class GatingError(ValueError):
    """No usable contrastive references; the caller must treat the
    instance as gated off instead of inventing a label."""


@dataclass(frozen=True)
class ContrastiveLabel:
    """A soft target in [0, 1].

    ``gated`` is False for placeholder labels of gated-off instances; the
    loss layer must then contribute exactly zero gradient to the percentile
    head. ``sample_count`` is the number of pool entries the value was
    computed from.
    """

    value: float
    variant: str
    gated: bool = True
    sample_count: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown label variant {self.variant!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"label value {self.value} outside [0, 1]")


def gated_off(variant: str) -> ContrastiveLabel:
    """Placeholder label for an instance that failed the gating check."""
    return ContrastiveLabel(0.0, variant, gated=False, sample_count=0)


def single_sample_label(
    y: float, pool: Sequence[PoolEntry], rng: np.random.Generator
) -> ContrastiveLabel:
    """Hard 0/1 label against one uniformly drawn pool reference."""
    if not pool:
        raise GatingError("empty contrastive pool")
    ref = pool[int(rng.integers(0, len(pool)))]
    return ContrastiveLabel(
        1.0 if y > ref.magnitude else 0.0, "single", sample_count=1
    )


def multi_sample_label(y: float, pool: Sequence[PoolEntry]) -> ContrastiveLabel:
    """Fraction of pool magnitudes strictly below ``y``, over the whole pool."""
    if not pool:
        raise GatingError("empty contrastive pool")
    below = sum(1 for entry in pool if entry.magnitude < y)
    return ContrastiveLabel(below / len(pool), "multi", sample_count=len(pool))


def value_weighted_label(y: float, pool: Sequence[PoolEntry]) -> ContrastiveLabel:
    """Share of total pool magnitude contributed by references below ``y``.

    A pool whose magnitudes sum to zero has no weights to normalize; the
    unweighted multi-sample label is returned instead, and its ``multi``
    variant tag flags the fallback.
    """
    if not pool:
        raise GatingError("empty contrastive pool")
    total = sum(entry.magnitude for entry in pool)
    if total == 0.0:
        return multi_sample_label(y, pool)
    below = sum(entry.magnitude for entry in pool if entry.magnitude < y)
    return ContrastiveLabel(below / total, "value_weighted", sample_count=len(pool))


def bootstrapped_label(y_hat: float, pool: Sequence[PoolEntry]) -> ContrastiveLabel:
    """Multi-sample fraction computed among prior predictions.

    Compares the current predicted magnitude against the predictions the
    model made for the pool's entries when they were inserted. Because
    predictions stay continuous even when raw values collapse to a constant
    (sparse 0/1 targets), this keeps the target informative.
    """
    if not pool:
        raise GatingError("empty contrastive pool")
    if y_hat < 0:
        raise ValueError(f"predicted magnitude must be >= 0, got {y_hat}")
    below = sum(1 for entry in pool if entry.prior_pred < y_hat)
    return ContrastiveLabel(
        below / len(pool), "bootstrapped", sample_count=len(pool)
    )
