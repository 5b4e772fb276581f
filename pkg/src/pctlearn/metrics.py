"""User-averaged ranking metrics and per-cohort reporting.

``uauc`` averages per-user ROC-AUC over users that have both label classes.
``ureg_auc`` is its continuous-target counterpart: the per-user fraction of
sampled item pairs whose predicted order matches the ground-truth magnitude
order. Prediction ties earn half credit in both. Users that cannot be
scored are skipped and counted rather than silently dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .synth import COHORTS


@dataclass(frozen=True)
class MetricValue:
    """A user-averaged metric. ``value`` is None when no user was retained
    (an explicitly empty result, never NaN)."""

    value: float | None
    users: int
    skipped: int

    @property
    def empty(self) -> bool:
        return self.value is None


def _group_by_user(user_ids: Sequence[str]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for idx, uid in enumerate(user_ids):
        groups.setdefault(uid, []).append(idx)
    return groups


def _user_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # midranks give tied scores 0.5 credit per pair
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def uauc(
    user_ids: Sequence[str],
    scores: Sequence[float],
    labels: Sequence[int],
) -> MetricValue:
    """Mean per-user ROC-AUC of ``scores`` against binary ``labels``.

    Users lacking a positive or lacking a negative are skipped and counted.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    per_user = []
    skipped = 0
    for _, idx in _group_by_user(user_ids).items():
        auc = _user_auc(scores[idx], labels[idx])
        if auc is None:
            skipped += 1
        else:
            per_user.append(auc)
    if not per_user:
        return MetricValue(None, 0, skipped)
    return MetricValue(float(np.mean(per_user)), len(per_user), skipped)


def _user_ureg(
    scores: np.ndarray,
    magnitudes: np.ndarray,
    pairs_per_user: int,
    rng: np.random.Generator,
) -> float | None:
    n = len(scores)
    pairs = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if magnitudes[i] != magnitudes[j]
    ]
    if not pairs:
        return None
    if len(pairs) > pairs_per_user:
        chosen = rng.integers(0, len(pairs), size=pairs_per_user)
        pairs = [pairs[int(c)] for c in chosen]
    credit = 0.0
    for i, j in pairs:
        if scores[i] == scores[j]:
            credit += 0.5
        elif (scores[i] - scores[j]) * (magnitudes[i] - magnitudes[j]) > 0:
            credit += 1.0
    return credit / len(pairs)


def ureg_auc(
    user_ids: Sequence[str],
    scores: Sequence[float],
    magnitudes: Sequence[float],
    pairs_per_user: int = 100,
    rng: np.random.Generator | None = None,
) -> MetricValue:
    """Mean per-user fraction of order-preserving item pairs.

    Pairs are drawn uniformly among pairs with distinct ground-truth
    magnitudes; when a user has at most ``pairs_per_user`` such pairs they
    are all enumerated instead. Users with fewer than two distinct
    magnitudes are skipped and counted.
    """
    if pairs_per_user < 1:
        raise ValueError(f"pairs_per_user must be >= 1, got {pairs_per_user}")
    if rng is None:
        rng = np.random.default_rng(0)
    scores = np.asarray(scores, dtype=np.float64)
    magnitudes = np.asarray(magnitudes, dtype=np.float64)
    per_user = []
    skipped = 0
    for _, idx in _group_by_user(user_ids).items():
        frac = _user_ureg(scores[idx], magnitudes[idx], pairs_per_user, rng)
        if frac is None:
            skipped += 1
        else:
            per_user.append(frac)
    if not per_user:
        return MetricValue(None, 0, skipped)
    return MetricValue(float(np.mean(per_user)), len(per_user), skipped)


# ----------------------------------------------------------------- reporting


@dataclass(frozen=True)
class ReportRow:
    target: str
    metric: str
    cohort: str
    value: float | None
    users: int
    skipped: int
    delta_vs_baseline: float | None


@dataclass
class EvalReport:
    rows: list[ReportRow]

    CSV_HEADER = "target,metric,cohort,value,users,skipped,delta_vs_baseline"

    def row(self, target: str, cohort: str) -> ReportRow:
        for r in self.rows:
            if r.target == target and r.cohort == cohort:
                return r
        raise KeyError(f"no report row for target={target!r} cohort={cohort!r}")

    def to_csv_text(self) -> str:
        def cell(v) -> str:
            return "" if v is None else repr(float(v))

        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.target},{r.metric},{r.cohort},{cell(r.value)},"
                f"{r.users},{r.skipped},{cell(r.delta_vs_baseline)}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")

    def to_json_obj(self) -> dict:
        return {
            "rows": [
                {
                    "target": r.target,
                    "metric": r.metric,
                    "cohort": r.cohort,
                    "value": r.value,
                    "users": r.users,
                    "skipped": r.skipped,
                    "delta_vs_baseline": r.delta_vs_baseline,
                }
                for r in self.rows
            ]
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


def _cohort_slices(
    user_ids: Sequence[str], cohorts: Sequence[str]
) -> list[tuple[str, np.ndarray]]:
    cohorts = np.asarray(cohorts)
    out: list[tuple[str, np.ndarray]] = [("all", np.arange(len(cohorts)))]
    for name in COHORTS:
        mask = np.flatnonzero(cohorts == name)
        if len(mask):
            out.append((name, mask))
    return out


def cohort_report(
    user_ids: Sequence[str],
    cohorts: Sequence[str],
    scores: Sequence[float],
    baseline_scores: Sequence[float] | None = None,
    magnitudes: Sequence[float] | None = None,
    binary_labels: Sequence[int] | None = None,
    pairs_per_user: int = 100,
    seed: int = 0,
) -> EvalReport:
    """Per-cohort metric table with deltas against a baseline scoring.

    Continuous targets are reported as ureg_auc rows (target "magnitude"),
    binary ones as uauc rows (target "binary"); columns say which is which.
    Both scorings must cover the same interactions, in the same order.
    """
    user_ids = list(user_ids)
    scores = np.asarray(scores, dtype=np.float64)
    if baseline_scores is not None:
        baseline_scores = np.asarray(baseline_scores, dtype=np.float64)
        if len(baseline_scores) != len(scores):
            raise ValueError("run and baseline score different numbers of rows")
    rows: list[ReportRow] = []

    def add_rows(target, metric, values, evaluate):
        for cohort_name, idx in _cohort_slices(user_ids, cohorts):
            ids = [user_ids[i] for i in idx]
            main = evaluate(ids, scores[idx], values[idx])
            delta = None
            if baseline_scores is not None:
                base = evaluate(ids, baseline_scores[idx], values[idx])
                if not main.empty and not base.empty:
                    delta = main.value - base.value
            rows.append(ReportRow(
                target, metric, cohort_name, main.value,
                main.users, main.skipped, delta,
            ))

    if magnitudes is not None:
        magnitudes = np.asarray(magnitudes, dtype=np.float64)
        # fresh identically-seeded rng per scoring, so run and baseline
        # sample exactly the same pairs
        def eval_ureg(ids, s, m):
            return ureg_auc(ids, s, m, pairs_per_user,
                            np.random.default_rng(seed))
        add_rows("magnitude", "ureg_auc", magnitudes, eval_ureg)
    if binary_labels is not None:
        binary_labels = np.asarray(binary_labels)
        add_rows("binary", "uauc", binary_labels,
                 lambda ids, s, b: uauc(ids, s, b))
    return EvalReport(rows)
