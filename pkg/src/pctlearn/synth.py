"""Synthetic streaming population with heterogeneous behavioral intensity.

Generates interaction streams where the same raw magnitude means very
different things for different users: each activity cohort has its own
log-space engagement scale and noise, its own interaction frequency, and
its own taste region in latent space. A Monte Carlo percentile oracle
exposes each user's true engagement CDF so trained percentile heads can be
scored against ground truth.

Magnitudes follow y = exp(mu_u + beta * affinity(u, i) + sigma_u * z) with
z standard normal, so a user's marginal distribution is lognormal when the
affinity effect is switched off (beta = 0), which anchors the oracle's own
closed-form test. The binary engagement flag is Bernoulli with log-odds
equal to affinity plus a per-cohort base-rate offset.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError

COHORTS = ("non_live", "low", "mid", "high")

# Sub-stream keys so population build, streaming, eval blocks, and the
# oracle never share RNG state.
_POP_KEY = 11
_STREAM_KEY = 12
_EVAL_KEY = 13
_ORACLE_KEY = 14

# Cohort taste geometry. Users cluster around cohort-specific centers, and
# each cohort reads items through its own rotation of the latent space (the
# lowest- and highest-activity responses are anti-aligned), so response
# structure learned from the cohorts that dominate the stream does not
# carry over to the rarely-engaging users: their response must be picked up
# from their own scarce, noisy interactions.
_TASTE_NORMS = (0.6, 1.0, 1.4, 1.8)
_TASTE_SPREAD = 0.8
_RESPONSE_ANGLES_DEG = (0.0, 60.0, 120.0, 180.0)
_RESPONSE_BLOCKS = ((0, 1), (0, 1), (0, 1), (0, 1))
_CENTER_ANGLES_DEG = (0.0, 90.0, 180.0, 270.0)


@dataclass(frozen=True)
class PopulationConfig:
    """Knobs for the synthetic population. Defaults are the tuned setup used
    by the demos and the end-to-end checks."""

    n_users: int = 240
    n_items: int = 400
    cohort_weights: tuple[float, float, float, float] = (0.35, 0.30, 0.20, 0.15)
    cohort_mu: tuple[float, float, float, float] = (0.2, 1.5, 2.8, 4.0)
    cohort_sigma: tuple[float, float, float, float] = (1.9, 1.1, 0.85, 0.7)
    cohort_positive_rate: tuple[float, float, float, float] = (0.02, 0.05, 0.10, 0.20)
    cohort_activity: tuple[float, float, float, float] = (0.4, 1.6, 4.0, 10.0)
    affinity_scale: float = 1.2
    latent_dim: int = 2
    context_dim: int = 2
    stream_length: int = 60_000
    seed: int = 0

    @property
    def feature_dim(self) -> int:
        # activity-scale feature + user taste + item latent + context
        return 1 + 2 * self.latent_dim + self.context_dim

    def validate(self) -> None:
        def fail(name: str, why: str):
            raise ConfigError(f"population.{name}: {why}")

        if self.n_users < 1:
            fail("n_users", f"must be >= 1, got {self.n_users}")
        if self.n_items < 2:
            fail("n_items", f"must be >= 2, got {self.n_items}")
        for name in ("cohort_weights", "cohort_mu", "cohort_sigma",
                     "cohort_positive_rate", "cohort_activity"):
            if len(getattr(self, name)) != len(COHORTS):
                fail(name, f"must have {len(COHORTS)} entries")
        if abs(sum(self.cohort_weights) - 1.0) > 1e-9:
            fail("cohort_weights", f"must sum to 1, got {sum(self.cohort_weights)}")
        if any(w < 0 for w in self.cohort_weights):
            fail("cohort_weights", "must be non-negative")
        if any(s <= 0 for s in self.cohort_sigma):
            fail("cohort_sigma", "spreads must be > 0")
        if any(not 0.0 <= r <= 1.0 for r in self.cohort_positive_rate):
            fail("cohort_positive_rate", "rates must lie in [0, 1]")
        if any(a <= 0 for a in self.cohort_activity):
            fail("cohort_activity", "relative rates must be > 0")
        if self.affinity_scale < 0:
            fail("affinity_scale", f"must be >= 0, got {self.affinity_scale}")
        if self.latent_dim < 1:
            fail("latent_dim", f"must be >= 1, got {self.latent_dim}")
        if self.context_dim < 0:
            fail("context_dim", f"must be >= 0, got {self.context_dim}")
        if self.stream_length < 1:
            fail("stream_length", f"must be >= 1, got {self.stream_length}")
        if self.seed < 0:
            fail("seed", f"must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class Interaction:
    """One streaming training instance.

    ``affinity`` is the hidden ground-truth preference used only by oracles
    and evaluation; it is never part of ``features``.
    """

    user_id: str
    item_id: str
    ts: int
    features: np.ndarray
    y: float
    b: int
    affinity: float
    cohort: str


def _largest_remainder_counts(weights: Sequence[float], total: int) -> list[int]:
    raw = [w * total for w in weights]
    counts = [int(math.floor(r)) for r in raw]
    leftover = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:leftover]:
        counts[i] += 1
    return counts


class Population:
    """Deterministic users and items derived from a PopulationConfig."""

    def __init__(self, config: PopulationConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, _POP_KEY]))
        counts = _largest_remainder_counts(config.cohort_weights, config.n_users)
        self.user_cohort = np.repeat(np.arange(len(COHORTS)), counts)
        k = config.latent_dim
        centers = np.zeros((len(COHORTS), k))
        self._response = np.zeros((len(COHORTS), k, k))
        for c in range(len(COHORTS)):
            if k >= 4:
                d0, d1 = _RESPONSE_BLOCKS[c]
            elif k >= 2:
                d0, d1 = 0, 1
            else:
                d0 = d1 = 0
            phi = math.radians(_RESPONSE_ANGLES_DEG[c])
            if d0 != d1:
                self._response[c][d0, d0] = math.cos(phi)
                self._response[c][d0, d1] = -math.sin(phi)
                self._response[c][d1, d0] = math.sin(phi)
                self._response[c][d1, d1] = math.cos(phi)
            else:
                self._response[c][d0, d0] = 1.0
            theta = math.radians(_CENTER_ANGLES_DEG[c])
            centers[c, d0] = math.cos(theta) * _TASTE_NORMS[c]
            if d0 != d1:
                centers[c, d1] = math.sin(theta) * _TASTE_NORMS[c]
        self.user_taste = (
            centers[self.user_cohort]
            + _TASTE_SPREAD * rng.normal(size=(config.n_users, k))
        )
        self.item_latent = rng.normal(size=(config.n_items, k))
        self.user_mu = np.asarray(config.cohort_mu)[self.user_cohort]
        self.user_sigma = np.asarray(config.cohort_sigma)[self.user_cohort]
        self.user_ids = [f"u{idx:05d}" for idx in range(config.n_users)]
        self.item_ids = [f"i{idx:05d}" for idx in range(config.n_items)]
        activity = np.asarray(config.cohort_activity)[self.user_cohort]
        self._user_cumprob = np.cumsum(activity / activity.sum())
        mu = np.asarray(config.cohort_mu)
        self._act_feature = (mu - mu.mean()) / max(mu.std(), 1e-12)

    def cohort_name(self, user_index: int) -> str:
        return COHORTS[self.user_cohort[user_index]]

    def affinity(self, user_index: int, item_index: int) -> float:
        k = self.config.latent_dim
        response = self._response[self.user_cohort[user_index]]
        return float(
            self.user_taste[user_index] @ response @ self.item_latent[item_index]
        ) / math.sqrt(k)

    def _features(
        self, user_index: int, item_index: int, context: np.ndarray
    ) -> np.ndarray:
        act = self._act_feature[self.user_cohort[user_index]]
        return np.concatenate(
            ([act], self.user_taste[user_index], self.item_latent[item_index], context)
        )

    def _draw(
        self, user_index: int, item_index: int, ts: int, rng: np.random.Generator
    ) -> Interaction:
        cfg = self.config
        cohort = int(self.user_cohort[user_index])
        aff = self.affinity(user_index, item_index)
        z = rng.standard_normal()
        context = rng.standard_normal(cfg.context_dim)
        y = math.exp(self.user_mu[user_index] + cfg.affinity_scale * aff
                     + self.user_sigma[user_index] * z)
        rate = cfg.cohort_positive_rate[cohort]
        if rate <= 0.0:
            b = 0
        elif rate >= 1.0:
            b = 1
        else:
            logit = math.log(rate / (1.0 - rate))
            b = int(rng.random() < 1.0 / (1.0 + math.exp(-(aff + logit))))
        return Interaction(
            user_id=self.user_ids[user_index],
            item_id=self.item_ids[item_index],
            ts=ts,
            features=self._features(user_index, item_index, context),
            y=y,
            b=b,
            affinity=aff,
            cohort=COHORTS[cohort],
        )

    def stream(self) -> Iterator[Interaction]:
        """Training stream: users drawn with cohort-dependent frequency,
        items uniform, timestamps strictly increasing. Deterministic per seed."""
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _STREAM_KEY]))
        for ts in range(cfg.stream_length):
            user_index = int(np.searchsorted(self._user_cumprob, rng.random()))
            user_index = min(user_index, cfg.n_users - 1)
            item_index = int(rng.integers(0, cfg.n_items))
            yield self._draw(user_index, item_index, ts, rng)

    def eval_block(self, items_per_user: int = 30) -> list[Interaction]:
        """Held-out per-user item blocks, timestamped after the stream.

        Every user scores the same number of distinct items, which is what
        the per-user ranking metrics need.
        """
        if items_per_user < 2:
            raise ConfigError(
                f"eval.items_per_user: must be >= 2, got {items_per_user}"
            )
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _EVAL_KEY]))
        n_items = min(items_per_user, cfg.n_items)
        out = []
        ts = cfg.stream_length
        for user_index in range(cfg.n_users):
            for item_index in rng.choice(cfg.n_items, size=n_items, replace=False):
                out.append(self._draw(user_index, int(item_index), ts, rng))
                ts += 1
        return out


def generate_stream(config: PopulationConfig) -> Iterator[Interaction]:
    """Convenience wrapper: validated config in, deterministic stream out."""
    return Population(config).stream()


class PercentileOracle:
    """Per-user empirical CDF built from a large sample of the user's
    marginal magnitude distribution (items and noise integrated out)."""

    def __init__(self, samples: dict[str, np.ndarray], cohorts: dict[str, str]):
        self._samples = samples
        self._cohorts = cohorts

    @classmethod
    def build(
        cls, population: Population, n_draws: int = 100_000
    ) -> "PercentileOracle":
        cfg = population.config
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _ORACLE_KEY]))
        k = cfg.latent_dim
        samples: dict[str, np.ndarray] = {}
        cohorts: dict[str, str] = {}
        for user_index, user_id in enumerate(population.user_ids):
            q = rng.normal(size=(n_draws, k))
            response = population._response[population.user_cohort[user_index]]
            aff = (q @ (response.T @ population.user_taste[user_index])) / math.sqrt(k)
            z = rng.standard_normal(n_draws)
            y = np.exp(
                population.user_mu[user_index]
                + cfg.affinity_scale * aff
                + population.user_sigma[user_index] * z
            )
            y.sort()
            samples[user_id] = y
            cohorts[user_id] = population.cohort_name(user_index)
        return cls(samples, cohorts)

    def users(self) -> list[str]:
        return list(self._samples)

    def true_percentile(self, user_id: str, y: float) -> float:
        """Empirical CDF just below y: P(historical magnitude < y)."""
        if user_id not in self._samples:
            raise KeyError(f"unknown user {user_id!r}; oracle was not built for it")
        arr = self._samples[user_id]
        return float(np.searchsorted(arr, y, side="left")) / len(arr)

    def quantile_grid(self, user_id: str, probs: np.ndarray) -> np.ndarray:
        if user_id not in self._samples:
            raise KeyError(f"unknown user {user_id!r}; oracle was not built for it")
        return np.quantile(self._samples[user_id], probs)

    def write_csv(self, path: str | Path, grid_points: int = 101) -> None:
        probs = np.linspace(0.0, 1.0, grid_points)
        header = "user_id,cohort," + ",".join(
            f"q{int(round(p * 100)):03d}" for p in probs
        )
        lines = [header]
        for user_id in self._samples:
            grid = self.quantile_grid(user_id, probs)
            values = ",".join(repr(float(v)) for v in grid)
            lines.append(f"{user_id},{self._cohorts[user_id]},{values}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ stream IO


def write_stream_jsonl(interactions: Sequence[Interaction] | Iterator[Interaction],
                       path: str | Path) -> int:
    """One interaction per line with stable field names. Returns line count."""
    count = 0
    with open(path, "w", encoding="utf-8") as sink:
        for it in interactions:
            record = {
                "user_id": it.user_id,
                "item_id": it.item_id,
                "ts": it.ts,
                "features": [float(v) for v in it.features],
                "y": it.y,
                "b": it.b,
                "affinity": it.affinity,
                "cohort": it.cohort,
            }
            sink.write(json.dumps(record) + "\n")
            count += 1
    return count


def read_stream_jsonl(path: str | Path) -> list[Interaction]:
    out = []
    with open(path, "r", encoding="utf-8") as source:
        for line_no, line in enumerate(source, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                out.append(Interaction(
                    user_id=record["user_id"],
                    item_id=record["item_id"],
                    ts=int(record["ts"]),
                    features=np.asarray(record["features"], dtype=np.float64),
                    y=float(record["y"]),
                    b=int(record["b"]),
                    affinity=float(record["affinity"]),
                    cohort=record["cohort"],
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}: bad interaction on line {line_no}: {exc}") from exc
    return out


def config_to_dict(config: PopulationConfig) -> dict:
    return asdict(config)
