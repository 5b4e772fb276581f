"""Declarative experiment configuration.

One JSON file drives the whole pipeline: population, training, and eval
settings plus the output directory. Parsing is strict: unknown keys are
rejected so typos fail loudly before any work starts, and every parsed
config carries the sha256 of its fully resolved form so output files can
be traced back to exactly what produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .synth import PopulationConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class EvalSettings:
    items_per_user: int = 30
    pairs_per_user: int = 100

    def validate(self) -> None:
        if self.items_per_user < 2:
            raise ConfigError(
                f"eval.items_per_user: must be >= 2, got {self.items_per_user}"
            )
        if self.pairs_per_user < 1:
            raise ConfigError(
                f"eval.pairs_per_user: must be >= 1, got {self.pairs_per_user}"
            )


@dataclass(frozen=True)
class ExperimentConfig:
    population: PopulationConfig
    train: TrainConfig
    eval: EvalSettings
    output_dir: str = "runs/out"
    train_baseline: bool = True

    def validate(self) -> None:
        self.population.validate()
        self.train.validate()
        self.eval.validate()

    def to_dict(self) -> dict:
        return {
            "population": dataclasses.asdict(self.population),
            "train": {**dataclasses.asdict(self.train),
                      "hidden": list(self.train.hidden)},
            "eval": dataclasses.asdict(self.eval),
            "output_dir": self.output_dir,
            "train_baseline": self.train_baseline,
        }

    def sha256(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build_section(name: str, cls, raw: dict, tuple_fields: tuple[str, ...] = ()):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {sorted(unknown)}")
    values = dict(raw)
    for field_name in tuple_fields:
        if field_name in values:
            if not isinstance(values[field_name], (list, tuple)):
                raise ConfigError(f"{name}.{field_name}: must be a list")
            values[field_name] = tuple(values[field_name])
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


_POPULATION_TUPLES = (
    "cohort_weights", "cohort_mu", "cohort_sigma",
    "cohort_positive_rate", "cohort_activity",
)


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"population", "train", "eval", "output_dir", "train_baseline"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    population = _build_section(
        "population", PopulationConfig, raw.get("population", {}),
        _POPULATION_TUPLES,
    )
    train = _build_section("train", TrainConfig, raw.get("train", {}), ("hidden",))
    eval_settings = _build_section("eval", EvalSettings, raw.get("eval", {}))
    output_dir = raw.get("output_dir", "runs/out")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir: must be a non-empty string")
    train_baseline = raw.get("train_baseline", True)
    if not isinstance(train_baseline, bool):
        raise ConfigError("train_baseline: must be true or false")
    config = ExperimentConfig(population, train, eval_settings,
                              output_dir, train_baseline)
    config.validate()
    return config


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_experiment_config(raw)


def with_overrides(
    config: ExperimentConfig,
    seed: int | None = None,
    output_dir: str | None = None,
) -> ExperimentConfig:
    """Apply the only two flag overrides the pipeline accepts."""
    population = config.population
    train = config.train
    if seed is not None:
        population = dataclasses.replace(population, seed=seed)
        train = dataclasses.replace(train, seed=seed)
    out = output_dir if output_dir is not None else config.output_dir
    updated = ExperimentConfig(population, train, config.eval, out,
                               config.train_baseline)
    updated.validate()
    return updated
