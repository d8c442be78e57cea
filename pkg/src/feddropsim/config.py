"""File-backed experiment configuration.

Configs are flat key/value YAML documents validated into ExperimentConfig
before anything runs; unknown keys are rejected so typos fail loudly instead
of silently using a default. Validation failures surface as ConfigError with
one line per offending field.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .errors import ConfigError, RateError
from .strategies import rate_to_twentieths


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # dataset source: generated blobs or a CSV file
    data_source: Literal["synthetic", "csv"] = "synthetic"
    csv_path: str | None = None
    classes: int = Field(default=3, ge=2)
    dim: int = Field(default=8, ge=2)
    n_per_class: int = Field(default=200, ge=1)
    spread: float = Field(default=0.6, gt=0)
    data_seed: int = Field(default=7, ge=0)  # fixed across run seeds on purpose

    # how the dataset is split across clients
    partition: Literal["iid", "label_skew"] = "iid"
    skew_alpha: float = Field(default=0.5, gt=0)
    client_count: int = Field(default=5, ge=2)
    client_base_times_s: list[float] = [10.0, 12.0, 14.0, 16.0, 100.0]

    # model and local training
    hidden_layers: list[int] = [64, 64]
    learning_rate: float = Field(default=0.05, gt=0)
    batch_size: int = Field(default=32, ge=1)
    local_epochs: int = Field(default=1, ge=1)

    # federation
    method: Literal["none", "random", "ordered", "invariant"] = "invariant"
    rounds: int = Field(default=30, ge=1)
    straggler_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    straggler_ids: list[int] | None = None  # explicit override; [] = no stragglers
    target_slack: float = Field(default=0.10, ge=0)

    # dropout strategy knobs
    warmup_rounds: int = Field(default=5, ge=0)
    threshold_growth: float = Field(default=1.1, gt=1.0)
    r_min: float = 0.5
    fixed_rate: float | None = None  # force this rate, skipping time-based choice

    # execution
    seeds: list[int] = [0]
    output_dir: str = "runs"

    @field_validator("r_min", "fixed_rate")
    @classmethod
    def _on_rate_grid(cls, v: float | None) -> float | None:
        if v is not None:
            try:
                rate_to_twentieths(v)
            except RateError as exc:
                raise ValueError(str(exc)) from exc
        return v

    @field_validator("hidden_layers")
    @classmethod
    def _hidden_ok(cls, v: list[int]) -> list[int]:
        if not v:
            raise ValueError("at least one hidden layer is required")
        if any(h < 1 for h in v):
            raise ValueError("hidden layer sizes must be >= 1")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds_ok(cls, v: list[int]) -> list[int]:
        if not v:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in v):
            raise ValueError("seeds must be nonnegative")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be unique")
        return v

    @model_validator(mode="after")
    def _cross_field(self) -> "ExperimentConfig":
        if self.data_source == "csv" and not self.csv_path:
            raise ValueError("csv_path is required when data_source is 'csv'")
        if len(self.client_base_times_s) != self.client_count:
            raise ValueError(
                f"client_base_times_s has {len(self.client_base_times_s)} entries "
                f"for client_count {self.client_count}"
            )
        if any(t <= 0 for t in self.client_base_times_s):
            raise ValueError("client base times must be positive")
        if self.straggler_ids is not None:
            ids = self.straggler_ids
            if len(set(ids)) != len(ids):
                raise ValueError("straggler_ids contains duplicates")
            if any(not 0 <= i < self.client_count for i in ids):
                raise ValueError("straggler_ids must lie in [0, client_count)")
            if len(ids) >= self.client_count:
                raise ValueError("at least one client must remain a non-straggler")
        return self


def validate_config(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping, converting pydantic errors into one ConfigError
    with a line per offending field."""
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(part) for part in err["loc"]) or "<config>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping of keys to values")
    return validate_config(raw)
