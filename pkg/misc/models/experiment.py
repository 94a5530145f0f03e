from __future__ import annotations

import copy

from pathlib import Path
from typing import Any, Iterable, Literal

import ujson

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from misc.exceptions import ConfigError

SamplerKind = Literal["ns4ar", "uniform_rns", "dns_hard", "exposure_argmax", "recns"]


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticSpec(Section):
    users: int = Field(200, ge=1)
    items: int = Field(500, ge=1)
    communities: int = Field(20, ge=1)
    intra_probability: float = Field(0.12, ge=0.0, le=1.0)
    cross_probability: float = Field(0.004, ge=0.0, le=1.0)
    exposure_rate: float = Field(0.1, ge=0.0, le=1.0)
    seed: int = 0


class DatasetConfig(Section):
    path: Path | None = None
    delimiter: str = "\t"
    synthetic: SyntheticSpec | None = None

    @model_validator(mode="after")
    def one_source(self) -> DatasetConfig:
        if self.path is None and self.synthetic is None:
            raise ValueError("dataset needs either a path or a synthetic spec")
        if self.path is not None and self.synthetic is not None:
            raise ValueError("dataset takes a path or a synthetic spec, not both")
        return self


class SplitConfig(Section):
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    @field_validator("ratios")
    @classmethod
    def fractions(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if min(value) <= 0 or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"ratios must be positive and sum to 1, got {value}")
        return value


class SimilarityConfig(Section):
    include_exposures: bool = False


class SelectionConfig(Section):
    method: Literal["stagewise", "random"] = "stagewise"
    step: float = Field(0.01, gt=0.0)
    residual_threshold: float | None = Field(None, ge=0.0)
    max_iterations: int = Field(10_000, ge=1)
    # None means 5 * k
    m: int | None = Field(None, ge=1)


class SamplerConfig(Section):
    kind: SamplerKind = "ns4ar"
    k: int = Field(4, ge=1)
    # None ties the region count to each user's shell count
    n: int | None = Field(None, ge=1)
    dns_pool: int = Field(16, ge=1)
    # None means the training seed
    seed: int | None = None
    core_quota: float = Field(0.5, ge=0.0, le=1.0)
    use_exposure_argmax: bool = True
    regions: tuple[int, ...] | None = None

    @model_validator(mode="after")
    def pool_size(self) -> SamplerConfig:
        if self.kind == "dns_hard" and self.dns_pool < 2:
            raise ValueError("dns_pool must be at least 2 for dns_hard")
        if self.regions is not None and (not self.regions or min(self.regions) < 1):
            raise ValueError(f"regions must be a nonempty list of region indices, got {self.regions}")
        return self


class TrainConfig(Section):
    gamma: float = Field(0.1, ge=0.0)
    lr: float = Field(0.05, gt=0.0)
    epochs: int = Field(20, ge=0)
    batch_size: int = Field(256, ge=1)
    seed: int = 0
    dim: int = Field(64, ge=1)
    layers: int = Field(2, ge=0)
    refresh: Literal["batch", "epoch"] = "batch"
    patience: int = Field(0, ge=0)
    eval_every: int = Field(1, ge=1)
    sampler: SamplerConfig = SamplerConfig()

    @property
    def k(self) -> int:
        return self.sampler.k


class EvalConfig(Section):
    k: int = Field(20, ge=1)
    seeds: tuple[int, ...] = (0,)

    @field_validator("seeds")
    @classmethod
    def nonempty(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value:
            raise ValueError("at least one seed is required")
        return value


class ExperimentConfig(Section):
    dataset: DatasetConfig
    split: SplitConfig = SplitConfig()
    khop: int = Field(100, ge=1)
    similarity: SimilarityConfig = SimilarityConfig()
    selection: SelectionConfig = SelectionConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    out: Path | None = None

    @property
    def sampler(self) -> SamplerConfig:
        return self.train.sampler

    @property
    def n(self) -> int | None:
        return self.train.sampler.n

    @property
    def m(self) -> int:
        return self.selection.m or 5 * self.train.sampler.k

    def with_seed(self, seed: int) -> ExperimentConfig:
        """
        Copy with the split and training seeds set to ``seed``.
        """

        return self.model_copy(update={
            "split": self.split.model_copy(update={"seed": seed}),
            "train": self.train.model_copy(update={"seed": seed}),
        })

    def with_sampler(self, **changes) -> ExperimentConfig:
        """
        Copy with sampler fields replaced, re-validated.
        """

        sampler = SamplerConfig(**{**self.sampler.model_dump(), **changes})
        return self.model_copy(update={"train": self.train.model_copy(update={"sampler": sampler})})


def apply_override(data: dict[str, Any], keys: list[str], value: Any) -> None:
    """
    Sets ``data[k1][k2]...[kn] = value``, creating the intermediate sections.
    """

    section = data
    for key in keys[:-1]:
        child = section.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{'.'.join(keys)}: '{key}' is not a section")
        section = child
    section[keys[-1]] = value


def load_config(
        path: str | Path | None = None,
        overrides: Iterable[tuple[list[str], Any]] = (),
        data: dict[str, Any] | None = None
) -> ExperimentConfig:
    """
    Reads a JSON experiment config, applies overrides and validates the result.

    Args:
        path (str | Path | None): Config file; optional when ``data`` is given.
        overrides (Iterable[tuple[list[str], Any]]): Key paths and values, applied in order.
        data (dict[str, Any] | None): Base settings used instead of a file.

    Returns:
        ExperimentConfig: The validated configuration.

    Raises:
        ConfigError: The file is missing or unreadable, or validation failed.
    """

    raw: dict[str, Any] = copy.deepcopy(data or {})
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as file:
                raw = ujson.load(file)
        except OSError as ex:
            raise ConfigError(f"cannot read config {path}: {ex}") from ex
        except ValueError as ex:
            raise ConfigError(f"config {path} is not valid JSON: {ex}") from ex

    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    for keys, value in overrides:
        apply_override(raw, keys, value)

    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as ex:
        raise ConfigError(str(ex)) from ex
