from __future__ import annotations

from pathlib import Path

import ujson

from pydantic import BaseModel, ValidationError

from misc.exceptions import ConfigError
from misc.models.experiment import ExperimentConfig


class Manifest(BaseModel):
    config: ExperimentConfig
    # git-style content hash of the dataset file or of the generated edge list
    input_hash: str
    stages: list[str] = []
    artifacts: dict[str, str] = {}
    partial: bool = False
    failed_stage: str | None = None

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as file:
            file.write(self.model_dump_json(indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Manifest:
        try:
            with open(path, "r", encoding="utf-8") as file:
                return cls(**ujson.load(file))
        except (ValidationError, ValueError) as ex:
            raise ConfigError(f"invalid manifest {path}: {ex}") from ex
