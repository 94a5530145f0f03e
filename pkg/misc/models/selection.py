from __future__ import annotations

from pathlib import Path
from typing import Sequence, TextIO

from pydantic import BaseModel


class TraceStep(BaseModel):
    iteration: int
    feature: str
    bic: float
    residual_norm: float


class SelectionResult(BaseModel):
    user: int
    selected: list[int] = []
    scores: list[float] = []
    regions: list[int] = []
    coefficients: dict[str, float] = {}
    trace: list[TraceStep] = []
    fisher_p: float = 1.0
    significant: bool = False
    flags: list[str] = []

    def dump(self, file: TextIO, user_id: str | None = None, item_ids: Sequence[str] | None = None) -> None:
        """
        Writes the selected items (item, score, region) followed by the iteration trace.

        Args:
            file (TextIO): Open text stream.
            user_id (str | None): Raw user id, the dense index if not given.
            item_ids (Sequence[str] | None): Raw item ids by dense index.
        """

        label = user_id if user_id is not None else str(self.user)
        file.write(f"# user {label} fisher_p={self.fisher_p!r} significant={self.significant}\n")
        file.writelines(
            f"{item_ids[item] if item_ids is not None else item}\t{score!r}\t{region}\n"
            for item, score, region in zip(self.selected, self.scores, self.regions)
        )
        file.write("# iteration\tfeature\tbic\tresidual_norm\n")
        file.writelines(
            f"{s.iteration}\t{s.feature}\t{s.bic!r}\t{s.residual_norm!r}\n" for s in self.trace
        )


class SelectionBatch(BaseModel):
    results: list[SelectionResult] = []

    def by_user(self) -> dict[int, SelectionResult]:
        return {r.user: r for r in self.results}

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as file:
            file.write(self.model_dump_json())

    @classmethod
    def load(cls, path: str | Path) -> SelectionBatch:
        with open(path, "r", encoding="utf-8") as file:
            return cls.model_validate_json(file.read())
