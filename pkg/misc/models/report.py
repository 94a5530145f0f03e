from __future__ import annotations

import csv

from pathlib import Path

import numpy as np

from pydantic import BaseModel

METRICS = ("recall", "ndcg", "hr")


class RunMetrics(BaseModel):
    label: str
    sampler: str
    n: int | None
    seed: int
    k: int
    recall: float
    ndcg: float
    hr: float
    users: int


class MetricsRow(BaseModel):
    label: str
    sampler: str
    n: int | None
    k: int
    seeds: list[int]
    recall_mean: float
    recall_std: float
    ndcg_mean: float
    ndcg_std: float
    hr_mean: float
    hr_std: float
    flags: list[str] = []

    @classmethod
    def aggregate(cls, runs: list[RunMetrics], flags: list[str] | None = None) -> MetricsRow:
        """
        Mean and population standard deviation over the runs of one configuration.

        Args:
            runs (list[RunMetrics]): Runs sharing label, sampler, n and k.
            flags (list[str] | None): Notes carried to the row.

        Returns:
            MetricsRow: The aggregated row.
        """

        first = runs[0]
        stats = {}
        for name in METRICS:
            values = np.array([getattr(r, name) for r in runs])
            stats[f"{name}_mean"] = float(values.mean())
            stats[f"{name}_std"] = float(values.std())

        return cls(
            label=first.label, sampler=first.sampler, n=first.n, k=first.k,
            seeds=[r.seed for r in runs], flags=flags or [], **stats
        )


class MetricsReport(BaseModel):
    title: str = ""
    rows: list[MetricsRow] = []
    runs: list[RunMetrics] = []
    # configurations that could not be trained
    skipped: list[str] = []

    def row(self, label: str) -> MetricsRow:
        for row in self.rows:
            if row.label == label:
                return row
        raise KeyError(label)

    def to_csv(self, path: str | Path) -> None:
        """
        One line per configuration; floats with six decimals so reruns compare byte for byte.
        """

        columns = ["label", "sampler", "n", "k", "seeds"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
        with open(path, "w", encoding="utf-8", newline="") as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(columns + ["flags"])
            for row in self.rows:
                writer.writerow([
                    row.label, row.sampler, "" if row.n is None else row.n, row.k,
                    " ".join(map(str, row.seeds)),
                    *(f"{getattr(row, c):.6f}" for c in columns[5:]),
                    " ".join(row.flags),
                ])
            for label in self.skipped:
                writer.writerow([label] + [""] * (len(columns) - 1) + ["skipped:empty-pool"])

    def to_table(self) -> str:
        """
        Plain-text table: one line per configuration, Recall & NDCG & HR as mean±sd.
        """

        header = f"{'configuration':<28}{'Recall':>16}{'NDCG':>16}{'HR':>16}"
        lines = [self.title, header, "-" * len(header)] if self.title else [header, "-" * len(header)]
        for row in self.rows:
            cells = "".join(
                f"{getattr(row, f'{m}_mean'):>9.2f}±{getattr(row, f'{m}_std'):<6.2f}" for m in METRICS
            )
            note = f"  [{', '.join(row.flags)}]" if row.flags else ""
            lines.append(f"{row.label:<28}{cells}{note}")
        lines.extend(f"{label:<28}{'skipped, empty negative pool':>48}" for label in self.skipped)
        return "\n".join(lines)
