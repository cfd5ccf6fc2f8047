"""Forecast records and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

SCHEMA = "#schema=sfb.records/1"
COLUMNS = ["region", "model", "horizon", "origin", "origin_index", "target_index",
           "y_actual", "y_hat", "error"]


@dataclass(frozen=True)
class ForecastRecord:
    """One h-step forecast made at ``origin`` (the last observed month)."""

    region: str
    model_id: str
    horizon: int
    origin: str
    origin_index: int
    y_actual: float
    y_hat: float
    error: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "error", self.y_actual - self.y_hat)

    @property
    def target_index(self) -> int:
        return self.origin_index + self.horizon

    @property
    def key(self) -> tuple:
        return (self.origin_index, self.horizon)


def write_records(records: Iterable[ForecastRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            w.writerow([r.region, r.model_id, r.horizon, r.origin, r.origin_index,
                        r.target_index, repr(r.y_actual), repr(r.y_hat), repr(r.error)])


def read_records(path) -> list[ForecastRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != SCHEMA:
            raise ValueError(f"{path}: expected {SCHEMA!r}, got {first!r}")
        reader = csv.DictReader(fh)
        return [
            ForecastRecord(row["region"], row["model"], int(row["horizon"]), row["origin"],
                           int(row["origin_index"]), float(row["y_actual"]), float(row["y_hat"]))
            for row in reader
        ]
