# metrics_log.py: per-round metric records and their CSV form

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional

from csv_manager import CsvManager
from errors import SchemaError


# ---------------------------
# Logging
# ---------------------------

logger = logging.getLogger(__name__)


PHASES = ("train", "eval", "test")
CSV_HEADER = ("round", "client_id", "phase", "loss", "accuracy")


def format_float(value: float) -> str:
    return format(float(value), ".12g")


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    client_id: int
    phase: str
    loss: float
    accuracy: float

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"METRICS: phase must be one of {PHASES}, got '{self.phase}'")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"METRICS: accuracy {self.accuracy} outside [0, 1]")
        if not math.isfinite(self.loss) or self.loss < 0.0:
            raise ValueError(f"METRICS: loss must be finite and >= 0, got {self.loss}")

    def as_row(self):
        return (self.round, self.client_id, self.phase, format_float(self.loss), format_float(self.accuracy))


class MetricsLog:
    """Append-only (round, client, phase, loss, accuracy) records in insertion order."""

    def __init__(self, records: Optional[Iterable[MetricsRecord]] = None):
        self.records: List[MetricsRecord] = list(records or [])

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, MetricsLog) and self.records == other.records

    def add(self, round_idx: int, client_id: int, phase: str, loss: float, accuracy: float) -> MetricsRecord:
        record = MetricsRecord(int(round_idx), int(client_id), phase, float(loss), float(accuracy))
        self.records.append(record)
        return record

    def extend(self, other: "MetricsLog") -> None:
        self.records.extend(other.records)

    def for_phase(self, phase: str, round_idx: Optional[int] = None) -> List[MetricsRecord]:
        return [
            r for r in self.records
            if r.phase == phase and (round_idx is None or r.round == round_idx)
        ]

    def last_round(self, phase: str) -> Optional[int]:
        rounds = [r.round for r in self.records if r.phase == phase]
        return max(rounds) if rounds else None

    def mean(self, phase: str, field: str = "accuracy", round_idx: Optional[int] = None) -> float:
        selected = self.for_phase(phase, round_idx)
        if not selected:
            return float("nan")
        return sum(getattr(r, field) for r in selected) / len(selected)

    def to_csv(self, path: str) -> str:
        return CsvManager().write_rows(path, CSV_HEADER, (r.as_row() for r in self.records))

    @classmethod
    def from_csv(cls, path: str) -> "MetricsLog":
        header, rows = CsvManager().read_rows(path)
        if header != CSV_HEADER:
            raise SchemaError(f"METRICS: {path} has header {','.join(header)}, expected {','.join(CSV_HEADER)}")
        log = cls()
        for row in rows:
            log.add(int(row[0]), int(row[1]), row[2], float(row[3]), float(row[4]))
        logger.debug(f"METRICS: read {len(log)} records from {path}")
        return log
