"""Per-evaluation metrics records and their append-only JSON-lines files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass


@dataclass
class MetricsRecord:
    """One evaluation snapshot. Field names are the JSON schema."""

    stage: str
    iteration: int
    L_a: float
    L_m: float
    AL_a: float
    AL_m: float
    acc_spatial: float
    acc_temporal: float
    acc_fused: float
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))


class MetricsWriter:
    """Appends one JSON object per line; every line parses independently."""

    def __init__(self, path):
        self.path = path

    def write(self, record: MetricsRecord):
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(record.to_json() + "\n")


def read_metrics(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(MetricsRecord.from_json(line))
    return records
