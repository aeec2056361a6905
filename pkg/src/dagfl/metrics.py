"""Run metrics: the time-series log and its CSV/JSON artifacts.

The CSV schema is versioned by its leading comment line; floats are
written with repr() so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

CSV_VERSION_LINE = "# dagfl-metrics v1"
CSV_COLUMNS = ("time", "iterations", "tips", "accuracy", "loss")


@dataclass(frozen=True)
class MetricsRow:
    time: float
    iterations: int
    tips: int
    accuracy: float
    loss: float


@dataclass
class MetricsLog:
    system: str
    seed: int
    rows: list[MetricsRow] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.time < self.rows[-1].time:
            raise ValueError("metrics rows must be appended in time order")
        self.rows.append(row)

    @property
    def final_accuracy(self) -> float:
        if not self.rows:
            raise ValueError("empty metrics log")
        return self.rows[-1].accuracy

    def write_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(CSV_VERSION_LINE + "\n")
            f.write(f"# system={self.system} seed={self.seed}\n")
            f.write(",".join(CSV_COLUMNS) + "\n")
            for r in self.rows:
                f.write(
                    f"{r.time!r},{r.iterations},{r.tips},"
                    f"{r.accuracy!r},{r.loss!r}\n"
                )

    def write_summary(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.summary, f, sort_keys=True, indent=2)
            f.write("\n")


def read_csv(path: str) -> MetricsLog:
    system, seed = "unknown", -1
    rows = []
    with open(path) as f:
        version = f.readline().rstrip("\n")
        if version != CSV_VERSION_LINE:
            raise ValueError(f"unsupported metrics version line {version!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = dict(
                    kv.split("=", 1) for kv in line[1:].split() if "=" in kv
                )
                system = parts.get("system", system)
                seed = int(parts.get("seed", seed))
                continue
            if line.startswith("time,"):
                continue
            t, iters, tips, acc, loss = line.split(",")
            rows.append(MetricsRow(float(t), int(iters), int(tips),
                                   float(acc), float(loss)))
    return MetricsLog(system, seed, rows)
