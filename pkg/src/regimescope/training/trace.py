from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_FIELDS = ("iter", "loss", "grad_norm", "step_magnitude", "stage_tag")


@dataclass
class IterRecord:
    iter: int
    loss: float
    grad_norm: float
    step_magnitude: float
    stage_tag: str


@dataclass
class TrainingTrace:
    records: list[IterRecord] = field(default_factory=list)
    lambda_max: list[tuple[int, float]] = field(default_factory=list)
    theta: np.ndarray | None = None
    status: str = "running"
    wall_seconds: float = 0.0
    events: list[str] = field(default_factory=list)
    # per accepted line-search step: (t, f0, f_new, g0.d, g_new.d); used to audit Wolfe/Armijo
    line_search: list[tuple[float, float, float, float, float]] = field(default_factory=list)

    @property
    def last_iter(self) -> int:
        return self.records[-1].iter if self.records else -1

    def append(self, loss, grad_norm, step_magnitude, stage_tag) -> None:
        self.records.append(
            IterRecord(self.last_iter + 1, float(loss), float(grad_norm), float(step_magnitude), stage_tag)
        )

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def steps(self) -> np.ndarray:
        return np.array([r.step_magnitude for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for r in self.records:
                w.writerow([r.iter, repr(r.loss), repr(r.grad_norm), repr(r.step_magnitude), r.stage_tag])

    @classmethod
    def read_csv(cls, path) -> "TrainingTrace":
        trace = cls(status="loaded")
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                trace.records.append(
                    IterRecord(
                        int(row["iter"]),
                        float(row["loss"]),
                        float(row["grad_norm"]),
                        float(row["step_magnitude"]),
                        row["stage_tag"],
                    )
                )
        return trace


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
