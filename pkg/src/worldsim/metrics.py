"""Append-only JSONL metrics log with per-metric monotone steps."""

from __future__ import annotations

import json
import time
from pathlib import Path


class MetricsLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._last_step: dict[str, int] = {}
        if self.path.exists():
            for row in self.read():
                self._last_step[row["metric"]] = row["step"]

    def append(self, step: int, metric: str, value: float) -> None:
        last = self._last_step.get(metric)
        if last is not None and step < last:
            raise ValueError(
                f"step {step} for metric {metric!r} is behind the last logged step {last}"
            )
        self._last_step[metric] = step
        row = {"wall": time.time(), "step": int(step), "metric": metric, "value": float(value)}
        with open(self.path, "a") as fh:
            fh.write(json.dumps(row) + "\n")

    def read(self) -> list[dict]:
        if not self.path.exists():
            return []
        rows = []
        with open(self.path) as fh:
            for line in fh:
                if line.strip():
                    rows.append(json.loads(line))
        return rows

    def series(self, metric: str) -> list[tuple[int, float]]:
        return [(r["step"], r["value"]) for r in self.read() if r["metric"] == metric]
