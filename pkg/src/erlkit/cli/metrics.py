"""Append-only JSON-lines metrics, with wall-clock timing kept in a separate file."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

FORMAT = "erlkit-metrics/1"


def _sanitize(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    return value


def encode(record: dict) -> str:
    """One line of JSON; non-finite floats become null."""
    return json.dumps(_sanitize(record), separators=(",", ":"), allow_nan=False)


class MetricsWriter:
    """Writes ``metrics.jsonl`` (deterministic) and ``timing.jsonl`` (wall-clock) side by side.

    Every record is flushed as it is written, so a crash leaves all earlier
    records on disk.
    """

    def __init__(self, directory, header: dict):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._metrics = open(self.dir / "metrics.jsonl", "w", encoding="utf-8")
        self._timing = open(self.dir / "timing.jsonl", "w", encoding="utf-8")
        self._t0 = time.perf_counter()
        self._last = self._t0
        self.count = 0
        self.emit({"event": "header", "format": FORMAT, **header}, timed=False)

    def emit(self, record: dict, timed: bool = True):
        self._metrics.write(encode(record) + "\n")
        self._metrics.flush()
        self.count += 1
        if timed:
            now = time.perf_counter()
            self._timing.write(encode({
                "event": record.get("event"),
                "iteration": record.get("iteration"),
                "wall_ms": round((now - self._last) * 1e3, 3),
                "elapsed_ms": round((now - self._t0) * 1e3, 3),
            }) + "\n")
            self._timing.flush()
            self._last = now

    def close(self):
        self._metrics.close()
        self._timing.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
