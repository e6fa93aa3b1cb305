"""
metrics.py - JSON-lines metrics stream.

One record per line, keys sorted, appended under a lock.  The ``step`` (or
``epoch``) field must strictly increase.  ``wall_ms`` is kept only when wall
time logging is switched on; otherwise it is written as ``null`` so two runs
with the same seed and config produce identical files.
"""

from __future__ import annotations

import json
import math
import threading
from pathlib import Path
from typing import Any, Iterator, Mapping

from .errors import ContractError, DataError

__all__ = ["MetricsWriter", "read_metrics"]


def _clean(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class MetricsWriter:
    """Append-only metrics file with a monotone ordering key."""

    def __init__(self, path: str | Path, *, key: str = "step", log_wall_time: bool = False) -> None:
        self.path = Path(path)
        self.key = key
        self.log_wall_time = log_wall_time
        self._last: int | None = None
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")
        self.count = 0

    def write(self, record: Mapping[str, Any]) -> None:
        if self.key not in record:
            raise ContractError(f"metrics record lacks '{self.key}': {sorted(record)}")
        position = int(record[self.key])
        row = {k: _clean(v) for k, v in record.items()}
        if "wall_ms" in row and not self.log_wall_time:
            row["wall_ms"] = None
        line = json.dumps(row, sort_keys=True)
        with self._lock:
            if self._last is not None and position <= self._last:
                raise ContractError(f"metrics {self.key} must increase: {position} after {self._last}")
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
            self._last = position
            self.count += 1


def read_metrics(path: str | Path) -> Iterator[dict]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{number}: not a JSON record") from exc
