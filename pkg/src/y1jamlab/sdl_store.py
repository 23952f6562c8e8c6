"""In-memory shared data layer holding per-cell analytics time series."""

from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass

from .ran_sim import AnalyticsSample, samples_to_csv

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 1024


class NonMonotonicTick(ValueError):
    pass


class InvalidRange(ValueError):
    pass


@dataclass(frozen=True)
class CellKey:
    pci: int
    carrier_id: int

    @classmethod
    def of(cls, sample: AnalyticsSample) -> "CellKey":
        return cls(sample.pci, sample.carrier_id)


class SdlStore:
    """Append-only ring buffer per cell.

    One writer and many readers may use the store concurrently. Samples are
    frozen dataclasses, so a reader holding one never sees a partial write.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._series: dict[CellKey, deque[AnalyticsSample]] = {}
        self._lock = threading.RLock()

    def put_sample(self, key: CellKey, sample: AnalyticsSample) -> None:
        with self._lock:
            series = self._series.setdefault(key, deque(maxlen=self.capacity))
            if series and sample.tick <= series[-1].tick:
                raise NonMonotonicTick(
                    f"tick {sample.tick} <= latest stored tick {series[-1].tick} for {key}")
            series.append(sample)

    def latest(self, key: CellKey) -> AnalyticsSample | None:
        """Newest sample for ``key``, or None when nothing is stored."""
        with self._lock:
            series = self._series.get(key)
            return series[-1] if series else None

    def range(self, key: CellKey, from_tick: int, to_tick: int) -> list[AnalyticsSample]:
        if from_tick > to_tick:
            raise InvalidRange(f"from_tick {from_tick} > to_tick {to_tick}")
        with self._lock:
            series = list(self._series.get(key, ()))
        return [s for s in series if from_tick <= s.tick <= to_tick]

    def keys(self) -> list[CellKey]:
        with self._lock:
            return list(self._series)

    def __len__(self) -> int:
        with self._lock:
            return sum(len(s) for s in self._series.values())

    def dump_csv(self, key: CellKey) -> str:
        with self._lock:
            series = list(self._series.get(key, ()))
        return samples_to_csv(series)
