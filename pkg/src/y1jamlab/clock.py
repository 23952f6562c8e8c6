"""Logical session clock shared by the simulator, producer and jammer."""

from __future__ import annotations

import threading
from datetime import datetime, timedelta, timezone

EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


def iso_timestamp(seconds: float) -> str:
    return (EPOCH + timedelta(seconds=seconds)).isoformat(timespec="milliseconds")


def tick_of(timestamp: str) -> int:
    """Session tick encoded by an ISO-8601 timestamp."""
    ts = datetime.fromisoformat(timestamp.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return round((ts - EPOCH).total_seconds())


class VirtualClock:
    """Seconds since session start, advanced explicitly by the driver.

    Waiters (the live-mode dispatcher) block in :meth:`wait_past` until the
    driver moves time forward.
    """

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._cond = threading.Condition()
        self._closed = False

    def now(self) -> float:
        with self._cond:
            return self._now

    def advance_to(self, t: float) -> None:
        with self._cond:
            if t < self._now:
                raise ValueError(f"clock cannot move backwards ({t} < {self._now})")
            self._now = float(t)
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def wait_past(self, t: float, timeout: float | None = None) -> float | None:
        """Block until now() > t; returns the new time, or None on close/timeout."""
        with self._cond:
            ok = self._cond.wait_for(lambda: self._closed or self._now > t, timeout)
            if not ok or self._closed:
                return None
            return self._now
