"""Clock sources.

All timestamps in the system are UTC milliseconds taken from one injected
clock. Simulated fleets run on a :class:`VirtualClock` so campaigns are
deterministic and fast; demos against real time use :class:`SystemClock`.
"""

from __future__ import annotations

import threading
import time
from typing import Protocol


class Clock(Protocol):
    def now_ms(self) -> int: ...

    def sleep_ms(self, ms: int) -> None: ...

    def wait_until(self, at_ms: int) -> None: ...


class SystemClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def sleep_ms(self, ms: int) -> None:
        if ms > 0:
            time.sleep(ms / 1000.0)

    def wait_until(self, at_ms: int) -> None:
        self.sleep_ms(at_ms - self.now_ms())


class VirtualClock:
    """Monotone virtual time; sleeping advances it instead of blocking."""

    def __init__(self, start_ms: int = 0) -> None:
        self._now = start_ms
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return self._now

    def advance(self, ms: int) -> None:
        if ms < 0:
            raise ValueError("virtual clock cannot move backwards")
        with self._lock:
            self._now += ms

    def sleep_ms(self, ms: int) -> None:
        if ms > 0:
            self.advance(ms)

    def wait_until(self, at_ms: int) -> None:
        with self._lock:
            if at_ms > self._now:
                self._now = at_ms
