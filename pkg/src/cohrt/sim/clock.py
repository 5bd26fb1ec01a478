"""Injectable time source and event scheduler.

Virtual mode owns a deterministic priority queue: time jumps to the next
due callback, ties break on insertion order, and a whole simulated session
runs in wall-clock milliseconds. Real-time mode keeps the same interface
but sleeps on a monotonic clock and accepts thread-safe injection from
socket reader threads.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable


class Handle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Scheduler:
    def __init__(self, real_time: bool = False):
        self.real_time = real_time
        self._queue: list[tuple[int, int, Handle, Callable[[], None]]] = []
        self._counter = itertools.count()
        self._now = 0
        self._t0 = time.monotonic()
        self._cond = threading.Condition()
        self._stopped = False

    def now_ms(self) -> int:
        if self.real_time:
            return int((time.monotonic() - self._t0) * 1000)
        return self._now

    def call_at(self, ts_ms: int, fn: Callable[[], None]) -> Handle:
        handle = Handle()
        with self._cond:
            heapq.heappush(self._queue, (max(ts_ms, self.now_ms()), next(self._counter), handle, fn))
            self._cond.notify()
        return handle

    def call_after(self, delay_ms: int, fn: Callable[[], None]) -> Handle:
        return self.call_at(self.now_ms() + max(0, delay_ms), fn)

    def inject(self, fn: Callable[[], None]) -> Handle:
        """Run ``fn`` on the scheduler thread as soon as possible (thread-safe)."""
        return self.call_at(self.now_ms(), fn)

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()

    def run(self, until: Callable[[], bool] | None = None,
            deadline_ms: int | None = None) -> None:
        """Drain events until ``until()`` holds, the deadline passes, or the
        queue empties (virtual) / ``stop`` is called."""
        while True:
            with self._cond:
                if self._stopped:
                    return
                if until is not None and until():
                    return
                if not self._queue:
                    if not self.real_time:
                        return
                    self._cond.wait(timeout=0.2)
                    continue
                ts, _, handle, fn = self._queue[0]
                if deadline_ms is not None and ts > deadline_ms:
                    self._now = max(self._now, deadline_ms)
                    return
                if self.real_time:
                    delay = ts / 1000 - (time.monotonic() - self._t0)
                    if delay > 0:
                        self._cond.wait(timeout=min(delay, 0.2))
                        continue
                heapq.heappop(self._queue)
                if not self.real_time:
                    self._now = ts
            if not handle.cancelled:
                fn()
