"""Cross-core cache priming.

The primer owns a pool of lines outside the EPC with ``ways`` distinct tags
per targeted set and touches them way-major (every target set for tag 0,
then every set for tag 1, ...) at a fixed pace set by its bandwidth.

A full sweep leaves each target set holding exactly the primer's lines in a
fixed order, whatever it held before.  So when no other traffic happens for
longer than a sweep, only the last sweep's worth of accesses matters; the
generator drops the earlier ones.  This keeps idle victims (a request every
few milliseconds) cheap to simulate without changing the cache outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .events import LINE, EventStream, Origin

PRIMER_POOL_BASE = 0x1_8000_0000   # 6 GB: outside processor-reserved memory


class PacingError(ValueError):
    """Requested bandwidth needs more than one access per cycle."""


@dataclass(frozen=True)
class PrimerConfig:
    groups: Optional[Tuple[int, ...]] = None    # conflict groups; None = every set
    ways: int = 12
    bandwidth: float = 200e6                    # bytes per simulated second
    clock_hz: float = 1.2e9
    sets: int = 2048
    pool_base: int = PRIMER_POOL_BASE

    def __post_init__(self):
        if self.groups is not None and len(self.groups) == 0:
            raise ValueError("primer needs at least one target group")
        if self.bandwidth < 0:
            raise ValueError("bandwidth must be non-negative")
        if self.bandwidth > 0 and self.period < 1.0:
            raise PacingError(f"{self.bandwidth:.3g} B/s needs {1 / self.period:.2f} accesses per cycle")

    @property
    def enabled(self) -> bool:
        return self.bandwidth > 0

    @property
    def period(self) -> float:
        """Cycles between primer accesses."""
        return LINE * self.clock_hz / self.bandwidth

    def target_sets(self) -> np.ndarray:
        if self.groups is None:
            return np.arange(self.sets, dtype=np.int64)
        return np.concatenate([g * 64 + np.arange(64, dtype=np.int64) for g in sorted(self.groups)])

    @property
    def sweep_lines(self) -> int:
        return len(self.target_sets()) * self.ways

    @property
    def sweep_cycles(self) -> float:
        return self.sweep_lines * self.period

    def sweep_seconds(self) -> float:
        return self.sweep_cycles / self.clock_hz

    def addresses(self) -> np.ndarray:
        """Primer line addresses in sweep order."""
        sets = self.target_sets()
        k = np.arange(self.ways, dtype=np.int64)[:, None]
        return (self.pool_base + (k * self.sets + sets[None, :]) * LINE).ravel()


def sweep_time(cache_bytes: float, bandwidth: float) -> float:
    """Seconds to stream ``cache_bytes`` through the cache at ``bandwidth``."""
    return cache_bytes / bandwidth


class Primer:
    """Lazy primer: ``advance(t)`` returns the accesses due before cycle ``t``."""

    def __init__(self, config: PrimerConfig, start: int = 0):
        self.config = config
        self.addr = config.addresses().tolist()
        self.n = len(self.addr)
        self.period = config.period if config.enabled else float("inf")
        self.start = start
        self.k = 0          # index of the next access since start

    def _time(self, k: int) -> int:
        return self.start + int(k * self.period)

    def advance(self, t: int) -> Tuple[List[int], List[int]]:
        if not self.config.enabled or t <= self.start:
            return [], []
        # first access index with time >= t
        end = max(self.k, int(np.ceil((t - self.start) / self.period)))
        while end > self.k and self._time(end - 1) >= t:
            end -= 1
        while self._time(end) < t:
            end += 1
        k0 = self.k
        if end - k0 > self.n:
            k0 = end - self.n
        ts = [self._time(k) for k in range(k0, end)]
        pas = [self.addr[k % self.n] for k in range(k0, end)]
        self.k = end
        return ts, pas


def generate_priming(config: PrimerConfig, victim_timeline: Sequence[int]) -> EventStream:
    """Primer events interleaving the victim timeline (sorted timestamps).

    Covers ``[timeline[0], timeline[-1]]``; idle stretches longer than one
    sweep are shortened to their final sweep.
    """
    tl = np.asarray(victim_timeline, dtype=np.int64)
    if not config.enabled or len(tl) == 0:
        return EventStream.empty()
    p = Primer(config, start=int(tl[0]))
    ts: List[int] = []
    pas: List[int] = []
    for t in np.unique(tl).tolist()[1:] + [int(tl[-1]) + 1]:
        a, b = p.advance(t)
        ts.extend(a)
        pas.extend(b)
    n = len(ts)
    return EventStream(np.asarray(ts, np.int64), np.asarray(pas, np.int64), np.full(n, -1, np.int64),
                       np.zeros(n, bool), np.full(n, int(Origin.PRIMER), np.int8), np.full(n, -1, np.int64))
