"""Physically indexed, set-associative last-level cache.

Write-back, write-allocate, true LRU.  Lines are identified by their line
number (``pa >> 6``); the set index is the low ``log2(sets)`` bits of it.
Prefetchers hang off the demand stream and insert lines through the same
access path, so they update recency like demand accesses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .events import LINE, PAGE, EventStream, Origin, StreamBuilder

LINE_SHIFT = 6
LINES_PER_PAGE = PAGE // LINE


@dataclass(frozen=True)
class CacheConfig:
    sets: int = 2048
    ways: int = 12
    line_size: int = LINE
    prefetch_next_line: bool = False
    prefetch_spatial_128: bool = False
    prefetch_stream: bool = False
    stream_distance: int = 20

    def __post_init__(self):
        if self.sets < 128 or self.sets & (self.sets - 1):
            raise ValueError(f"sets must be a power of two >= 128, got {self.sets}")
        if self.ways < 1:
            raise ValueError("ways must be >= 1")
        if self.line_size != LINE:
            raise ValueError("only 64-byte lines are modelled")

    @property
    def set_bits(self) -> int:
        return self.sets.bit_length() - 1

    @property
    def size_bytes(self) -> int:
        return self.sets * self.ways * self.line_size

    @property
    def any_prefetch(self) -> bool:
        return self.prefetch_next_line or self.prefetch_spatial_128 or self.prefetch_stream


class Outcome(NamedTuple):
    hit: bool
    fill: int        # physical address read from DRAM, -1 on a hit
    writeback: int   # dirty victim written back, -1 if none


def set_index(pa: int, sets: int = 2048) -> int:
    return (pa >> LINE_SHIFT) & (sets - 1)


class Cache:
    """Cache state plus the access/prefetch operations on it."""

    def __init__(self, config: CacheConfig = CacheConfig()):
        self.config = config
        self._mask = config.sets - 1
        self._ways = config.ways
        # per set: line -> dirty, in LRU order (first = least recent)
        self._sets: List[dict] = [dict() for _ in range(config.sets)]
        self._streams: dict = {}
        self.hits = 0
        self.misses = 0
        self.writebacks = 0

    def __contains__(self, pa: int) -> bool:
        line = pa >> LINE_SHIFT
        return line in self._sets[line & self._mask]

    def is_dirty(self, pa: int) -> bool:
        line = pa >> LINE_SHIFT
        return bool(self._sets[line & self._mask].get(line, False))

    def set_contents(self, index: int) -> List[Tuple[int, bool]]:
        """(line address, dirty) pairs of one set, least recent first."""
        return [(line << LINE_SHIFT, d) for line, d in self._sets[index].items()]

    def resident_lines(self) -> int:
        return sum(len(s) for s in self._sets)

    def access_line(self, line: int, is_write: bool) -> Tuple[bool, int]:
        """Hot path.  Returns (hit, evicted dirty line or -1)."""
        s = self._sets[line & self._mask]
        dirty = s.pop(line, None)
        if dirty is not None:
            s[line] = dirty or is_write
            self.hits += 1
            return True, -1
        self.misses += 1
        evicted = -1
        if len(s) >= self._ways:
            victim = next(iter(s))
            if s.pop(victim):
                evicted = victim
                self.writebacks += 1
        s[line] = is_write
        return False, evicted

    def access(self, pa: int, is_write: bool = False) -> Outcome:
        line = pa >> LINE_SHIFT
        hit, ev = self.access_line(line, is_write)
        return Outcome(hit, -1 if hit else line << LINE_SHIFT, -1 if ev < 0 else ev << LINE_SHIFT)

    def prefetch_lines(self, line: int) -> List[int]:
        """Lines the enabled prefetchers request after a demand access to ``line``.

        Next-line and stream prefetches stay inside the 4 KB page.
        """
        cfg = self.config
        out = []
        if cfg.prefetch_spatial_128:
            out.append(line ^ 1)
        if cfg.prefetch_next_line and (line + 1) % LINES_PER_PAGE:
            nxt = line + 1
            if nxt not in out:
                out.append(nxt)
        if cfg.prefetch_stream:
            for p in self._stream_step(line):
                if p not in out:
                    out.append(p)
        return out

    def _stream_step(self, line: int) -> List[int]:
        page = line // LINES_PER_PAGE
        st = self._streams.pop(page, None)
        if st is None:
            if len(self._streams) >= 64:
                self._streams.pop(next(iter(self._streams)))
            self._streams[page] = [line, 0, 0, line]
            return []
        last, d, conf, frontier = st
        step = line - last
        if step in (1, -1):
            if step == d:
                conf += 1
            else:
                d, conf, frontier = step, 1, line
        else:
            conf = 0
        out = []
        if conf >= 2:
            lo = page * LINES_PER_PAGE
            hi = lo + LINES_PER_PAGE - 1
            target = min(max(line + d * self.config.stream_distance, lo), hi)
            start = max(frontier, line) if d > 0 else min(frontier, line)
            p = start + d
            while (p <= target) if d > 0 else (p >= target):
                out.append(p)
                p += d
            if out:
                frontier = out[-1]
        self._streams[page] = [line, d, conf, frontier]
        return out

    def run_prefetchers(self, pa: int) -> List[int]:
        return [p << LINE_SHIFT for p in self.prefetch_lines(pa >> LINE_SHIFT)]

    def simulate(self, stream: EventStream, debug=None) -> "CacheRun":
        """Feed a PA-resolved stream through the cache.

        Returns the DRAM requests (fills and write-backs) in issue order and
        a per-event hit flag.  With ``debug`` (a writable text file), one line
        per demand event is written: ``cycle,HIT|MISS,origin,r|w,pa,set``.
        """
        req_t, req_pa, req_w, req_src = [], [], [], []
        hits = np.zeros(len(stream), dtype=bool)
        prefetch = self.config.any_prefetch
        ts = stream.timestamp.tolist()
        pas = stream.pa.tolist()
        ws = stream.is_write.tolist()
        origins = stream.origin.tolist()
        for i in range(len(ts)):
            line = pas[i] >> LINE_SHIFT
            hit, ev = self.access_line(line, ws[i])
            hits[i] = hit
            t = ts[i]
            if not hit:
                req_t.append(t); req_pa.append(line << LINE_SHIFT); req_w.append(False); req_src.append(i)
            if ev >= 0:
                req_t.append(t); req_pa.append(ev << LINE_SHIFT); req_w.append(True); req_src.append(i)
            if debug is not None:
                debug.write(f"{t},{'HIT' if hit else 'MISS'},{Origin(origins[i]).name.lower()},"
                            f"{'w' if ws[i] else 'r'},{pas[i]:#x},{line & self._mask}\n")
            if prefetch and origins[i] == Origin.VICTIM:
                for p in self.prefetch_lines(line):
                    phit, pev = self.access_line(p, False)
                    if not phit:
                        req_t.append(t); req_pa.append(p << LINE_SHIFT); req_w.append(False); req_src.append(i)
                    if pev >= 0:
                        req_t.append(t); req_pa.append(pev << LINE_SHIFT); req_w.append(True); req_src.append(i)
        return CacheRun(np.asarray(req_t, np.int64), np.asarray(req_pa, np.int64),
                        np.asarray(req_w, bool), np.asarray(req_src, np.int64), hits)


@dataclass
class CacheRun:
    timestamp: np.ndarray
    address: np.ndarray
    is_write: np.ndarray
    source: np.ndarray      # index of the event that caused the request
    hits: np.ndarray

    def requests(self):
        return (self.timestamp, self.address, self.is_write)


class SwapResult(NamedTuple):
    events: EventStream
    requests: List[Tuple[int, bool]]   # (pa, is_write) DRAM traffic in issue order

    @property
    def fills(self) -> int:
        return sum(1 for _, w in self.requests if not w)


def simulate_epc_swap(cache: Cache, page_pa: int, direction: str, timestamp: int = 0) -> SwapResult:
    """Model the cache side effect of an EPC page copy (no encryption).

    ``in`` reads all 64 lines of the page; ``out`` reads then writes them.
    Either way the page ends up resident in the cache.
    """
    if page_pa % PAGE:
        raise ValueError(f"page address {page_pa:#x} is not 4 KB aligned")
    if direction not in ("in", "out"):
        raise ValueError("direction must be 'in' or 'out'")
    b = StreamBuilder()
    reqs = []
    base = page_pa >> LINE_SHIFT
    passes = (False,) if direction == "in" else (False, True)
    for is_write in passes:
        for k in range(LINES_PER_PAGE):
            line = base + k
            hit, ev = cache.access_line(line, is_write)
            b.add(timestamp, pa=line << LINE_SHIFT, is_write=is_write, origin=Origin.PAGER)
            if not hit:
                reqs.append((line << LINE_SHIFT, False))
            if ev >= 0:
                reqs.append((ev << LINE_SHIFT, True))
    return SwapResult(b.build(), reqs)
