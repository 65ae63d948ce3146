"""PA -> VA translation of decoded bus records using the driver's mapping log.

Paging shows up on the bus as a run of reads covering most of one page.
Those bursts are used to pin down when a mapping really changed, which
matters when the log's timestamps are skewed against the bus clock.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..dram import BusTrace
from ..osmodel import PAGE_SHIFT, CriticalRange, MappingLog

LINE_MASK = ~63


@dataclass
class CriticalTrace:
    timestamp: np.ndarray
    va: np.ndarray              # line-aligned virtual address
    is_write: np.ndarray
    maybe_prefetch: np.ndarray  # adjacent to the previous record, a few cycles later
    source: np.ndarray          # index into the decoded bus trace
    stats: Dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.timestamp)

    def reads(self) -> "CriticalTrace":
        return self.select(~self.is_write)

    def select(self, mask) -> "CriticalTrace":
        return CriticalTrace(self.timestamp[mask], self.va[mask], self.is_write[mask],
                             self.maybe_prefetch[mask], self.source[mask], dict(self.stats))

    def after(self, index: int) -> "CriticalTrace":
        return self.select(np.arange(len(self)) >= index)

    @classmethod
    def from_arrays(cls, timestamp, va, is_write=None) -> "CriticalTrace":
        t = np.asarray(timestamp, np.int64)
        n = len(t)
        w = np.zeros(n, bool) if is_write is None else np.asarray(is_write, bool)
        return cls(t, np.asarray(va, np.int64) & LINE_MASK, w, np.zeros(n, bool), np.arange(n))

    @classmethod
    def lossless(cls, events, critical: CriticalRange) -> "CriticalTrace":
        """What the bus shows behind a 1-way, 1-set cache: every access
        misses except a repeat of the line touched just before."""
        line = np.asarray(events.va, np.int64) & LINE_MASK
        fresh = np.ones(len(line), bool)
        fresh[1:] = line[1:] != line[:-1]
        keep = np.flatnonzero(fresh & critical.mask(line))
        tr = cls.from_arrays(events.timestamp[keep], line[keep], events.is_write[keep])
        tr.source = keep
        return tr


@dataclass
class Burst:
    ppn: int
    first: int      # index of the first record of the run
    last: int       # index of the last record
    start: int      # timestamps
    end: int


def find_bursts(trace: BusTrace, min_lines: int = 16, max_gap: int = 32) -> List[Burst]:
    """Runs of consecutive reads inside one physical page, each within
    ``max_gap`` cycles of the previous one, touching at least ``min_lines``
    distinct lines.  Interleaved writes are ignored."""
    reads = np.flatnonzero(~trace.is_write)
    if len(reads) == 0:
        return []
    ppn = (trace.address[reads] >> PAGE_SHIFT).tolist()
    lines = ((trace.address[reads] >> 6) & 63).tolist()
    ts = trace.timestamp[reads].tolist()
    out = []
    i = 0
    n = len(reads)
    while i < n:
        j = i
        seen = {lines[i]}
        while j + 1 < n and ppn[j + 1] == ppn[i] and ts[j + 1] - ts[j] <= max_gap:
            j += 1
            seen.add(lines[j])
        if len(seen) >= min_lines:
            out.append(Burst(ppn[i], int(reads[i]), int(reads[j]), ts[i], ts[j]))
        i = j + 1
    return out


class _Owners:
    """Per physical page: sorted change times and the VA page owning it from then on."""

    def __init__(self, log: MappingLog):
        self.times: Dict[int, List[int]] = {}
        self.owner: Dict[int, List[Optional[int]]] = {}
        for ppn, changes in log.ppn_timeline().items():
            self.times[ppn] = [c for c, _ in changes]
            self.owner[ppn] = [v for _, v in changes]

    def align(self, bursts: List[Burst], window: int):
        """Move each change to the burst of the same page nearest to it."""
        by_page: Dict[int, List[Burst]] = {}
        for b in bursts:
            by_page.setdefault(b.ppn, []).append(b)
        for ppn, bl in by_page.items():
            times = self.times.get(ppn)
            if not times:
                continue
            starts = [b.start for b in bl]
            for k, c in enumerate(times):
                i = bisect.bisect_left(starts, c - window)
                best = None
                while i < len(bl) and bl[i].start <= c + window:
                    if best is None or abs(bl[i].start - c) < abs(best.start - c):
                        best = bl[i]
                    i += 1
                if best is None:
                    continue
                # burst records are dropped, so only the boundary position matters;
                # an eviction and the reuse of the same frame share one burst and
                # the stable sort keeps them in log order
                times[k] = best.start
            order = sorted(range(len(times)), key=lambda k: times[k])
            self.times[ppn] = [times[k] for k in order]
            self.owner[ppn] = [self.owner[ppn][k] for k in order]

    def lookup(self, ppn: int, t: int, window: int) -> Optional[int]:
        times = self.times.get(ppn)
        if not times:
            return None
        k = bisect.bisect_right(times, t) - 1
        if k >= 0 and self.owner[ppn][k] is not None:
            return self.owner[ppn][k]
        # unowned at t: a mapping logged slightly late still claims the record
        if k + 1 < len(times) and times[k + 1] - t <= window:
            return self.owner[ppn][k + 1]
        return None


def translate_trace(records: BusTrace, mapping_log: MappingLog, critical: Optional[CriticalRange] = None,
                    align: bool = True, window: int = 5000, min_burst: int = 16,
                    prefetch_gap: int = 12) -> CriticalTrace:
    """Translate decoded records to VAs, keeping those inside ``critical``.

    Records in paging bursts, in pages the log never mapped (other enclaves,
    the primer, untrusted memory) or outside the critical range are dropped;
    each drop reason is counted in ``stats``.
    """
    bursts = find_bursts(records, min_burst)
    owners = _Owners(mapping_log)
    if align:
        owners.align(bursts, window)
    in_burst = np.zeros(len(records), bool)
    for b in bursts:
        in_burst[b.first:b.last + 1] = True
    pa = records.address
    ts = records.timestamp.tolist()
    pal = pa.tolist()
    keep_t, keep_va, keep_w, keep_src = [], [], [], []
    stats = {"records": len(records), "burst": 0, "untranslatable": 0, "non_critical": 0}
    lookup = owners.lookup
    writes = records.is_write.tolist()
    for i in range(len(records)):
        if in_burst[i] and not writes[i]:
            stats["burst"] += 1
            continue
        ppn = pal[i] >> PAGE_SHIFT
        vpn = lookup(ppn, ts[i], window)
        if vpn is None:
            stats["untranslatable"] += 1
            continue
        va = (vpn << PAGE_SHIFT) | (pal[i] & 0xFC0)
        if critical is not None and not critical.contains(va):
            stats["non_critical"] += 1
            continue
        keep_t.append(ts[i]); keep_va.append(va); keep_w.append(writes[i]); keep_src.append(i)
    t = np.asarray(keep_t, np.int64)
    va = np.asarray(keep_va, np.int64)
    w = np.asarray(keep_w, bool)
    pf = np.zeros(len(t), bool)
    if len(t) > 1:
        d = np.abs(np.diff(va))
        pf[1:] = (d == 64) & (np.diff(t) <= prefetch_gap)
    stats["kept"] = len(t)
    return CriticalTrace(t, va, w, pf, np.asarray(keep_src, np.int64), stats)
