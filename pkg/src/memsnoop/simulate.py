"""The machine: victim VA stream -> page table -> cache -> DRAM requests.

Every DRAM request gets its own issue slot on a global clock (three cycles,
enough for PRECHARGE + ACTIVATE + column command), so request order equals
bus order and paging decisions can be stamped with the same clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .cache import LINE_SHIFT, LINES_PER_PAGE, Cache, CacheConfig
from .events import EventStream, Origin
from .osmodel import PAGE_SHIFT, PageTable
from .priming import Primer, PrimerConfig

SLOT_CYCLES = 3


@dataclass
class MachineRun:
    """DRAM requests in bus order plus simulator-only ground truth."""
    timestamp: np.ndarray
    address: np.ndarray
    is_write: np.ndarray
    origin: np.ndarray        # Origin of the access that caused the request
    label: np.ndarray         # occurrence label of that access (-1 if none)
    truth_va: np.ndarray      # VA owning the line at request time (-1 if none)
    victim_events: int
    victim_misses: int
    critical_misses: int
    primer_events: int
    swaps: List[tuple]        # (cycle, kind, vpn, ppn)
    hits: np.ndarray          # per victim event
    extra: Dict[str, int] = field(default_factory=dict)

    def requests(self):
        return self.timestamp, self.address, self.is_write

    def __len__(self):
        return len(self.timestamp)


def simulate(events: EventStream, page_table: PageTable, cache: Cache,
             primer: Optional[PrimerConfig] = None) -> MachineRun:
    """Run a victim event stream (VA-addressed, time-sorted) through the machine."""
    cfg = cache.config
    prefetch = cfg.any_prefetch
    pt = page_table
    ptmap = pt.map
    rev: Dict[int, int] = {p: v for v, p in ptmap.items()}
    crit = pt.critical
    crit_iv = crit.intervals

    def is_crit(va):
        for lo, hi in crit_iv:
            if lo <= va < hi:
                return True
        return False

    R_t: List[int] = []
    R_pa: List[int] = []
    R_w: List[bool] = []
    R_o: List[int] = []
    R_l: List[int] = []
    R_va: List[int] = []
    clock = 0
    access = cache.access_line
    prim = Primer(primer, start=int(events.timestamp[0])) if (primer is not None and primer.enabled and len(events)) else None
    primer_events = 0
    swaps = []
    victim_misses = 0
    critical_misses = 0
    hits = np.zeros(len(events), dtype=bool)

    def owner(line):
        v = rev.get(line >> 6)
        return -1 if v is None else (v << PAGE_SHIFT) | ((line & 63) << LINE_SHIFT)

    ts_l = events.timestamp.tolist()
    va_l = events.va.tolist()
    w_l = events.is_write.tolist()
    lab_l = events.label.tolist()
    PRIMER = int(Origin.PRIMER)
    PAGER = int(Origin.PAGER)
    PREF = int(Origin.PREFETCH)
    VICTIM = int(Origin.VICTIM)

    for i in range(len(ts_l)):
        t = ts_l[i]
        if prim is not None:
            pts, ppas = prim.advance(t)
            primer_events += len(pts)
            for pt_t, pa in zip(pts, ppas):
                hit, ev = access(pa >> LINE_SHIFT, False)
                if not hit:
                    clock = max(clock, pt_t)
                    R_t.append(clock); R_pa.append(pa); R_w.append(False); R_o.append(PRIMER); R_l.append(-1); R_va.append(-1)
                    clock += SLOT_CYCLES
                if ev >= 0:
                    clock = max(clock, pt_t)
                    R_t.append(clock); R_pa.append(ev << LINE_SHIFT); R_w.append(True); R_o.append(PRIMER); R_l.append(-1); R_va.append(owner(ev))
                    clock += SLOT_CYCLES
        va = va_l[i]
        vpn = va >> PAGE_SHIFT
        ppn = ptmap.get(vpn)
        if ppn is None:
            clock = max(clock, t)
            for kind, avpn, appn in pt.page_fault(vpn, clock):
                swaps.append((clock, kind, avpn, appn))
                if kind == "alloc":
                    rev[appn] = avpn
                    continue
                if kind == "in":
                    rev[appn] = avpn
                base = appn << (PAGE_SHIFT - LINE_SHIFT)
                passes = (False,) if kind == "in" else (False, True)
                for wr in passes:
                    for k in range(LINES_PER_PAGE):
                        line = base + k
                        hit, ev = access(line, wr)
                        if not hit:
                            R_t.append(clock); R_pa.append(line << LINE_SHIFT); R_w.append(False); R_o.append(PAGER); R_l.append(-1); R_va.append((avpn << PAGE_SHIFT) | (k << LINE_SHIFT))
                            clock += SLOT_CYCLES
                        if ev >= 0:
                            R_t.append(clock); R_pa.append(ev << LINE_SHIFT); R_w.append(True); R_o.append(PAGER); R_l.append(-1); R_va.append(owner(ev))
                            clock += SLOT_CYCLES
                if kind == "out":
                    rev.pop(appn, None)
            ppn = ptmap[vpn]
        line = (ppn << (PAGE_SHIFT - LINE_SHIFT)) | ((va >> LINE_SHIFT) & 63)
        hit, ev = access(line, w_l[i])
        hits[i] = hit
        if not hit:
            victim_misses += 1
            c = is_crit(va)
            if c:
                critical_misses += 1
            clock = max(clock, t)
            R_t.append(clock); R_pa.append(line << LINE_SHIFT); R_w.append(False); R_o.append(VICTIM); R_l.append(lab_l[i]); R_va.append(va & ~63)
            clock += SLOT_CYCLES
        if ev >= 0:
            clock = max(clock, t)
            R_t.append(clock); R_pa.append(ev << LINE_SHIFT); R_w.append(True); R_o.append(VICTIM); R_l.append(-1); R_va.append(owner(ev))
            clock += SLOT_CYCLES
        if prefetch:
            for p in cache.prefetch_lines(line):
                phit, pev = access(p, False)
                if not phit:
                    clock = max(clock, t)
                    R_t.append(clock); R_pa.append(p << LINE_SHIFT); R_w.append(False); R_o.append(PREF); R_l.append(lab_l[i]); R_va.append(owner(p))
                    clock += SLOT_CYCLES
                if pev >= 0:
                    clock = max(clock, t)
                    R_t.append(clock); R_pa.append(pev << LINE_SHIFT); R_w.append(True); R_o.append(PREF); R_l.append(-1); R_va.append(owner(pev))
                    clock += SLOT_CYCLES

    return MachineRun(np.asarray(R_t, np.int64), np.asarray(R_pa, np.int64), np.asarray(R_w, bool),
                      np.asarray(R_o, np.int8), np.asarray(R_l, np.int64), np.asarray(R_va, np.int64),
                      victim_events=len(ts_l), victim_misses=victim_misses, critical_misses=critical_misses,
                      primer_events=primer_events, swaps=swaps, hits=hits)
