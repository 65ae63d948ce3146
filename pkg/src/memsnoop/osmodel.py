"""EPC page allocation and paging as a modified SGX driver would do it.

Three policies:

``baseline``
    stock driver: pages from one free pool, FIFO eviction when it runs dry.
``pin``
    critical pages are whitelisted and never evicted.
``squeeze``
    pinning plus cache squeezing: critical (and filler) pages are served only
    from a reserved ``conflict_list`` of pages whose cache-set index bits
    coincide, so they all compete for the same 64 sets per group.

Page numbers (``vpn``/``ppn``) are addresses shifted right by 12.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
EPC_BYTES = int(93.5 * 2 ** 20)
EPC_BASE = 0x8000_0000          # start of processor-reserved memory
POLICIES = ("baseline", "pin", "squeeze")


class AllocationError(RuntimeError):
    def __init__(self, groups):
        self.groups = list(groups)
        super().__init__(f"conflict group(s) {self.groups} exhausted; widen the group selection")


class LivelockError(RuntimeError):
    """EPC is full and every resident page is pinned."""


def groups_total(sets: int = 2048) -> int:
    """Number of conflict groups: the OS controls set-index bits [12, 6+s)."""
    return max(1, sets // 64)


def group_of(ppn: int, sets: int = 2048) -> int:
    return ppn % groups_total(sets)


def conflict_group_capacity(epc_bytes: int = EPC_BYTES, sets: int = 2048) -> int:
    """EPC pages that fall into one conflict group."""
    return epc_bytes // PAGE_SIZE // groups_total(sets)


def groups_required(critical_bytes: int, epc_bytes: int = EPC_BYTES, sets: int = 2048) -> int:
    pages = math.ceil(critical_bytes / PAGE_SIZE)
    return math.ceil(pages / conflict_group_capacity(epc_bytes, sets))


@dataclass
class ConflictGroup:
    id: int
    pages: List[int]
    capacity: int

    def check(self, sets: int = 2048) -> bool:
        return all(group_of(p, sets) == self.id for p in self.pages) and len(self.pages) <= self.capacity


@dataclass
class CriticalRange:
    """Secret-bearing VA intervals ``[start, end)`` plus optional filler pages."""
    intervals: List[Tuple[int, int]] = field(default_factory=list)
    filler_pages: List[int] = field(default_factory=list)

    def __post_init__(self):
        ivs = sorted((s & ~(PAGE_SIZE - 1), -(-e // PAGE_SIZE) * PAGE_SIZE) for s, e in self.intervals if e > s)
        for (s0, e0), (s1, e1) in zip(ivs, ivs[1:]):
            if s1 < e0:
                raise ValueError(f"critical intervals overlap: [{s0:#x},{e0:#x}) and [{s1:#x},{e1:#x})")
        self.intervals = ivs
        self._starts = [s for s, _ in ivs]
        self.filler_pages = list(dict.fromkeys(self.filler_pages))
        self._fillers = set(self.filler_pages)

    def contains(self, va: int) -> bool:
        i = bisect.bisect_right(self._starts, va) - 1
        return i >= 0 and va < self.intervals[i][1]

    def contains_page(self, vpn: int) -> bool:
        return self.contains(vpn << PAGE_SHIFT)

    def is_squeezed(self, vpn: int) -> bool:
        return vpn in self._fillers or self.contains_page(vpn)

    def pages(self) -> List[int]:
        out = []
        for s, e in self.intervals:
            out.extend(range(s >> PAGE_SHIFT, e >> PAGE_SHIFT))
        return out

    @property
    def nbytes(self) -> int:
        return sum(e - s for s, e in self.intervals)

    def mask(self, vas: np.ndarray) -> np.ndarray:
        vas = np.asarray(vas)
        m = np.zeros(vas.shape, dtype=bool)
        for s, e in self.intervals:
            m |= (vas >= s) & (vas < e)
        return m

    def with_fillers(self, pages: Sequence[int]) -> "CriticalRange":
        return CriticalRange(list(self.intervals), list(pages))


def select_fillers(vas: np.ndarray, critical: CriticalRange, n: int) -> List[int]:
    """The ``n`` most accessed non-critical VA pages of a profiling trace."""
    vas = np.asarray(vas)
    pages = vas[~critical.mask(vas)] >> PAGE_SHIFT
    vpn, count = np.unique(pages, return_counts=True)
    order = np.lexsort((vpn, -count))[:n]
    return [int(v) for v in vpn[order]]


def filler_budget(critical: CriticalRange, epc_bytes: int = EPC_BYTES, sets: int = 2048) -> int:
    """Pages left in the critical range's conflict groups once it is placed."""
    cap = conflict_group_capacity(epc_bytes, sets)
    need = len(critical.pages())
    return groups_required(critical.nbytes, epc_bytes, sets) * cap - need


class PagingAction(NamedTuple):
    kind: str        # "alloc" | "in" | "out"
    vpn: int
    ppn: int


class MappingEntry(NamedTuple):
    cycle: int
    vpn: int
    ppn: Optional[int]   # None: page left the EPC
    pinned: bool


class PageTable:
    def __init__(self, critical: Optional[CriticalRange] = None, policy: str = "baseline",
                 sets: int = 2048, epc_bytes: int = EPC_BYTES, epc_base: int = EPC_BASE,
                 reserved_pages: int = 0, groups: Optional[Sequence[int]] = None,
                 rng: Optional[np.random.Generator] = None):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.critical = critical or CriticalRange()
        self.policy = policy
        self.sets = sets
        self.epc_pages = epc_bytes // PAGE_SIZE
        self.capacity_per_group = conflict_group_capacity(epc_bytes, sets)
        base = epc_base >> PAGE_SHIFT
        all_pages = np.arange(base, base + self.epc_pages, dtype=np.int64)
        rng = rng or np.random.default_rng(0)

        self.conflict_lists: Dict[int, List[int]] = {}
        if policy == "squeeze":
            squeezed = len(self.critical.pages()) + len(self.critical.filler_pages)
            if groups is None:
                n = math.ceil(squeezed / self.capacity_per_group)
                groups = list(range(n))
            gsel = np.isin(all_pages % groups_total(sets), list(groups))
            for g in groups:
                self.conflict_lists[g] = [int(p) for p in all_pages[all_pages % groups_total(sets) == g]]
            general = all_pages[~gsel]
        else:
            general = all_pages
        general = rng.permutation(general)
        if reserved_pages:
            if reserved_pages >= len(general):
                raise ValueError("reservation leaves no EPC pages for the victim")
            general = general[reserved_pages:]
        self._conflict_set = {p for lst in self.conflict_lists.values() for p in lst}
        # pop() from the end: reverse so the permutation order is used front to back
        self.free: List[int] = [int(p) for p in general[::-1]]

        self.map: Dict[int, int] = {}
        self.pinned: set = set()
        self.swapped: set = set()
        self.fifo: deque = deque()
        self.log: List[MappingEntry] = []
        self.paging_events: List[Tuple[int, int, str]] = []

    # -- policy helpers
    def _squeezes(self, vpn: int) -> bool:
        return self.policy == "squeeze" and self.critical.is_squeezed(vpn)

    def _pins(self, vpn: int) -> bool:
        return self.policy in ("pin", "squeeze") and self.critical.is_squeezed(vpn)

    @property
    def groups(self) -> List[ConflictGroup]:
        out = []
        for g in self.conflict_lists:
            members = [p for v, p in self.map.items() if p in self._conflict_set and group_of(p, self.sets) == g]
            out.append(ConflictGroup(g, sorted(members), self.capacity_per_group))
        return out

    @property
    def resident(self) -> int:
        return len(self.map)

    def translate(self, va: int) -> Optional[int]:
        ppn = self.map.get(va >> PAGE_SHIFT)
        return None if ppn is None else (ppn << PAGE_SHIFT) | (va & (PAGE_SIZE - 1))

    # -- operations
    def _take(self, vpn: int, clock: int, actions: List[PagingAction]) -> int:
        if self._squeezes(vpn):
            for g, lst in self.conflict_lists.items():
                if lst:
                    return lst.pop(0)
            raise AllocationError(list(self.conflict_lists))
        while not self.free:
            self._evict(clock, actions)
        return self.free.pop()

    def _evict(self, clock: int, actions: List[PagingAction]):
        if not self.fifo:
            raise LivelockError("EPC full and all resident pages are pinned")
        vpn = self.fifo.popleft()
        ppn = self.map.pop(vpn)
        self.swapped.add(vpn)
        actions.append(PagingAction("out", vpn, ppn))
        self.log.append(MappingEntry(clock, vpn, None, False))
        self.paging_events.append((clock, vpn, "out"))
        if ppn in self._conflict_set:
            self.conflict_lists[group_of(ppn, self.sets)].append(ppn)
        else:
            self.free.append(ppn)

    def allocate(self, vpn: int, clock: int = 0) -> int:
        """Map a fresh VA page; returns its physical page number."""
        ppn, _ = self._load(vpn, clock)
        return ppn

    def page_fault(self, vpn: int, clock: int = 0) -> List[PagingAction]:
        """Bring ``vpn`` in, evicting FIFO-oldest unpinned pages as needed."""
        if vpn in self.map:
            return []
        _, actions = self._load(vpn, clock)
        return actions

    def _load(self, vpn: int, clock: int) -> Tuple[int, List[PagingAction]]:
        if vpn in self.map:
            return self.map[vpn], []
        actions: List[PagingAction] = []
        ppn = self._take(vpn, clock, actions)
        self.map[vpn] = ppn
        pinned = self._pins(vpn)
        if pinned:
            self.pinned.add(vpn)
        else:
            self.fifo.append(vpn)
        if vpn in self.swapped:
            self.swapped.discard(vpn)
            actions.append(PagingAction("in", vpn, ppn))
            self.paging_events.append((clock, vpn, "in"))
        else:
            actions.append(PagingAction("alloc", vpn, ppn))
        self.log.append(MappingEntry(clock, vpn, ppn, pinned))
        return ppn, actions

    def evicted_pages(self) -> List[int]:
        return [vpn for _, vpn, kind in self.paging_events if kind == "out"]


def export_mapping_log(pt: PageTable) -> "MappingLog":
    return MappingLog(list(pt.log))


class MappingLog:
    """What the modified driver prints: mapping changes with their cycle.

    Text form, one change per line: ``epoch_start_cycle,va_page,pa_page,pinned``
    with page numbers in hex and ``-`` as ``pa_page`` when a page is evicted.
    """

    def __init__(self, entries: Sequence[MappingEntry]):
        self.entries = sorted(entries, key=lambda e: e.cycle)

    def __len__(self):
        return len(self.entries)

    def to_text(self) -> str:
        lines = []
        for e in self.entries:
            pa = "-" if e.ppn is None else f"{e.ppn:#x}"
            lines.append(f"{e.cycle},{e.vpn:#x},{pa},{int(e.pinned)}\n")
        return "".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "MappingLog":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                c, v, p, pin = line.split(",")
                entries.append(MappingEntry(int(c), int(v, 16), None if p == "-" else int(p, 16), pin == "1"))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: malformed mapping entry {line!r}") from exc
        return cls(entries)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "MappingLog":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def snapshots(self) -> List[Tuple[int, Dict[int, int]]]:
        """Mapping epochs: a new epoch starts whenever paging changes a mapping.

        Fresh allocations extend the current epoch instead of starting one.
        """
        epochs: List[Tuple[int, Dict[int, int]]] = []
        cur: Dict[int, int] = {}
        seen = set()
        start = 0
        for e in self.entries:
            if (e.ppn is None or e.vpn in seen) and e.cycle != start:
                epochs.append((start, dict(cur)))
                start = e.cycle
            seen.add(e.vpn)
            if e.ppn is None:
                cur.pop(e.vpn, None)
            else:
                cur[e.vpn] = e.ppn
        epochs.append((start, cur))
        return epochs

    def ppn_timeline(self) -> Dict[int, List[Tuple[int, Optional[int]]]]:
        """Per physical page: [(cycle, vpn or None)] in log order."""
        owner: Dict[int, int] = {}
        out: Dict[int, List[Tuple[int, Optional[int]]]] = {}
        for e in self.entries:
            if e.ppn is None:
                ppn = owner.pop(e.vpn, None)
                if ppn is not None:
                    out.setdefault(ppn, []).append((e.cycle, None))
            else:
                owner[e.vpn] = e.ppn
                out.setdefault(e.ppn, []).append((e.cycle, e.vpn))
        return out
