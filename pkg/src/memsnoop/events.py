"""Memory access events, stored column-wise."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator, List, NamedTuple, Sequence

import numpy as np

LINE = 64
PAGE = 4096


class Origin(enum.IntEnum):
    VICTIM = 0
    PRIMER = 1
    PAGER = 2
    PREFETCH = 3


class AccessEvent(NamedTuple):
    timestamp: int
    pa: int          # -1 until the OS model has translated ``va``
    va: int          # -1 for traffic with no victim virtual address
    is_write: bool
    origin: Origin
    label: int = -1  # ground-truth secret occurrence, -1 if none


@dataclass
class EventStream:
    timestamp: np.ndarray
    pa: np.ndarray
    va: np.ndarray
    is_write: np.ndarray
    origin: np.ndarray
    label: np.ndarray

    def __len__(self):
        return len(self.timestamp)

    def __iter__(self) -> Iterator[AccessEvent]:
        cols = (self.timestamp.tolist(), self.pa.tolist(), self.va.tolist(), self.is_write.tolist(),
                self.origin.tolist(), self.label.tolist())
        for t, pa, va, w, o, lab in zip(*cols):
            yield AccessEvent(t, pa, va, w, Origin(o), lab)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return AccessEvent(int(self.timestamp[idx]), int(self.pa[idx]), int(self.va[idx]),
                               bool(self.is_write[idx]), Origin(int(self.origin[idx])), int(self.label[idx]))
        return EventStream(self.timestamp[idx], self.pa[idx], self.va[idx], self.is_write[idx],
                           self.origin[idx], self.label[idx])

    @classmethod
    def empty(cls) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), np.zeros(0, bool), np.zeros(0, np.int8), z.copy())

    @classmethod
    def from_events(cls, events: Iterable[AccessEvent]) -> "EventStream":
        rows = list(events)
        if not rows:
            return cls.empty()
        t, pa, va, w, o, lab = zip(*rows)
        return cls(np.asarray(t, np.int64), np.asarray(pa, np.int64), np.asarray(va, np.int64),
                   np.asarray(w, bool), np.asarray([int(x) for x in o], np.int8), np.asarray(lab, np.int64))

    def equals(self, other: "EventStream") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("timestamp", "pa", "va", "is_write", "origin", "label"))


class StreamBuilder:
    """Append-only builder; victims emit millions of events."""

    def __init__(self):
        self.t: List[int] = []
        self.pa: List[int] = []
        self.va: List[int] = []
        self.w: List[bool] = []
        self.o: List[int] = []
        self.lab: List[int] = []

    def add(self, t, va=-1, is_write=False, origin=Origin.VICTIM, label=-1, pa=-1):
        self.t.append(t)
        self.pa.append(pa)
        self.va.append(va)
        self.w.append(is_write)
        self.o.append(int(origin))
        self.lab.append(label)

    def __len__(self):
        return len(self.t)

    def build(self) -> EventStream:
        return EventStream(np.asarray(self.t, np.int64), np.asarray(self.pa, np.int64),
                           np.asarray(self.va, np.int64), np.asarray(self.w, bool),
                           np.asarray(self.o, np.int8), np.asarray(self.lab, np.int64))


def merge(streams: Sequence[EventStream]) -> EventStream:
    """Stable merge by timestamp; ties keep the order of ``streams``."""
    streams = [s for s in streams if len(s)]
    if not streams:
        return EventStream.empty()
    cat = {f: np.concatenate([getattr(s, f) for s in streams])
           for f in ("timestamp", "pa", "va", "is_write", "origin", "label")}
    order = np.argsort(cat["timestamp"], kind="stable")
    return EventStream(**{f: v[order] for f, v in cat.items()})
