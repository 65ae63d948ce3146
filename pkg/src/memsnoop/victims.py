"""Deterministic models of the two attacked applications.

``HashDictVictim`` follows a spell checker's hash dictionary: a bucket array
of chain heads and nodes bump-allocated in load order; words are appended to
chain tails, and a lookup walks bucket then chain until it meets the word.

``KvVictim`` follows a key-value cache: a flat table of 8-byte chain heads
indexed by a Murmur3 hash of the key, with items stored elsewhere.

Both emit VA-level access events labelled with the document position that
caused them.  Background activity (runtime, I/O buffers, heap churn) comes
from ``Noise`` and carries no label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import mmh3
import numpy as np

from .events import LINE, PAGE, EventStream, Origin, StreamBuilder
from .osmodel import CriticalRange

HEAP_BASE = 0x5555_0000_0000
RUNTIME_BASE = 0x7000_0000_0000
SLAB_BASE = 0x6000_0000_0000
STARTUP_BASE = RUNTIME_BASE + 0x4000_0000
NODE_HEADER = 16
SLOT = 8
MISSPELT = "<misspelt>"


def fnv1a_32(word: str) -> int:
    h = 0x811C9DC5
    for b in word.encode():
        h = ((h ^ b) * 0x01000193) & 0xFFFFFFFF
    return h


def murmur3_32(word: str, seed: int = 0) -> int:
    return mmh3.hash(word, seed, signed=False)


def node_size(word: str) -> int:
    n = NODE_HEADER + len(word.encode()) + 1
    return (n + 7) & ~7


@dataclass
class Noise:
    """Per-operation background traffic.

    ``hot``: reads from a small runtime working set (usually cache hits).
    ``stream``: lines of a large ring buffer, one new page every
    ``lines_per_page`` lines (I/O, message buffers).
    ``heap``: random lines of the victim's non-dictionary heap, which lies
    inside the critical range.
    """
    hot: int = 0
    hot_lines: int = 256
    stream: int = 0
    stream_pages: int = 4096
    lines_per_page: int = 64
    heap: int = 0
    writes: float = 0.25
    hot_pages: int = 0


class NoiseSource:
    def __init__(self, noise: Noise, heap: Tuple[int, int], seed: int):
        self.n = noise
        self.rng = np.random.default_rng(seed)
        self.heap_lo, self.heap_hi = heap
        self.stream_pos = 0
        hot_pages = noise.hot_pages or max(1, -(-noise.hot_lines // (PAGE // LINE)))
        # hot lines spread over hot_pages pages of the runtime region
        idx = np.arange(noise.hot_lines)
        self.hot_va = RUNTIME_BASE + (idx % hot_pages) * PAGE + (idx // hot_pages) % (PAGE // LINE) * LINE
        self.stream_base = RUNTIME_BASE + 0x1000_0000

    def emit(self, b: StreamBuilder, t: int, step: int = 2) -> int:
        n = self.n
        if n.hot:
            for va in self.rng.choice(self.hot_va, size=n.hot).tolist():
                b.add(t, va=va); t += step
        if n.stream:
            lpp = n.lines_per_page
            for _ in range(n.stream):
                page, k = divmod(self.stream_pos, lpp)
                va = self.stream_base + (page % n.stream_pages) * PAGE + k * LINE
                b.add(t, va=va, is_write=bool(self.rng.random() < n.writes)); t += step
                self.stream_pos += 1
        if n.heap and self.heap_hi > self.heap_lo:
            lines = (self.heap_hi - self.heap_lo) // LINE
            for k in self.rng.integers(0, lines, size=n.heap).tolist():
                b.add(t, va=self.heap_lo + k * LINE, is_write=bool(self.rng.random() < n.writes)); t += step
        return t


@dataclass
class SecretDocument:
    words: List[str]

    @property
    def word_count(self) -> int:
        return len(self.words)

    def repetition(self) -> Dict[str, float]:
        from .corpus import repetition_stats
        return repetition_stats(self.words)


@dataclass
class VictimRun:
    events: EventStream
    words: List[str]            # the secret sequence, one per occurrence label
    misspelt: np.ndarray        # bool per occurrence
    start: np.ndarray           # timestamp of each occurrence's first event
    phase_start: int            # first timestamp of the secret-processing phase
    critical: CriticalRange
    # ground truth for anchor checks: index of the first lookup event
    first_lookup_event: int = 0


class HashDictVictim:
    def __init__(self, dictionary: Sequence[str], buckets: Optional[int] = None, heap_bytes: int = 5604 * 1024,
                 base: int = HEAP_BASE, word_gap: int = 2000, load_gap: int = 200,
                 noise: Noise = Noise(), load_noise: Noise = Noise(), startup: int = 0, seed: int = 0):
        self.dictionary = list(dictionary)
        if buckets is None:
            # sized like the real checker: word count plus slack, forced odd
            buckets = len(set(self.dictionary)) + 5
            buckets |= 1
        self.buckets = buckets
        self.base = base
        self.word_gap = word_gap
        self.load_gap = load_gap
        self.noise = noise
        self.load_noise = load_noise
        self.startup = startup      # bytes of input/runtime buffers read once before checking
        self.seed = seed
        self.arena = base + buckets * SLOT
        self.node_va: Dict[str, int] = {}
        self.chain: List[List[str]] = [[] for _ in range(buckets)]
        addr = self.arena
        for w in self.dictionary:
            if w in self.node_va:
                continue
            self.node_va[w] = addr
            addr += node_size(w)
            self.chain[self.bucket(w)].append(w)
        self.arena_end = addr
        self.heap_end = base + heap_bytes
        if self.arena_end > self.heap_end:
            raise ValueError(f"dictionary needs {self.arena_end - base} bytes, heap is {heap_bytes}")
        self.phase = "load"

    def bucket(self, word: str) -> int:
        return fnv1a_32(word) % self.buckets

    def bucket_va(self, word: str) -> int:
        return self.base + self.bucket(word) * SLOT

    @property
    def critical(self) -> CriticalRange:
        return CriticalRange([(self.base, self.heap_end)])

    def node_lines(self, word: str) -> List[int]:
        """Line addresses read when comparing against ``word``'s node."""
        a = self.node_va[word]
        first = a & ~(LINE - 1)
        last = (a + NODE_HEADER + len(word.encode())) & ~(LINE - 1)
        return [first] if last == first else [first, last]

    def lookup_path(self, word: str) -> List[int]:
        """VAs touched by a lookup, in order: bucket slot, then nodes to the match."""
        out = [self.bucket_va(word)]
        chain = self.chain[self.bucket(word)]
        for w in chain:
            out.extend(self.node_lines(w))
            if w == word:
                break
        return out

    def lookup_nodes(self, word: str) -> List[str]:
        chain = self.chain[self.bucket(word)]
        if word in self.node_va:
            return chain[:chain.index(word) + 1]
        return list(chain)


class KvVictim:
    """Key-value cache: ``2**hashpower`` chain heads of 8 bytes, items in a slab."""

    def __init__(self, hashpower: int = 18, base: int = HEAP_BASE, request_gap: int = 5_000_000,
                 noise: Noise = Noise(), item_size: int = 128, seed: int = 0):
        self.hashpower = hashpower
        self.slots = 1 << hashpower
        self.base = base
        self.request_gap = request_gap
        self.noise = noise
        self.item_size = item_size
        self.seed = seed
        self.table: Dict[int, List[str]] = {}
        self.item_va: Dict[str, int] = {}
        self.trained: List[str] = []

    def slot(self, word: str) -> int:
        return murmur3_32(word) & (self.slots - 1)

    def slot_va(self, word: str) -> int:
        return self.base + self.slot(word) * SLOT

    @property
    def table_end(self) -> int:
        return self.base + self.slots * SLOT

    @property
    def critical(self) -> CriticalRange:
        return CriticalRange([(self.base, self.table_end)])


def train_kv(victim: KvVictim, corpus: Sequence[str]) -> Dict[str, int]:
    """Insert every corpus word; returns the attacker-computable word -> slot VA map."""
    victim.table.clear()
    victim.item_va.clear()
    victim.trained = []
    for w in dict.fromkeys(corpus):
        victim.table.setdefault(victim.slot(w), []).append(w)
        victim.item_va[w] = SLAB_BASE + len(victim.trained) * victim.item_size
        victim.trained.append(w)
    return {w: victim.slot_va(w) for w in victim.trained}


def _emit_node(b: StreamBuilder, t: int, lines: List[int], label: int, write: bool = False) -> int:
    for va in lines:
        b.add(t, va=va, is_write=write, label=label)
        t += 2
    return t


def run_victim(victim, document, seed: Optional[int] = None) -> VictimRun:
    """Generate the labelled access stream for ``document``.

    The hash dictionary emits its whole load phase first (the anchor the
    attacker searches for), then one lookup per document word.  The key-value
    store emits training inserts, then one request per query word.
    """
    words = list(document.words if isinstance(document, SecretDocument) else document)
    seed = victim.seed if seed is None else seed
    if isinstance(victim, HashDictVictim):
        return _run_hashdict(victim, words, seed)
    if isinstance(victim, KvVictim):
        return _run_kv(victim, words, seed)
    raise TypeError(f"unknown victim {type(victim).__name__}")


def _run_hashdict(v: HashDictVictim, words: List[str], seed: int) -> VictimRun:
    b = StreamBuilder()
    noise = NoiseSource(v.noise, (v.arena_end, v.heap_end), seed)
    load_noise = NoiseSource(v.load_noise, (v.arena_end, v.heap_end), seed + 1)
    t = 0
    tail: Dict[int, str] = {}
    seen = set()
    for w in v.dictionary:
        if w in seen:
            continue
        seen.add(w)
        h = v.bucket(w)
        slot = v.base + h * SLOT
        b.add(t, va=slot); t += 2
        t = _emit_node(b, t, v.node_lines(w), -1, write=True)
        if h not in tail:
            b.add(t, va=slot, is_write=True); t += 2
        else:
            for other in v.chain[h]:
                if other == w:
                    break
                b.add(t, va=v.node_va[other] & ~(LINE - 1)); t += 2
            b.add(t, va=v.node_va[tail[h]] & ~(LINE - 1), is_write=True); t += 2
        tail[h] = w
        t = load_noise.emit(b, t)
        t += v.load_gap
    for k in range(v.startup // LINE):
        b.add(t, va=STARTUP_BASE + k * LINE); t += 4
    # the checker's runtime working set is initialised before the first word
    if v.noise.hot:
        for va in noise.hot_va.tolist():
            b.add(t, va=va); t += 4
    v.phase = "check"
    phase_start = t
    first_lookup = len(b)
    misspelt = np.zeros(len(words), dtype=bool)
    start = np.zeros(len(words), dtype=np.int64)
    for i, w in enumerate(words):
        t0 = phase_start + i * v.word_gap
        start[i] = t0
        t = t0
        h = v.bucket(w)
        b.add(t, va=v.base + h * SLOT, label=i); t += 2
        if w not in v.node_va:
            misspelt[i] = True
        for other in v.lookup_nodes(w):
            t = _emit_node(b, t, v.node_lines(other), i)
        noise.emit(b, t)
    return VictimRun(b.build(), words, misspelt, start, phase_start, v.critical, first_lookup)


def _run_kv(v: KvVictim, words: List[str], seed: int) -> VictimRun:
    b = StreamBuilder()
    noise = NoiseSource(v.noise, (0, 0), seed)
    t = 0
    for w in v.trained:
        b.add(t, va=v.slot_va(w)); t += 2
        b.add(t, va=v.item_va[w], is_write=True); t += 2
        b.add(t, va=v.slot_va(w), is_write=True); t += 2
        t += 50
    if v.noise.hot:
        for va in noise.hot_va.tolist():
            b.add(t, va=va); t += 4
    phase_start = t + v.request_gap
    first_lookup = len(b)
    misspelt = np.zeros(len(words), dtype=bool)
    start = np.zeros(len(words), dtype=np.int64)
    for i, w in enumerate(words):
        t = phase_start + i * v.request_gap
        start[i] = t
        t = noise.emit(b, t)
        b.add(t, va=v.slot_va(w), label=i); t += 2
        chain = v.table.get(v.slot(w), [])
        if w not in chain:
            misspelt[i] = True
        for other in chain:
            b.add(t, va=v.item_va[other]); t += 2
            if other == w:
                break
    return VictimRun(b.build(), words, misspelt, start, phase_start, v.critical, first_lookup)
