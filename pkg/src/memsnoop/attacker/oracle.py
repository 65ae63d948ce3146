"""Offline oracle: the cache-line pattern each secret produces.

Built by running the victim model on every candidate secret with nothing
cached away, so patterns are exactly what a lossless bus would show.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..victims import HashDictVictim, KvVictim, Noise, run_victim


class Pattern(NamedTuple):
    word: str
    lines: Tuple[int, ...]      # line-aligned VAs in access order, no immediate repeats
    weights: Tuple[float, ...]

    @property
    def total(self) -> float:
        return float(sum(self.weights))


@dataclass
class Oracle:
    kind: str
    patterns: Dict[str, Pattern]
    freq: Dict[str, int] = field(default_factory=dict)
    base: int = 0                            # offset already applied to every line
    arena: Tuple[int, int] = (0, 0)          # allocation range searched for the load anchor
    load_lines: Tuple[int, ...] = ()         # lines the load phase touches, no immediate repeats
    index: Dict[int, List[Tuple[str, int]]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.index:
            self._reindex()

    def _reindex(self):
        self.index = {}
        for w, p in self.patterns.items():
            for pos, line in enumerate(p.lines):
                self.index.setdefault(line, []).append((w, pos))

    def __len__(self):
        return len(self.patterns)

    def __contains__(self, word):
        return word in self.patterns

    def candidates(self, line: int) -> List[Tuple[str, int]]:
        return self.index.get(line, [])

    def shifted(self, offset: int) -> "Oracle":
        """Same oracle for a victim loaded ``offset`` bytes higher (ASLR)."""
        pats = {w: Pattern(w, tuple(l + offset for l in p.lines), p.weights) for w, p in self.patterns.items()}
        lo, hi = self.arena
        load = tuple(l + offset for l in self.load_lines)
        return Oracle(self.kind, pats, dict(self.freq), self.base + offset, (lo + offset, hi + offset), load)

    def to_text(self) -> str:
        out = [f"# kind\t{self.kind}\n", f"# base\t{self.base:#x}\n",
               f"# arena\t{self.arena[0]:#x}\t{self.arena[1]:#x}\n"]
        if self.load_lines:
            out.append("# load\t" + ",".join(f"{l:#x}" for l in self.load_lines) + "\n")
        for w in sorted(self.patterns):
            p = self.patterns[w]
            body = ",".join(f"{l:#x}:{wt:g}" for l, wt in zip(p.lines, p.weights))
            out.append(f"{w}\t{self.freq.get(w, 0)}\t{body}\n")
        return "".join(out)

    @classmethod
    def from_text(cls, text: str) -> "Oracle":
        kind, base, arena, load = "hashdict", 0, (0, 0), ()
        pats: Dict[str, Pattern] = {}
        freq: Dict[str, int] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if line.startswith("# "):
                key = parts[0][2:]
                if key == "kind":
                    kind = parts[1]
                elif key == "base":
                    base = int(parts[1], 16)
                elif key == "arena":
                    arena = (int(parts[1], 16), int(parts[2], 16))
                elif key == "load":
                    load = tuple(int(a, 16) for a in parts[1].split(","))
                continue
            if len(parts) != 3:
                raise ValueError(f"oracle line {lineno}: expected word, count and pattern")
            w, f, body = parts
            lines, weights = [], []
            for item in body.split(","):
                a, wt = item.split(":")
                lines.append(int(a, 16))
                weights.append(float(wt))
            pats[w] = Pattern(w, tuple(lines), tuple(weights))
            freq[w] = int(f)
        return cls(kind, pats, freq, base, arena, load)

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "Oracle":
        return cls.from_text(Path(path).read_text())


def _patterns_from_events(events, words: Sequence[str], weigh) -> Dict[str, Pattern]:
    lab = events.label
    m = lab >= 0
    order = np.flatnonzero(m)
    lines_by: Dict[int, List[int]] = {}
    for i, va in zip(order.tolist(), (events.va[order] & ~63).tolist()):
        lines_by.setdefault(int(lab[i]), []).append(va)
    out = {}
    for k, w in enumerate(words):
        seq = lines_by.get(k, [])
        dedup = [l for j, l in enumerate(seq) if j == 0 or seq[j - 1] != l]
        out[w] = Pattern(w, tuple(dedup), tuple(weigh(w, dedup)))
    return out


def build_oracle(victim, dictionary: Optional[Sequence[str]] = None,
                 freq: Optional[Dict[str, int]] = None) -> Oracle:
    """Simulate a lookup of every dictionary word offline and record its lines."""
    if isinstance(victim, HashDictVictim):
        words = list(dict.fromkeys(dictionary if dictionary is not None else victim.dictionary))
        words = [w for w in words if w in victim.node_va]
        quiet = HashDictVictim(victim.dictionary, buckets=victim.buckets,
                               heap_bytes=victim.heap_end - victim.base, base=victim.base)
        run = run_victim(quiet, words)
        events = run.events[run.first_lookup_event:]
        head = run.events[:run.first_lookup_event]
        seq = (head.va[quiet.critical.mask(head.va)] & ~63).tolist()
        load = [l for j, l in enumerate(seq) if j == 0 or seq[j - 1] != l]

        def weigh(w, lines):
            # bucket slot weighs 1; node k along the chain weighs k + 1
            depth = {}
            for k, node in enumerate(quiet.lookup_nodes(w), start=1):
                for l in quiet.node_lines(node):
                    depth[l] = k + 1
            return [depth.get(l, 1) for l in lines]

        pats = _patterns_from_events(events, words, weigh)
        return Oracle("hashdict", pats, dict(freq or {}), 0, (quiet.arena, quiet.arena_end), tuple(load))
    if isinstance(victim, KvVictim):
        words = list(dict.fromkeys(dictionary if dictionary is not None else victim.trained))
        quiet = KvVictim(hashpower=victim.hashpower, base=victim.base, request_gap=1, item_size=victim.item_size)
        from ..victims import train_kv
        train_kv(quiet, victim.trained)
        run = run_victim(quiet, words)
        events = run.events[run.first_lookup_event:]
        crit = quiet.critical
        m = crit.mask(events.va)
        events = events[m]
        pats = _patterns_from_events(events, words, lambda w, lines: [1.0] * len(lines))
        return Oracle("kv", pats, dict(freq or {}), 0, (quiet.base, quiet.table_end))
    raise TypeError(f"unknown victim {type(victim).__name__}")


def check_oracle(oracle: Oracle, run) -> float:
    """Fraction of non-misspelt occurrences whose labelled line sequence equals the oracle pattern."""
    ev = run.events
    m = ev.label >= 0
    m &= run.critical.mask(ev.va)
    lines_by: Dict[int, List[int]] = {}
    for lab, va in zip(ev.label[m].tolist(), (ev.va[m] & ~63).tolist()):
        lines_by.setdefault(lab, []).append(va)
    ok = n = 0
    for k, w in enumerate(run.words):
        if run.misspelt[k]:
            continue
        seq = lines_by.get(k, [])
        dedup = tuple(l for j, l in enumerate(seq) if j == 0 or seq[j - 1] != l)
        n += 1
        ok += oracle.patterns.get(w, Pattern(w, (), ())).lines == dedup
    return ok / n if n else 1.0


def probe_offset(trace, expected_line: int, t0: int, t1: int, align: int = 4096) -> int:
    """Load offset of the victim from a planted probe.

    The attacker submits a secret of its own between ``t0`` and ``t1`` whose
    unshifted line is ``expected_line``.  Any critical record in that window
    lying a multiple of ``align`` away from it gives the offset; the smallest
    such shift wins.
    """
    ts = np.asarray(trace.timestamp)
    va = np.asarray(trace.va)[(ts >= t0) & (ts < t1)]
    d = va - (expected_line & ~63)
    d = d[d % align == 0]
    if len(d) == 0:
        raise ValueError("probe left no record in its window")
    return int(d[np.argmin(np.abs(d))])
