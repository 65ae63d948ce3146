"""Fuzzy matching of a critical trace against the oracle.

The bus carries no word boundaries.  The trace is cut greedily: a record
joins the current segment when some candidate of that segment has the
record's line later in its pattern; otherwise a new segment starts.  A
record that does not fit but is followed (within ``lookahead`` records) by
one that does is treated as reordered and held for the next segment.

With ``expand`` on, a line also matches the patterns of its two neighbours
at half weight: a prefetcher may have fetched the line next to the one the
victim touched.  A neighbour of the line just matched only counts when the
record looks like a prefetch (adjacent and a few cycles behind).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .oracle import Oracle

EXPANDED_WEIGHT = 0.5


@dataclass
class Segment:
    start: int                          # timestamp of the first record
    end: int
    records: int
    ranked: List[Tuple[str, float]]     # (word, completeness), best first

    @property
    def word(self) -> Optional[str]:
        return self.ranked[0][0] if self.ranked else None


@dataclass
class MatchResult:
    segments: List[Segment]
    stats: Dict[str, int] = field(default_factory=dict)
    metrics: Dict[str, float] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)

    @property
    def tokens(self) -> List[str]:
        return [s.word for s in self.segments if s.word is not None]

    def alternatives(self, k: int = 5) -> List[List[Tuple[str, float]]]:
        return [s.ranked[:k] for s in self.segments]


class _Open:
    """Candidates of the segment being built."""

    __slots__ = ("state", "start", "end", "records")

    def __init__(self):
        self.state: Dict[str, list] = {}    # word -> [last_pos, matched {pos: weight}, explained, exact]
        self.records = 0
        self.start = self.end = 0

    def fits(self, hits, ehits, pf=False) -> bool:
        st = self.state
        for w, pos in hits:
            s = st.get(w)
            if s is not None and pos > s[0]:
                return True
        for w, pos in ehits:
            s = st.get(w)
            if s is not None and (pos > s[0] or (pf and pos == s[0])):
                return True
        return False

    def add(self, t, hits, ehits, oracle: Oracle, seed: bool, pf=False):
        st = self.state
        if seed:
            for w, pos in hits:
                if w not in st:
                    st[w] = [-1, {}, 0, 0]
            for w, pos in ehits:
                if w not in st:
                    st[w] = [-1, {}, 0, 0]
            self.start = t
        best: Dict[str, Tuple[int, float]] = {}
        for w, pos in hits:
            s = st.get(w)
            if s is not None and pos > s[0]:
                b = best.get(w)
                if b is None or b[1] < 1.0 or pos < b[0]:
                    best[w] = (pos, 1.0)
        for w, pos in ehits:
            s = st.get(w)
            if s is not None and (pos > s[0] or (pf and pos == s[0])) and w not in best:
                best[w] = (pos, EXPANDED_WEIGHT)
        for w, (pos, frac) in best.items():
            s = st[w]
            s[0] = pos
            wt = oracle.patterns[w].weights[pos] * frac
            if s[1].get(pos, 0.0) < wt:
                s[1][pos] = wt
            s[2] += 1
            s[3] += frac == 1.0
        self.records += 1
        self.end = t

    def close(self, oracle: Oracle, top: int) -> Segment:
        rows = []
        for w, (last, matched, explained, exact) in self.state.items():
            comp = sum(matched.values()) / oracle.patterns[w].total
            rows.append((explained == self.records, comp, exact, oracle.freq.get(w, 0), w))
        # a walk that is a prefix of a longer one is also complete; prefer the longer
        rows.sort(key=lambda r: (not r[0], -r[1], -r[2], -r[3], r[4]))
        return Segment(self.start, self.end, self.records, [(r[4], round(r[1], 6)) for r in rows[:top]])


def _starts(first, second) -> bool:
    """Whether a segment seeded by ``first`` would take ``second``."""
    seed: Dict[str, int] = {}
    for w, pos in first[0] + first[1]:
        if pos < seed.get(w, 1 << 30):
            seed[w] = pos
    for w, pos in second[0]:
        p = seed.get(w)
        if p is not None and pos > p:
            return True
    return False


def fuzzy_match(trace, oracle: Oracle, expand: bool = True, lookahead: int = 4, top: int = 5,
                reads_only: bool = True) -> MatchResult:
    """Segment ``trace`` (a CriticalTrace after the anchor) into ranked word guesses."""
    if reads_only and len(trace):
        trace = trace.select(~np.asarray(trace.is_write))
    ts = np.asarray(trace.timestamp).tolist()
    lines = (np.asarray(trace.va) & ~63).tolist()
    pf = np.asarray(getattr(trace, "maybe_prefetch", np.zeros(len(lines), bool))).tolist()
    index = oracle.index
    empty: list = []

    def look(line):
        h = index.get(line, empty)
        if expand:
            e = index.get(line - 64, empty) + index.get(line + 64, empty)
        else:
            e = empty
        return h, e

    looks = [look(l) for l in lines]
    segments: List[Segment] = []
    stats = {"records": len(lines), "unmatched": 0, "reordered": 0}
    cur: Optional[_Open] = None
    held: List[int] = []
    n = len(lines)
    i = 0
    while i < n:
        hits, ehits = looks[i]
        if not hits and not ehits:
            stats["unmatched"] += 1
            i += 1
            continue
        opens = i + 1 < n and _starts(looks[i], looks[i + 1])
        if cur is not None and (cur.fits(hits, empty) or (not opens and cur.fits(empty, ehits, pf[i]))):
            cur.add(ts[i], hits, ehits, oracle, seed=False, pf=pf[i])
            i += 1
            continue
        if cur is not None and lookahead and not opens:
            ahead = False
            for j in range(i + 1, min(n, i + 1 + lookahead)):
                if cur.fits(looks[j][0], empty):     # a neighbour-line hit is too weak to reorder on
                    ahead = True
                    break
            if ahead:
                held.append(i)
                stats["reordered"] += 1
                i += 1
                continue
        if cur is not None:
            segments.append(cur.close(oracle, top))
        cur = _Open()
        pending = held + [i]
        held = []
        for k, j in enumerate(pending):
            if k == 0:
                cur.add(ts[j], *looks[j], oracle, seed=True)
            elif cur.fits(*looks[j], pf[j]):
                cur.add(ts[j], *looks[j], oracle, seed=False, pf=pf[j])
            else:
                segments.append(cur.close(oracle, top))
                cur = _Open()
                cur.add(ts[j], *looks[j], oracle, seed=True)
        i += 1
    if cur is not None:
        segments.append(cur.close(oracle, top))
    return MatchResult(segments, stats, meta={"tie_break": "corpus frequency, then word"})


def score(result: MatchResult, occurrence_start: Sequence[int], truth: Sequence[str],
          misspelt: Optional[Sequence[bool]] = None, stopwords: Sequence[str] = (),
          top_k: int = 1) -> Dict[str, float]:
    """Recovery metrics against ground truth.

    Each segment is attributed to the occurrence whose processing started
    most recently before the segment's first record.  An occurrence counts
    as recovered when any of its segments ranks the true word in the top
    ``top_k``.
    """
    start = np.asarray(occurrence_start, np.int64)
    n = len(truth)
    miss = np.zeros(n, bool) if misspelt is None else np.asarray(misspelt, bool)
    rec = np.zeros(n, bool)
    for s in result.segments:
        k = int(np.searchsorted(start, s.start, side="right")) - 1
        if k < 0 or rec[k]:
            continue
        if truth[k] in [w for w, _ in s.ranked[:top_k]]:
            rec[k] = True
    valid = ~miss
    stop = set(stopwords)
    nonstop = valid & np.array([w not in stop for w in truth], bool)
    uniq = {w for w, v in zip(truth, valid) if v}
    m = {
        "occurrences": int(valid.sum()),
        "recovered": int(rec[valid].sum()),
        "recovery": float(rec[valid].mean()) if valid.any() else 0.0,
        "recovery_no_stopwords": float(rec[nonstop].mean()) if nonstop.any() else 0.0,
        "unique_words": len(uniq),
        "recovered_per_unique": float(rec[valid].sum() / len(uniq)) if uniq else 0.0,
        "segments": len(result.segments),
    }
    result.metrics.update(m)
    return m
