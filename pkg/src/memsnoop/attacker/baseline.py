"""Controlled-channel baseline: the same matching at page granularity.

A page-fault channel sees every access but only its page number.  The
oracle is collapsed to pages and the most common candidate wins ties.
"""

from __future__ import annotations

from typing import Dict, List

import numpy as np

from .matching import MatchResult, fuzzy_match
from .oracle import Oracle, Pattern
from .translate import CriticalTrace

PAGE_MASK = ~0xFFF


def page_oracle(oracle: Oracle) -> Oracle:
    pats: Dict[str, Pattern] = {}
    for w, p in oracle.patterns.items():
        lines: List[int] = []
        weights: List[float] = []
        for l, wt in zip(p.lines, p.weights):
            pg = l & PAGE_MASK
            if lines and lines[-1] == pg:
                weights[-1] = max(weights[-1], wt)
            else:
                lines.append(pg)
                weights.append(wt)
        pats[w] = Pattern(w, tuple(lines), tuple(weights))
    return Oracle(oracle.kind, pats, dict(oracle.freq), oracle.base,
                  (oracle.arena[0] & PAGE_MASK, oracle.arena[1]))


def page_trace(timestamp, va, gap: int = 1000) -> CriticalTrace:
    """Page-fault view: page numbers, with back-to-back touches of one page
    collapsed into one fault."""
    t = np.asarray(timestamp, np.int64)
    pg = np.asarray(va, np.int64) & PAGE_MASK
    keep = np.ones(len(t), bool)
    if len(t) > 1:
        keep[1:] = (pg[1:] != pg[:-1]) | (np.diff(t) > gap)
    return CriticalTrace.from_arrays(t[keep], pg[keep])


def controlled_channel_baseline(events, oracle: Oracle, critical=None, start: int = 0) -> MatchResult:
    """Match an uncached VA event stream at page granularity.

    ``events`` is the victim's own event stream (simulator privilege: the
    channel observes every access, not just cache misses); ``start`` skips
    the setup phase.
    """
    ev = events[start:]
    m = np.ones(len(ev), bool) if critical is None else critical.mask(ev.va)
    tr = page_trace(ev.timestamp[m], ev.va[m])
    res = fuzzy_match(tr, page_oracle(oracle), expand=False, lookahead=0, reads_only=False)
    res.meta["channel"] = "page-granular (low 12 bits masked)"
    return res
