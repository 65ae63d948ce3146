"""Locating the end of the dictionary load with a longest increasing subsequence.

Nodes are bump-allocated in load order, so the load phase writes the node
arena at strictly increasing addresses.  Lookups afterwards jump around, so
the LIS over arena records ends where the load ends.
"""

from __future__ import annotations

import bisect
from typing import Dict, List, Sequence, Tuple

import numpy as np


class NoAnchorError(RuntimeError):
    """No load phase found: the increasing run is too short to trust."""


def longest_increasing_subsequence(seq: Sequence[int]) -> List[int]:
    """Indices of one strictly increasing subsequence of maximum length.

    Patience sorting, O(n log n).  Among maximal subsequences the one ending
    earliest is returned.
    """
    tails: List[int] = []       # smallest tail value of an increasing run of each length
    tail_idx: List[int] = []
    prev = [-1] * len(seq)
    best_end = -1
    for i, x in enumerate(seq):
        k = bisect.bisect_left(tails, x)
        if k == len(tails):
            tails.append(x)
            tail_idx.append(i)
            best_end = i
        else:
            tails[k] = x
            tail_idx[k] = i
        prev[i] = tail_idx[k - 1] if k > 0 else -1
    out = []
    i = best_end
    while i >= 0:
        out.append(i)
        i = prev[i]
    return out[::-1]


def find_anchor(trace, oracle, threshold: float = 0.05, sparse: float = 8.0, window: int = 64,
                slack: int = 8) -> int:
    """Index into ``trace`` of the first record after the load phase.

    Only records inside the oracle's allocation arena take part in the LIS.
    Raises NoAnchorError when the LIS is shorter than ``threshold`` times the
    dictionary size.  A sparse tail of the LIS is treated as lookups.  When
    the oracle carries the load sequence, records continuing it are skipped
    so the index lands on the first lookup.
    """
    lo, hi = oracle.arena
    va = np.asarray(trace.va)
    sel = np.flatnonzero((va >= lo) & (va < hi))
    lis = longest_increasing_subsequence(va[sel].tolist())
    need = max(2, int(np.ceil(threshold * len(oracle))))
    if len(lis) < need:
        raise NoAnchorError(f"longest increasing run has {len(lis)} records, need {need}")
    idx = sel[lis]
    end = int(np.searchsorted(idx, _dense_end(idx, sparse)))
    if not oracle.load_lines:
        return int(idx[end]) + 1
    # back off into the load: under heavy loss the dense part can still end in lookups
    start = int(idx[max(0, end - max(8, len(idx) // 20))])
    return _follow_load(trace, oracle, start, window, slack)


def _load_positions(oracle) -> Dict[int, List[int]]:
    pos = getattr(oracle, "_load_pos", None)
    if pos is None:
        pos = {}
        for k, l in enumerate(oracle.load_lines):
            pos.setdefault(l, []).append(k)
        oracle._load_pos = pos
    return pos


def _follow_load(trace, oracle, start: int, window: int, slack: int, back: int = 256) -> int:
    """Walk from record ``start`` to the end of the load phase.

    The offline load sequence says which lines come next.  A read found
    among the next ``window`` of them continues the load, moves the
    position on and marks the end.  One further ahead but within ``back``
    is a candidate jump, taken if the next read continues from it.  One
    within ``back`` behind, or whose neighbour is near (a prefetch), is
    consistent with the load and moves nothing: the cache reorders misses
    and hides most hits, so the position is only a rough guide.  The walk
    ends after ``slack`` reads that are neither, counted since the load
    was last continued.  Writes (write-backs arrive late) and lines the
    oracle does not know (noise) are stepped over.  Returns the index
    after the last record that continued the load.
    """
    pos = _load_positions(oracle)
    va = np.asarray(trace.va).tolist()
    wr = np.asarray(trace.is_write).tolist()
    first = pos.get(va[start] & ~63)
    if not first:
        return start + 1
    p = first[0]
    index = oracle.index
    last = start
    misses = 0
    jump = None

    def near(line):
        ks = pos.get(line, ())
        k = bisect.bisect_left(ks, p - back)
        return k < len(ks) and ks[k] <= p + back

    for i in range(start + 1, len(va)):
        line = va[i] & ~63
        if wr[i] or (line not in index and line not in pos):
            continue
        ks = pos.get(line, ())
        k = bisect.bisect_right(ks, p)
        if k < len(ks) and ks[k] <= p + window:
            p, last, misses, jump = ks[k], i, 0, None
            continue
        if jump is not None:
            j = bisect.bisect_right(ks, jump)
            if j < len(ks) and ks[j] <= jump + window:
                p, last, misses, jump = ks[j], i, 0, None
                continue
        if k < len(ks) and ks[k] <= p + back:
            jump = ks[k]
        elif not (near(line) or near(line - 64) or near(line + 64)):
            misses += 1
            if misses > slack:
                break
    return last + 1


def _dense_end(idx: np.ndarray, sparse: float) -> int:
    """Last record of the dense part of an increasing run.

    When load records are lost the run can pick up a few lookups past the
    load's highest surviving address.  Those sit far apart in the trace.
    The run is split where a dense-then-sparse model of record positions
    fits best; the tail is dropped if it is ``sparse`` times thinner.
    """
    n = len(idx)
    if n < 4:
        return idx[-1]
    x = np.asarray(idx, np.float64) - idx[0]
    j = np.arange(1, n - 1)               # head is idx[0..j], tail idx[j+1..]
    span1 = np.maximum(x[j], 1.0)
    span2 = np.maximum(x[-1] - x[j], 1.0)
    k2 = n - 1 - j
    ll = j * np.log(j / span1) + k2 * np.log(k2 / span2)
    ll_one = (n - 1) * np.log((n - 1) / max(x[-1], 1.0))
    b = int(np.argmax(ll))
    dense, thin = j[b] / span1[b], k2[b] / span2[b]
    if ll[b] > ll_one and dense > sparse * thin:
        return idx[j[b]]
    return idx[-1]
