"""GF(2) linear algebra on int bitsets.

Rows are Python ints; bit ``j`` of a row is column ``j``.
"""

from __future__ import annotations

from typing import Iterable, List, Optional, Sequence, Tuple


def parity(x: int) -> int:
    return bin(x).count("1") & 1


def rank(rows: Iterable[int]) -> int:
    basis = _Basis()
    for r in rows:
        basis.insert(r)
    return len(basis)


class _Basis:
    """Reduced row basis keyed by pivot bit (highest set bit)."""

    def __init__(self):
        self.rows = {}   # pivot -> (row, tag)

    def __len__(self):
        return len(self.rows)

    def reduce(self, row: int, tag: int = 0) -> Tuple[int, int]:
        while row:
            p = row.bit_length() - 1
            hit = self.rows.get(p)
            if hit is None:
                break
            row ^= hit[0]
            tag ^= hit[1]
        return row, tag

    def insert(self, row: int, tag: int = 0) -> Tuple[int, int]:
        """Insert ``row`` (carrying an augmented ``tag``).

        Returns the reduced (row, tag); a zero row means it was dependent.
        """
        row, tag = self.reduce(row, tag)
        if row:
            self.rows[row.bit_length() - 1] = (row, tag)
        return row, tag


class InconsistentSystem(ValueError):
    pass


class UnderdeterminedSystem(ValueError):
    def __init__(self, free_columns: Sequence[int]):
        self.free_columns = list(free_columns)
        super().__init__(f"under-determined: columns {self.free_columns} unresolved")


def solve_many(pairs: Iterable[Tuple[int, int]], n_cols: int, n_out: Optional[int] = None) -> List[int]:
    """Solve ``parity(x & m_k) == bit k of y`` for every output bit at once.

    ``pairs`` yields ``(x, y)``: ``x`` an n_cols-bit input vector, ``y`` a
    vector of output bits.  Returns one column mask ``m_k`` per output bit
    ``k < n_out`` (default: the widest ``y`` seen).

    Raises InconsistentSystem if no linear solution exists and
    UnderdeterminedSystem if the inputs do not span all ``n_cols`` columns.
    """
    basis = _Basis()
    widest = 0
    for x, y in pairs:
        widest = max(widest, y.bit_length())
        row, tag = basis.insert(x, y)
        if not row and tag:
            raise InconsistentSystem("samples are not explained by any linear map")
    if len(basis) < n_cols:
        free = [c for c in range(n_cols) if c not in basis.rows]
        raise UnderdeterminedSystem(free)
    if n_out is None:
        n_out = widest

    # back-substitute to unit rows, lowest pivot first
    unit = {}
    for p in sorted(basis.rows):
        row, tag = basis.rows[p]
        for q in range(p):
            if (row >> q) & 1:
                row ^= 1 << q
                tag ^= unit[q]
        unit[p] = tag
    masks = []
    for k in range(n_out):
        m = 0
        for c in range(n_cols):
            if (unit[c] >> k) & 1:
                m |= 1 << c
        masks.append(m)
    return masks


def invert(masks: Sequence[int], n: int) -> Optional[List[int]]:
    """Invert the square map whose output bit ``i`` is ``parity(x & masks[i])``.

    Returns masks of the inverse map (over output-bit positions), or None if
    the map is singular.
    """
    if len(masks) != n:
        return None
    # sample the map on unit vectors: e_j -> column j of the matrix
    pairs = []
    for i, m in enumerate(masks):
        pairs.append((m, 1 << i))
    # rows of the matrix are masks; solving M^T-style: we want x from y where
    # y_i = <m_i, x>.  Treat each equation as a sample (m_i, e_i) and solve
    # for the inverse expressing every x_j as XOR of y_i.
    try:
        sol = solve_many(pairs, n)
    except (InconsistentSystem, UnderdeterminedSystem):
        return None
    # sol[i] is a mask over columns j: y_i contributes to x_j when bit j set.
    inv = [0] * n
    for i, m in enumerate(sol):
        for j in range(n):
            if (m >> j) & 1:
                inv[j] |= 1 << i
    return inv
