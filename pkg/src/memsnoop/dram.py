"""DRAM addressing, bus command streams and addressing-function inference.

A physical address is split by an :class:`AddressMap` into DRAM coordinates
(rank, bank group, bank, row, column).  Every coordinate bit is the XOR of a
fixed set of physical-address bits at or above bit 6, so the map is linear
over GF(2) and operates on 64-byte cache lines.

Command logs are stored columnar (:class:`CommandLog`) because a single
simulated run emits millions of commands.
"""

from __future__ import annotations

import enum
import io
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import gf2

LINE_BITS = 6
FIELDS = ("rank", "bank_group", "bank", "row", "column")


class CapacityError(ValueError):
    """Physical address outside the configured DRAM."""


class NonLinearMapError(ValueError):
    """Probe samples admit no XOR-linear addressing function."""


class UnderdeterminedMapError(ValueError):
    """Probe samples leave some physical-address bits unresolved."""

    def __init__(self, unresolved: Sequence[int]):
        self.unresolved = list(unresolved)
        super().__init__(f"physical-address bits {self.unresolved} are not resolved by the samples")


@dataclass(frozen=True)
class Geometry:
    """DRAM organisation; ``columns`` counts 64-byte blocks per row."""
    ranks: int = 1
    bank_groups: int = 4
    banks: int = 4
    rows: int = 65536
    columns: int = 128

    def __post_init__(self):
        for name in FIELDS:
            n = self.size(name)
            if n < 1 or n & (n - 1):
                raise ValueError(f"{name} count must be a power of two, got {n}")

    def size(self, name: str) -> int:
        return getattr(self, name + "s") if name != "bank_group" else self.bank_groups

    def width(self, name: str) -> int:
        return self.size(name).bit_length() - 1

    @property
    def total_bits(self) -> int:
        return sum(self.width(f) for f in FIELDS)

    @property
    def address_bits(self) -> int:
        return self.total_bits + LINE_BITS

    @property
    def capacity(self) -> int:
        return 1 << self.address_bits

    @property
    def n_banks(self) -> int:
        return self.ranks * self.bank_groups * self.banks


class DramAddress(NamedTuple):
    rank: int
    bank_group: int
    bank: int
    row: int
    column: int


class AddressMap:
    """XOR-linear physical-address -> DRAM-coordinate function.

    ``bits[field][i]`` is the tuple of physical-address bit positions whose
    XOR gives bit ``i`` of that coordinate.
    """

    def __init__(self, bits: Dict[str, Sequence[Sequence[int]]], geometry: Geometry = Geometry()):
        self.geometry = geometry
        self.bits = {}
        for name in FIELDS:
            spec = [tuple(sorted(b)) for b in bits.get(name, ())]
            if len(spec) != geometry.width(name):
                raise ValueError(f"{name}: expected {geometry.width(name)} bits, got {len(spec)}")
            for b in spec:
                if not b:
                    raise ValueError(f"{name}: empty XOR term")
                if min(b) < LINE_BITS or max(b) >= geometry.address_bits:
                    raise ValueError(f"{name}: bit positions must lie in [6, {geometry.address_bits})")
            self.bits[name] = tuple(spec)
        # flat list of input masks, output order = FIELDS, LSB first
        self._masks = []
        for name in FIELDS:
            for b in self.bits[name]:
                m = 0
                for p in b:
                    m ^= 1 << (p - LINE_BITS)
                self._masks.append(m)
        self._inverse = gf2.invert(self._masks, geometry.total_bits)

    def __eq__(self, other):
        return isinstance(other, AddressMap) and other.geometry == self.geometry and other.bits == self.bits

    def __repr__(self):
        return f"AddressMap({self.bits!r}, {self.geometry!r})"

    @property
    def is_bijective(self) -> bool:
        return self._inverse is not None

    def _check(self, pa: int):
        if pa < 0 or pa >= self.geometry.capacity:
            raise CapacityError(f"address {pa:#x} outside {self.geometry.capacity:#x}-byte DRAM")

    def to_dram(self, pa: int) -> DramAddress:
        self._check(pa)
        x = pa >> LINE_BITS
        out = []
        k = 0
        for name in FIELDS:
            v = 0
            for i in range(self.geometry.width(name)):
                v |= gf2.parity(x & self._masks[k]) << i
                k += 1
            out.append(v)
        return DramAddress(*out)

    def to_physical(self, addr: DramAddress) -> int:
        if self._inverse is None:
            raise ValueError("address map is not invertible")
        y = self._pack(addr)
        x = 0
        for j, m in enumerate(self._inverse):
            x |= gf2.parity(y & m) << j
        return x << LINE_BITS

    def _pack(self, addr: Sequence[int]) -> int:
        y = 0
        shift = 0
        for name, v in zip(FIELDS, addr):
            w = self.geometry.width(name)
            y |= (v & ((1 << w) - 1)) << shift
            shift += w
        return y

    # vectorised forms used on whole traces
    def to_dram_array(self, pas: np.ndarray) -> np.ndarray:
        """(N,) physical addresses -> (N, 5) int64 coordinates."""
        pas = np.asarray(pas, dtype=np.int64)
        if pas.size and (pas.min() < 0 or pas.max() >= self.geometry.capacity):
            bad = pas[(pas < 0) | (pas >= self.geometry.capacity)][0]
            raise CapacityError(f"address {int(bad):#x} outside {self.geometry.capacity:#x}-byte DRAM")
        x = pas >> LINE_BITS
        out = np.zeros((pas.size, len(FIELDS)), dtype=np.int64)
        k = 0
        for f, name in enumerate(FIELDS):
            for i in range(self.geometry.width(name)):
                out[:, f] |= _parity_array(x & self._masks[k]) << i
                k += 1
        return out

    def to_physical_array(self, coords: np.ndarray) -> np.ndarray:
        if self._inverse is None:
            raise ValueError("address map is not invertible")
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, len(FIELDS))
        y = np.zeros(len(coords), dtype=np.int64)
        shift = 0
        for f, name in enumerate(FIELDS):
            w = self.geometry.width(name)
            y |= (coords[:, f] & ((1 << w) - 1)) << shift
            shift += w
        x = np.zeros(len(coords), dtype=np.int64)
        for j, m in enumerate(self._inverse):
            x |= _parity_array(y & m) << j
        return x << LINE_BITS

    # text format
    def to_text(self) -> str:
        g = self.geometry
        lines = [
            "# physical address -> DRAM coordinate map; each bit is the XOR of the listed PA bits",
            f"geometry ranks={g.ranks} bank_groups={g.bank_groups} banks={g.banks} rows={g.rows} columns={g.columns}",
        ]
        for name in FIELDS:
            for i, b in enumerate(self.bits[name]):
                lines.append(f"{name}[{i}] = " + " ^ ".join(str(p) for p in b))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AddressMap":
        geometry = Geometry()
        bits: Dict[str, Dict[int, Tuple[int, ...]]] = {name: {} for name in FIELDS}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("geometry"):
                kw = dict(tok.split("=") for tok in line.split()[1:])
                geometry = Geometry(**{k: int(v) for k, v in kw.items()})
                continue
            try:
                lhs, rhs = (s.strip() for s in line.split("="))
                name, idx = lhs.rstrip("]").split("[")
                terms = tuple(int(t) for t in rhs.split("^"))
                bits[name][int(idx)] = terms
            except (ValueError, KeyError) as exc:
                raise ValueError(f"line {lineno}: cannot parse {raw!r}") from exc
        spec = {name: [bits[name][i] for i in sorted(bits[name])] for name in FIELDS}
        return cls(spec, geometry)

    @classmethod
    def load(cls, path) -> "AddressMap":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def default(cls) -> "AddressMap":
        text = resources.files("memsnoop.data").joinpath("default_map.txt").read_text()
        return cls.from_text(text)


def _parity_array(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    for s in (32, 16, 8, 4, 2, 1):
        v ^= v >> s
    return v & 1


def random_address_map(rng: np.random.Generator, geometry: Geometry = Geometry(), folds: int = 12) -> AddressMap:
    """A random bijective map: a bit permutation followed by random XOR folds."""
    n = geometry.total_bits
    perm = rng.permutation(n)
    masks = [1 << int(p) for p in perm]
    for _ in range(folds):
        i, j = rng.choice(n, size=2, replace=False)
        masks[i] ^= masks[j]          # elementary row op keeps it invertible
    spec = {}
    k = 0
    for name in FIELDS:
        terms = []
        for _ in range(geometry.width(name)):
            m = masks[k]
            terms.append(tuple(b + LINE_BITS for b in range(n) if (m >> b) & 1))
            k += 1
        spec[name] = terms
    return AddressMap(spec, geometry)


# --------------------------------------------------------------------------
# commands

class CommandKind(enum.IntEnum):
    ACTIVATE = 0
    PRECHARGE = 1
    READ = 2
    WRITE = 3


class DramCommand(NamedTuple):
    timestamp: int
    kind: CommandKind
    rank: int
    bank_group: int
    bank: int
    value: Optional[int]    # row for ACTIVATE, column for READ/WRITE, None for PRECHARGE


class BusRecord(NamedTuple):
    timestamp: int
    access_type: str        # "read" | "write"
    dram: DramAddress
    address: int            # physical address recovered through the inverse map


@dataclass
class CommandLog:
    """Columnar command log (timestamps non-decreasing)."""
    timestamp: np.ndarray
    kind: np.ndarray
    rank: np.ndarray
    bank_group: np.ndarray
    bank: np.ndarray
    value: np.ndarray        # -1 for PRECHARGE

    def __len__(self):
        return len(self.timestamp)

    def __iter__(self) -> Iterator[DramCommand]:
        for t, k, r, g, b, v in zip(self.timestamp.tolist(), self.kind.tolist(), self.rank.tolist(),
                                    self.bank_group.tolist(), self.bank.tolist(), self.value.tolist()):
            yield DramCommand(t, CommandKind(k), r, g, b, None if v < 0 else v)

    def __getitem__(self, i) -> DramCommand:
        v = int(self.value[i])
        return DramCommand(int(self.timestamp[i]), CommandKind(int(self.kind[i])), int(self.rank[i]),
                           int(self.bank_group[i]), int(self.bank[i]), None if v < 0 else v)

    @classmethod
    def from_commands(cls, cmds: Iterable[DramCommand]) -> "CommandLog":
        cols = [[], [], [], [], [], []]
        for c in cmds:
            cols[0].append(c.timestamp)
            cols[1].append(int(c.kind))
            cols[2].append(c.rank)
            cols[3].append(c.bank_group)
            cols[4].append(c.bank)
            cols[5].append(-1 if c.value is None else c.value)
        return cls(*(np.asarray(c, dtype=np.int64) for c in cols))

    def counts(self) -> Dict[str, int]:
        return {k.name: int(np.count_nonzero(self.kind == k)) for k in CommandKind}

    def to_text(self) -> str:
        out = io.StringIO()
        write_command_log(self, out)
        return out.getvalue()


def write_command_log(log: CommandLog, fh) -> None:
    """One command per line: ``cycle,KIND,rank,bg,bank,row_or_col``.

    PRECHARGE carries no row or column; its last field is ``-``.
    """
    names = [k.name for k in CommandKind]
    buf = []
    for t, k, r, g, b, v in zip(log.timestamp.tolist(), log.kind.tolist(), log.rank.tolist(),
                                log.bank_group.tolist(), log.bank.tolist(), log.value.tolist()):
        buf.append(f"{t},{names[k]},{r},{g},{b},{'-' if v < 0 else v}\n")
        if len(buf) >= 65536:
            fh.write("".join(buf))
            buf.clear()
    fh.write("".join(buf))


def read_command_log(fh) -> CommandLog:
    kinds = {k.name: int(k) for k in CommandKind}
    cols = [[], [], [], [], [], []]
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 6 or parts[1] not in kinds:
            raise ValueError(f"line {lineno}: malformed command {line!r}")
        cols[0].append(int(parts[0]))
        cols[1].append(kinds[parts[1]])
        cols[2].append(int(parts[2]))
        cols[3].append(int(parts[3]))
        cols[4].append(int(parts[4]))
        cols[5].append(-1 if parts[5] == "-" else int(parts[5]))
    return CommandLog(*(np.asarray(c, dtype=np.int64) for c in cols))


def encode_requests(requests, amap: AddressMap, reorder_window: int = 0,
                    rng: Optional[np.random.Generator] = None) -> CommandLog:
    """Turn (timestamp, physical address, is_write) requests into bus commands.

    ``requests`` is either an iterable of tuples or a tuple of three arrays.
    Per-bank row-buffer state decides whether PRECHARGE/ACTIVATE precede the
    column command.  Every command takes one cycle; a command is never issued
    before its request's timestamp.

    With ``reorder_window > 0`` requests falling in the same window of that
    many cycles are issued in a shuffled order, mimicking controller
    scheduling.
    """
    ts, pas, writes = _request_columns(requests)
    if len(pas) and (pas & ((1 << LINE_BITS) - 1)).any():
        raise ValueError("request addresses must be 64-byte aligned")
    coords = amap.to_dram_array(pas)
    order = np.arange(len(ts))
    if reorder_window > 0 and len(ts):
        rng = rng or np.random.default_rng(0)
        keys = ts // reorder_window
        order = np.lexsort((rng.random(len(ts)), keys))
    g = amap.geometry
    bank_id = (coords[:, 0] * g.bank_groups + coords[:, 1]) * g.banks + coords[:, 2]

    open_row = {}
    out_t, out_k, out_i, out_v = [], [], [], []
    now = -1
    ts_l = ts.tolist()
    wr_l = writes.tolist()
    bank_l = bank_id.tolist()
    row_l = coords[:, 3].tolist()
    col_l = coords[:, 4].tolist()
    ACT, PRE, RD, WR = 0, 1, 2, 3
    for i in order.tolist():
        t = ts_l[i]
        if now < t:
            now = t
        b = bank_l[i]
        row = row_l[i]
        cur = open_row.get(b)
        if cur != row:
            if cur is not None:
                out_t.append(now); out_k.append(PRE); out_i.append(i); out_v.append(-1)
                now += 1
            out_t.append(now); out_k.append(ACT); out_i.append(i); out_v.append(row)
            now += 1
            open_row[b] = row
        out_t.append(now); out_k.append(WR if wr_l[i] else RD); out_i.append(i); out_v.append(col_l[i])
        now += 1
    idx = np.asarray(out_i, dtype=np.int64)
    return CommandLog(
        timestamp=np.asarray(out_t, dtype=np.int64),
        kind=np.asarray(out_k, dtype=np.int64),
        rank=coords[idx, 0] if len(idx) else np.zeros(0, np.int64),
        bank_group=coords[idx, 1] if len(idx) else np.zeros(0, np.int64),
        bank=coords[idx, 2] if len(idx) else np.zeros(0, np.int64),
        value=np.asarray(out_v, dtype=np.int64),
    )


def _request_columns(requests):
    if isinstance(requests, tuple) and len(requests) == 3 and isinstance(requests[0], np.ndarray):
        ts, pas, writes = requests
    else:
        rows = list(requests)
        ts = [r[0] for r in rows]
        pas = [r[1] for r in rows]
        writes = [(r[2] in (True, 1, "write", "w")) for r in rows]
    return (np.asarray(ts, dtype=np.int64), np.asarray(pas, dtype=np.int64),
            np.asarray(writes, dtype=bool))


@dataclass
class BusTrace:
    """Decoded column accesses; one entry per READ/WRITE with a known row."""
    timestamp: np.ndarray
    is_write: np.ndarray
    coords: np.ndarray        # (N, 5)
    address: np.ndarray       # physical address
    undecodable: int = 0

    def __len__(self):
        return len(self.timestamp)

    def __iter__(self) -> Iterator[BusRecord]:
        for t, w, c, a in zip(self.timestamp.tolist(), self.is_write.tolist(), self.coords.tolist(),
                              self.address.tolist()):
            yield BusRecord(t, "write" if w else "read", DramAddress(*c), a)

    def __getitem__(self, i) -> BusRecord:
        return BusRecord(int(self.timestamp[i]), "write" if self.is_write[i] else "read",
                         DramAddress(*(int(v) for v in self.coords[i])), int(self.address[i]))

    def requests(self) -> List[Tuple[int, int, str]]:
        return [(r.timestamp, r.address, r.access_type) for r in self]


def decode_commands(log: CommandLog, amap: AddressMap) -> BusTrace:
    """Track the open row of every bank and rebuild full coordinates.

    Column commands to a bank whose active row is unknown (a log captured
    mid-stream) are counted in ``undecodable`` and skipped.
    """
    g = amap.geometry
    bank_id = ((log.rank * g.bank_groups + log.bank_group) * g.banks + log.bank).tolist()
    kinds = log.kind.tolist()
    vals = log.value.tolist()
    open_row = {}
    keep, rows = [], []
    undecodable = 0
    for i, k in enumerate(kinds):
        b = bank_id[i]
        if k == 0:
            open_row[b] = vals[i]
        elif k == 1:
            open_row.pop(b, None)
        else:
            r = open_row.get(b)
            if r is None:
                undecodable += 1
                continue
            keep.append(i)
            rows.append(r)
    idx = np.asarray(keep, dtype=np.int64)
    coords = np.zeros((len(idx), len(FIELDS)), dtype=np.int64)
    if len(idx):
        coords[:, 0] = log.rank[idx]
        coords[:, 1] = log.bank_group[idx]
        coords[:, 2] = log.bank[idx]
        coords[:, 3] = rows
        coords[:, 4] = log.value[idx]
    address = amap.to_physical_array(coords) if len(idx) else np.zeros(0, np.int64)
    return BusTrace(
        timestamp=log.timestamp[idx] if len(idx) else np.zeros(0, np.int64),
        is_write=(log.kind[idx] == CommandKind.WRITE) if len(idx) else np.zeros(0, bool),
        coords=coords,
        address=address,
        undecodable=undecodable,
    )


def infer_address_map(samples: Iterable[Tuple[int, Sequence[int]]], geometry: Geometry = Geometry(),
                      input_bits: Optional[Sequence[int]] = None) -> AddressMap:
    """Recover the XOR-linear addressing function from (PA, DRAM coordinate) probes.

    Solves one GF(2) system per coordinate bit by Gaussian elimination.  By
    default every PA bit in ``[6, geometry.address_bits)`` is an unknown;
    ``input_bits`` narrows that when the probes only vary some bits.
    """
    if input_bits is None:
        input_bits = list(range(LINE_BITS, geometry.address_bits))
    input_bits = sorted(input_bits)
    col_of = {p: c for c, p in enumerate(input_bits)}
    widths = [geometry.width(f) for f in FIELDS]

    def pairs():
        for pa, coord in samples:
            x = 0
            for p in range(LINE_BITS, max(geometry.address_bits, pa.bit_length())):
                if (pa >> p) & 1:
                    if p not in col_of:
                        raise ValueError(f"sample {pa:#x} sets bit {p}, which is not an input bit")
                    x |= 1 << col_of[p]
            y = 0
            shift = 0
            for v, w in zip(coord, widths):
                y |= (int(v) & ((1 << w) - 1)) << shift
                shift += w
            yield x, y

    try:
        masks = gf2.solve_many(pairs(), len(input_bits), geometry.total_bits)
    except gf2.InconsistentSystem as exc:
        raise NonLinearMapError(str(exc)) from exc
    except gf2.UnderdeterminedSystem as exc:
        raise UnderdeterminedMapError([input_bits[c] for c in exc.free_columns]) from exc

    spec = {}
    k = 0
    for name, w in zip(FIELDS, widths):
        terms = []
        for _ in range(w):
            m = masks[k]
            if not m:
                raise NonLinearMapError(f"{name} bit {len(terms)} does not depend on any address bit")
            terms.append(tuple(input_bits[c] for c in range(len(input_bits)) if (m >> c) & 1))
            k += 1
        spec[name] = terms
    return AddressMap(spec, geometry)
