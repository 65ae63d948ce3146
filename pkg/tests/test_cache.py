import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memsnoop.cache import Cache, CacheConfig, set_index, simulate_epc_swap
from memsnoop.events import EventStream, Origin


class ReferenceCache:
    """Dictionary of sets, each a plain list in LRU order; no shared code with Cache."""

    def __init__(self, sets, ways):
        self.sets, self.ways = sets, ways
        self.state = {}
        self.writebacks = []

    def access(self, pa, write):
        line = pa // 64
        s = self.state.setdefault(line % self.sets, [])
        for k, (l, d) in enumerate(s):
            if l == line:
                s.pop(k)
                s.append((line, d or write))
                return True
        if len(s) == self.ways:
            l, d = s.pop(0)
            if d:
                self.writebacks.append(l * 64)
        s.append((line, write))
        return False


def stream(pas, writes=None):
    n = len(pas)
    pas = np.asarray(pas, np.int64)
    w = np.zeros(n, bool) if writes is None else np.asarray(writes, bool)
    return EventStream(np.arange(n, dtype=np.int64), pas, np.full(n, -1, np.int64), w,
                       np.zeros(n, np.int8), np.full(n, -1, np.int64))


def random_trace(seed, n, sets, lines_per_set):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, sets, n)
    tag = rng.integers(0, lines_per_set, n)
    return (tag * sets + s) * 64, rng.random(n) < 0.3


def test_hit_miss_sequence_equals_reference_1e5():
    sets, ways = 128, 8
    pas, w = random_trace(0, 100_000, sets, 12)
    c = Cache(CacheConfig(sets=sets, ways=ways))
    run = c.simulate(stream(pas, w))
    ref = ReferenceCache(sets, ways)
    expect = [ref.access(int(p), bool(x)) for p, x in zip(pas, w)]
    assert run.hits.tolist() == expect
    assert run.address[run.is_write].tolist() == ref.writebacks


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), ways=st.integers(1, 6))
def test_reference_property(seed, ways):
    pas, w = random_trace(seed, 2000, 128, 2 * ways + 1)
    run = Cache(CacheConfig(sets=128, ways=ways)).simulate(stream(pas, w))
    ref = ReferenceCache(128, ways)
    assert run.hits.tolist() == [ref.access(int(p), bool(x)) for p, x in zip(pas, w)]


def test_w_lines_fit():
    W, sets = 12, 2048
    lines = [(k * sets + 5) * 64 for k in range(W)]
    c = Cache(CacheConfig(ways=W))
    for pa in lines:
        assert not c.access(pa).hit
    assert c.access(lines[0]).hit


def test_w_plus_one_evicts_lru():
    W, sets = 12, 2048
    lines = [(k * sets + 5) * 64 for k in range(W + 1)]
    c = Cache(CacheConfig(ways=W))
    for pa in lines:
        c.access(pa)
    assert not c.access(lines[0]).hit


def test_dirty_eviction_writes_back():
    c = Cache(CacheConfig(sets=128, ways=1))
    c.access(0x40, is_write=True)
    out = c.access(0x40 + 128 * 64)
    assert out.writeback == 0x40 and out.fill == 0x40 + 128 * 64


@settings(max_examples=50)
@given(pa=st.integers(0, 2 ** 40))
def test_set_index(pa):
    assert set_index(pa) == (pa >> 6) % 2048
    c = Cache(CacheConfig(sets=256, ways=2))
    c.access(pa & ~63)
    assert c.set_contents(set_index(pa, 256)) == [(pa & ~63, False)]


def test_spatial_buddy():
    c = Cache(CacheConfig(prefetch_spatial_128=True))
    assert c.run_prefetchers(0x1000) == [0x1040]
    assert c.run_prefetchers(0x1040) == [0x1000]


def test_next_line_adds_reads():
    pas = [k * 128 for k in range(2000)]
    off = Cache(CacheConfig()).simulate(stream(pas))
    on = Cache(CacheConfig(prefetch_next_line=True)).simulate(stream(pas))
    assert (~on.is_write).sum() > (~off.is_write).sum()


def test_stream_prefetcher_runs_ahead():
    c = Cache(CacheConfig(prefetch_stream=True))
    got = [c.run_prefetchers(0x10000 + k * 64) for k in range(4)]
    assert got[0] == [] and got[1] == []
    assert got[2][0] == 0x10000 + 3 * 64 and len(got[2]) == 20


def test_prefetches_marked_and_limited_to_victim_events():
    ev = stream([0x1000, 0x2000])
    ev.origin[1] = int(Origin.PRIMER)
    run = Cache(CacheConfig(prefetch_spatial_128=True)).simulate(ev)
    assert run.address.tolist() == [0x1000, 0x1040, 0x2000]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fewer_ways_never_fewer_misses(seed):
    pas, w = random_trace(seed, 20_000, 128, 10)
    misses = []
    for W in range(1, 9):
        run = Cache(CacheConfig(sets=128, ways=W)).simulate(stream(pas, w))
        misses.append(int((~run.hits).sum()))
    assert all(a >= b for a, b in zip(misses, misses[1:]))


def test_dirty_line_conservation():
    sets, ways = 128, 2
    pas, w = random_trace(9, 20_000, sets, 6)
    c = Cache(CacheConfig(sets=sets, ways=ways))
    run = c.simulate(stream(pas, w))
    # a residency turns dirty at most once; count those with the reference model
    ref = ReferenceCache(sets, ways)
    dirtied = 0
    for p, x in zip(pas.tolist(), w.tolist()):
        s = ref.state.get((p // 64) % sets, [])
        was = next((d for l, d in s if l == p // 64), False)
        ref.access(p, x)
        dirtied += x and not was
    still_dirty = sum(d for k in range(sets) for _, d in c.set_contents(k))
    assert int(run.is_write.sum()) == len(ref.writebacks)
    assert int(run.is_write.sum()) + still_dirty == dirtied


def test_debug_dump_format():
    buf = io.StringIO()
    Cache(CacheConfig()).simulate(stream([0x40, 0x40], [True, False]), debug=buf)
    assert buf.getvalue().splitlines() == ["0,MISS,victim,w,0x40,1", "1,HIT,victim,r,0x40,1"]


def test_swap_in_fills_page_then_hits():
    c = Cache(CacheConfig())
    res = simulate_epc_swap(c, 0x40000, "in")
    assert res.fills == 64 and len(res.events) == 64
    assert all(c.access(0x40000 + k * 64).hit for k in range(64))


def test_swap_out_dirties_page():
    c = Cache(CacheConfig())
    res = simulate_epc_swap(c, 0x40000, "out")
    assert res.fills == 64 and len(res.events) == 128
    assert all(c.is_dirty(0x40000 + k * 64) for k in range(64))


def test_swap_rejects_unaligned():
    with pytest.raises(ValueError):
        simulate_epc_swap(Cache(), 0x40040, "in")


def test_config_validation():
    with pytest.raises(ValueError):
        CacheConfig(sets=100)
    with pytest.raises(ValueError):
        CacheConfig(ways=0)
