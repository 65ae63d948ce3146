import io
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memsnoop.dram import (AddressMap, CapacityError, CommandKind, Geometry, UnderdeterminedMapError,
                           NonLinearMapError, decode_commands, encode_requests, infer_address_map,
                           random_address_map, read_command_log, write_command_log)

DATA = Path(__file__).parent / "data"
AMAP = AddressMap.default()


def pa_of(amap, rank=0, bg=0, bank=0, row=0, col=0):
    return amap.to_physical((rank, bg, bank, row, col))


def kinds(log):
    return [CommandKind(k).name for k in log.kind.tolist()]


def test_row_hit_emits_one_activate():
    reqs = [(0, pa_of(AMAP, row=5, col=1), False), (10, pa_of(AMAP, row=5, col=2), False)]
    assert kinds(encode_requests(reqs, AMAP)) == ["ACTIVATE", "READ", "READ"]


def test_row_conflict_precharges():
    reqs = [(0, pa_of(AMAP, row=5), False), (10, pa_of(AMAP, row=6), False)]
    log = encode_requests(reqs, AMAP)
    assert kinds(log) == ["ACTIVATE", "READ", "PRECHARGE", "ACTIVATE", "READ"]
    bus = decode_commands(log, AMAP)
    assert [(int(a), bool(w)) for a, w in zip(bus.address, bus.is_write)] == [(r[1], False) for r in reqs]


def test_three_access_round_trip_random_map():
    amap = random_address_map(np.random.default_rng(3))
    reqs = [(0, 0x1240, False), (4, 0x1_7000_0040, True), (9, 0x1234_5680, False)]
    bus = decode_commands(encode_requests(reqs, amap), amap)
    assert bus.address.tolist() == [r[1] for r in reqs]
    assert bus.is_write.tolist() == [False, True, False]


def test_empty_log():
    log = encode_requests([], AMAP)
    assert len(log) == 0 and len(decode_commands(log, AMAP)) == 0


def test_capacity_error():
    with pytest.raises(CapacityError):
        encode_requests([(0, AMAP.geometry.capacity, False)], AMAP)


def test_unaligned_request_rejected():
    with pytest.raises(ValueError):
        encode_requests([(0, 0x1001, False)], AMAP)


def test_column_without_active_row_is_undecodable():
    log = encode_requests([(0, 0x40, False), (3, 0x80, False)], AMAP)
    tail = type(log)(*(getattr(log, f)[1:] for f in ("timestamp", "kind", "rank", "bank_group", "bank", "value")))
    bus = decode_commands(tail, AMAP)
    assert bus.undecodable == 2 and len(bus) == 0


def test_timestamps_non_decreasing_and_never_early():
    rng = np.random.default_rng(0)
    ts = np.sort(rng.integers(0, 5000, 2000))
    pas = rng.integers(0, 1 << 27, 2000) << 6
    log = encode_requests((ts, pas, np.zeros(2000, bool)), AMAP)
    assert np.all(np.diff(log.timestamp) >= 1)
    bus = decode_commands(log, AMAP)
    assert np.all(bus.timestamp >= ts)


def reference_activates(amap, pas):
    """One pass, dictionary of open rows per bank."""
    open_row = {}
    n = 0
    for pa in pas:
        c = amap.to_dram(int(pa))
        b = (c.rank, c.bank_group, c.bank)
        if open_row.get(b) != c.row:
            n += 1
            open_row[b] = c.row
    return n


def test_activate_count_matches_reference():
    rng = np.random.default_rng(1)
    # few rows so that hits and conflicts both occur
    pas = [pa_of(AMAP, bg=int(rng.integers(4)), bank=int(rng.integers(4)), row=int(rng.integers(3)),
                 col=int(rng.integers(128))) for _ in range(3000)]
    log = encode_requests([(i, p, False) for i, p in enumerate(pas)], AMAP)
    assert log.counts()["ACTIVATE"] == reference_activates(AMAP, pas)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 400))
def test_round_trip_property(seed, n):
    rng = np.random.default_rng(seed)
    amap = random_address_map(rng)
    ts = np.sort(rng.integers(0, 10 * n, n))
    pas = rng.integers(0, amap.geometry.capacity >> 6, n) << 6
    w = rng.random(n) < 0.3
    bus = decode_commands(encode_requests((ts, pas, w), amap), amap)
    assert np.array_equal(bus.address, pas) and np.array_equal(bus.is_write, w)


def test_round_trip_10k_random_map():
    rng = np.random.default_rng(10)
    amap = random_address_map(rng, folds=30)
    n = 10_000
    pas = rng.integers(0, amap.geometry.capacity >> 6, n) << 6
    w = rng.random(n) < 0.5
    bus = decode_commands(encode_requests((np.arange(n) * 2, pas, w), amap), amap)
    assert np.array_equal(bus.address, pas) and np.array_equal(bus.is_write, w)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), a=st.integers(0, (1 << 27) - 1), b=st.integers(0, (1 << 27) - 1))
def test_linearity(seed, a, b):
    amap = random_address_map(np.random.default_rng(seed))
    fa, fb, f0, fab = (amap.to_dram(x << 6) for x in (a, b, 0, a ^ b))
    assert all(x ^ y ^ z == w for x, y, z, w in zip(fa, fb, f0, fab))


def test_array_forms_agree_with_scalar():
    rng = np.random.default_rng(5)
    amap = random_address_map(rng)
    pas = rng.integers(0, 1 << 27, 200) << 6
    coords = amap.to_dram_array(pas)
    assert [tuple(c) for c in coords.tolist()] == [tuple(amap.to_dram(int(p))) for p in pas]
    assert np.array_equal(amap.to_physical_array(coords), pas)


def samples_from(amap, pas):
    return [(int(p), tuple(amap.to_dram(int(p)))) for p in pas]


def identity_map():
    spec, pos = {}, 6
    for name in ("column", "bank_group", "bank", "row"):
        w = Geometry().width(name)
        spec[name] = [(pos + i,) for i in range(w)]
        pos += w
    spec["rank"] = []
    return AddressMap(spec)


def test_infer_identity_map():
    amap = identity_map()
    rng = np.random.default_rng(0)
    pas = [1 << b for b in range(6, 33)] + (rng.integers(0, 1 << 27, 50) << 6).tolist()
    assert infer_address_map(samples_from(amap, pas)) == amap


def test_infer_planted_bank_xor():
    text = AMAP.to_text().replace("bank[0] = 15 ^ 19", "bank[0] = 14 ^ 18").replace(
        "bank_group[1] = 14 ^ 18", "bank_group[1] = 15 ^ 19")
    planted = AddressMap.from_text(text)
    assert planted.is_bijective
    rng = np.random.default_rng(7)
    pas = rng.integers(0, 1 << 27, 256) << 6
    got = infer_address_map(samples_from(planted, pas))
    assert got.bits["bank"][0] == (14, 18)
    assert got == planted


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_infer_recovers_random_maps(seed):
    rng = np.random.default_rng(seed)
    amap = random_address_map(rng, folds=20)
    pas = rng.integers(0, 1 << 27, 120) << 6
    assert infer_address_map(samples_from(amap, pas)) == amap


def test_infer_underdetermined():
    pas = [0x40, 0x1000, 0x80000]
    with pytest.raises(UnderdeterminedMapError) as e:
        infer_address_map(samples_from(AMAP, pas))
    assert len(e.value.unresolved) == 27 - 3


def test_infer_nonlinear():
    rng = np.random.default_rng(2)
    pas = (rng.integers(0, 1 << 27, 80) << 6).tolist()
    s = samples_from(AMAP, pas)
    pa, c = s[10]
    s[10] = (pa, (c[0], c[1], c[2] ^ 1, c[3], c[4]))
    with pytest.raises(NonLinearMapError):
        infer_address_map(s)


def test_default_map_is_bijective_and_page_stays_in_row():
    assert AMAP.is_bijective
    rows = {AMAP.to_dram(0x12345000 + k * 64).row for k in range(64)}
    assert len(rows) == 1


def test_map_text_round_trip_and_golden():
    assert AddressMap.from_text(AMAP.to_text()) == AMAP
    assert AMAP.to_text() == (DATA / "default_map.golden.txt").read_text()


def golden_requests():
    return [(0, pa_of(AMAP, row=1, col=0), False), (1, pa_of(AMAP, row=1, col=5), True),
            (2, pa_of(AMAP, bg=2, bank=1, row=9, col=3), False), (50, pa_of(AMAP, row=2, col=7), False),
            (51, pa_of(AMAP, row=1, col=1), True)]


def test_command_log_golden():
    log = encode_requests(golden_requests(), AMAP)
    buf = io.StringIO()
    write_command_log(log, buf)
    assert buf.getvalue() == (DATA / "commands.golden.log").read_text()
    back = read_command_log(io.StringIO(buf.getvalue()))
    for f in ("timestamp", "kind", "rank", "bank_group", "bank", "value"):
        assert np.array_equal(getattr(back, f), getattr(log, f))


def test_command_log_rejects_garbage():
    with pytest.raises(ValueError):
        read_command_log(io.StringIO("12,FLY,0,0,0,1\n"))


def test_reorder_window_keeps_request_set():
    rng = np.random.default_rng(4)
    n = 500
    ts = np.arange(n) * 3
    pas = rng.integers(0, 1 << 27, n) << 6
    log = encode_requests((ts, pas, np.zeros(n, bool)), AMAP, reorder_window=32, rng=rng)
    bus = decode_commands(log, AMAP)
    assert sorted(bus.address.tolist()) == sorted(pas.tolist())
    assert bus.address.tolist() != pas.tolist()
