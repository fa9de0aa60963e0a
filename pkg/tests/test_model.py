import math
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddos_policer.model import (
    ENTRY_PAYLOAD_BYTES,
    PACKET_SIZE,
    AdmissionError,
    FairShareError,
    FifoQueue,
    FlowEntry,
    FlowTable,
    PacketKind,
    PacketRecord,
    PolicerParams,
    admit_flow,
    admit_flows,
    format_source,
    load_allowlist,
    packets_per_period,
    parse_source,
    recompute_fair_share,
)
from ddos_policer.policer import rate_limiting_decision


def table_with(sources):
    return FlowTable(allowlist=set(sources))


def test_packet_size_is_fixed():
    assert PacketRecord(1, 0).size == PACKET_SIZE == 1500
    with pytest.raises(ValueError):
        PacketRecord(1, 0, size=64)


def test_udp_packet_needs_service_tag():
    with pytest.raises(ValueError):
        PacketRecord(1, 0, PacketKind.UDP_SERVICE)


def test_entry_payload_is_24_bytes():
    # 32-bit start, 32-bit window, two 32-bit counters, 64-bit loss rate
    assert ENTRY_PAYLOAD_BYTES == 24
    e = FlowEntry(7, period_start=123, window=96.5, received=40, dropped=3, loss_rate=0.125)
    blob = e.pack()
    assert len(blob) == 24
    back = FlowEntry.unpack(7, blob)
    assert (back.period_start, back.window, back.received, back.dropped, back.loss_rate) == (123, 96.5, 40, 3, 0.125)


def test_hundred_million_payloads_fit_in_2_4_gb():
    assert 100_000_000 * ENTRY_PAYLOAD_BYTES <= 2.4e9


def test_params_validation():
    with pytest.raises(ValueError, match="loss_weight"):
        PolicerParams(loss_weight=1.0)
    with pytest.raises(ValueError, match="loss_threshold"):
        PolicerParams(loss_threshold=0.0)
    with pytest.raises(ValueError, match="period"):
        PolicerParams(period=0)
    with pytest.raises(ValueError, match="bandwidth"):
        PolicerParams(bandwidth=-1)
    p = PolicerParams()
    assert (p.loss_weight, p.loss_threshold, p.syn_budget_fraction) == (0.5, 0.05, 0.05)
    assert p.fair_share == p.bandwidth


def test_admit_first_flow_gets_whole_bandwidth():
    t = table_with([1])
    p = PolicerParams(bandwidth=1000)
    e = admit_flow(t, 1, p, now=0)
    assert e.window == 1000 and t.window_total == 1000 and len(t) == 1
    assert (e.received, e.dropped, e.loss_rate, e.period_start) == (0, 0, 0.0, 0)


def test_tenth_flow_gets_b_over_ten():
    t = table_with(range(10))
    p = PolicerParams(bandwidth=1000)
    for s in range(9):
        admit_flow(t, s, p, 0)
    e = admit_flow(t, 9, p, 0)
    assert e.window == 100
    assert p.fair_share == 100


def test_admission_outside_allowlist_rejected():
    t = table_with([1])
    p = PolicerParams()
    with pytest.raises(AdmissionError):
        admit_flow(t, 2, p, 0)
    assert len(t) == 0 and t.window_total == 0


def test_admit_is_idempotent():
    t = table_with([1, 2])
    p = PolicerParams(bandwidth=1000)
    admit_flow(t, 1, p, 0)
    admit_flow(t, 2, p, 0)
    before = (dict((k, v.window) for k, v in t.entries.items()), t.window_total, p.fair_share)
    assert admit_flow(t, 1, p, 5) is None
    assert (dict((k, v.window) for k, v in t.entries.items()), t.window_total, p.fair_share) == before


def test_batch_admission_shares_one_fair_share():
    t = table_with(range(4))
    p = PolicerParams(bandwidth=1000)
    es = admit_flows(t, [0, 1, 2, 3, 2], p, 0)
    assert len(es) == 4
    assert all(e.window == 250 for e in es)
    assert t.window_total == 1000


@pytest.mark.parametrize("n,expected", [(1, 1000), (4, 250)])
def test_recompute_fair_share(n, expected):
    t = table_with(range(n))
    p = PolicerParams(bandwidth=1000)
    for s in range(n):
        admit_flow(t, s, p, 0)
    assert recompute_fair_share(t, p) == expected


def test_fair_share_undefined_for_empty_table():
    with pytest.raises(FairShareError):
        recompute_fair_share(FlowTable(), PolicerParams())


def test_ten_gbps_five_second_period():
    b = packets_per_period(10e9, 5.0)
    assert b == math.floor(10e9 * 5 / (1500 * 8)) == 4_166_666
    assert b / 600_000 == pytest.approx(6.94, abs=0.005)


def test_fair_share_times_n_within_b_plus_n():
    t = table_with(range(7))
    p = PolicerParams(bandwidth=1000)
    for s in range(7):
        admit_flow(t, s, p, 0)
        assert p.fair_share * len(t) <= p.bandwidth + len(t)


def test_remove_and_eviction_update_totals():
    t = table_with(range(3))
    p = PolicerParams(bandwidth=900, period=10, idle_eviction_periods=2)
    for s in range(3):
        admit_flow(t, s, p, 0)
    t.entries[0].period_start = 100
    stale = t.evict_idle(100, p)
    assert sorted(stale) == [1, 2]
    assert len(t) == 1 and p.fair_share == 900
    assert t.window_total == pytest.approx(t.resum())
    t.remove(0)
    assert t.window_total == 0.0


def test_eviction_disabled():
    t = table_with([1])
    p = PolicerParams(idle_eviction_periods=None)
    admit_flow(t, 1, p, 0)
    assert t.evict_idle(10**9, p) == [] and len(t) == 1


@pytest.mark.parametrize("text,value", [("10.0.0.1", 0x0A000001), ("167772161", 167772161), (" 0 ", 0)])
def test_parse_source(text, value):
    assert parse_source(text) == value


@pytest.mark.parametrize("bad", ["10.0.0.256", "4294967296", "host", ""])
def test_parse_source_rejects(bad):
    with pytest.raises(ValueError):
        parse_source(bad)


def test_allowlist_file(tmp_path):
    path = tmp_path / "allow.txt"
    path.write_text("# victims' known clients\n10.0.0.1\n\n167772162  # by integer\n  10.0.0.3\n")
    assert load_allowlist(path) == {0x0A000001, 0x0A000002, 0x0A000003}
    assert format_source(0x0A000003) == "10.0.0.3"


def test_allowlist_file_reports_line(tmp_path):
    path = tmp_path / "allow.txt"
    path.write_text("10.0.0.1\nnot-an-address\n")
    with pytest.raises(ValueError, match=":2:"):
        load_allowlist(path)


def test_fifo_queue_runs_and_order():
    q = FifoQueue(5)
    assert q.push(1, 2, 0) == 2
    assert q.push(1, 1, 0) == 1  # merges into the same run
    assert q.push(2, 4, 1) == 2
    assert (q.occupancy, q.accepted, q.dropped, len(q.runs)) == (5, 5, 2, 2)
    assert q.pop(4) == [(1, 3), (2, 1)]
    assert q.occupancy == 1
    assert [p.source for p in q.pop_packets(9)] == [2]


@st.composite
def table_ops(draw):
    return draw(st.lists(
        st.tuples(st.sampled_from(["admit", "decide", "remove", "set"]), st.integers(0, 49),
                  st.integers(0, 400), st.integers(0, 400), st.floats(0, 5000, allow_nan=False)),
        min_size=1, max_size=400,
    ))


@settings(max_examples=60, deadline=None)
@given(table_ops())
def test_window_total_matches_resum(ops):
    t = table_with(range(50))
    p = PolicerParams(bandwidth=10_000)
    for op, src, recv, drop, w in ops:
        e = t.entries.get(src)
        if op == "admit":
            admit_flow(t, src, p, 0)
        elif e is None:
            continue
        elif op == "decide":
            e.received, e.dropped = recv, min(drop, recv)
            rate_limiting_decision(e, t, p)
        elif op == "remove":
            t.remove(src, p)
        else:
            t.set_window(e, w)
        assert t.window_total == pytest.approx(t.resum(), rel=1e-9, abs=1e-6)


def test_window_total_after_1e5_operations():
    import random

    rng = random.Random(5)
    t = table_with(range(500))
    p = PolicerParams(bandwidth=123_456.0)
    for _ in range(100_000):
        src = rng.randrange(500)
        e = t.entries.get(src)
        r = rng.random()
        if e is None or r < 0.05:
            admit_flow(t, src, p, 0)
        elif r < 0.9:
            e.received = rng.randrange(0, 2000)
            e.dropped = rng.randrange(0, e.received + 1)
            rate_limiting_decision(e, t, p)
        elif r < 0.95:
            t.set_window(e, rng.uniform(0, 5000))
        else:
            t.remove(src, p)
    assert len(t) == len(t.entries)
    assert set(t.entries) <= t.allowlist
    assert t.window_total == pytest.approx(t.resum(), rel=1e-9)


def test_pack_clamps_counters():
    e = FlowEntry(1, received=2**40)
    start, w, recv, drop, loss = struct.unpack("<IfIId", e.pack())
    assert recv == 0xFFFFFFFF
