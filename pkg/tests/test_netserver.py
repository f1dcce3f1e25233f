import itertools

import pytest

from lorasec.core import TxParams, airtime, default_plan, seconds
from lorasec.gateway import Gateway, GatewayConfig, ServerMessage
from lorasec.netserver import AdrPolicy, NetworkServer, OverloadPolicy
from lorasec.radio import FrameKind, MacFields, PhyFrame

F = 868_100_000
ids = itertools.count(100)


def new_id():
    return next(ids)


def server(gws=("a", "b"), **kw):
    plan = default_plan()
    return NetworkServer(plan, {g: Gateway(GatewayConfig(g, (0, 0)), plan) for g in gws}, **kw)


def uplink(fid, fcnt=0, confirmed=True, sf=7, devaddr="addr-d", start=0, adr_bit=True, kind=FrameKind.UPLINK_DATA,
           devnonce=None, valid=True):
    p = TxParams(sf=sf, payload_len=29)
    mac = MacFields(dev_id="d", devaddr=devaddr, fcnt=fcnt, msg_type="status", adr_bit=adr_bit, first_emission=start,
                    devnonce=devnonce, valid_keys=valid)
    return PhyFrame(fid, "d", F, p, start, airtime(p), kind, confirmed=confirmed, mac=mac)


def deliver(ns, frame, snrs={"a": 5.0}):
    first = [ns.receive(ServerMessage(frame, g, -100.0, snr, frame.end, frame.end)) for g, snr in snrs.items()]
    assert first[0] and not any(first[1:])
    return ns.process(frame.id, frame.end + ns.dedup_window_us, new_id)


def test_dedup_and_best_gateway():
    ns = server()
    ns.register_abp("d", "addr-d")
    f = uplink(1)
    dls, events, _ = deliver(ns, f, {"a": 1.0, "b": 7.0})
    up = [e for e in events if e.kind == "DATA_UP_CNF"]
    assert len(up) == 1 and up[0].gw == "b" and up[0].extra["gws"] == 2 and up[0].extra["gw_set"] == "a+b"
    assert len(dls) == 1 and dls[0].emitter == "b" and dls[0].mac.ack
    # a late copy after processing is dropped
    assert not ns.receive(ServerMessage(f, "a", -100.0, 1.0, f.end, f.end))


def test_rx1_timing_and_rx2_fallback():
    ns = server(gws=("a",))
    ns.register_abp("d", "addr-d")
    f = uplink(1)
    dls, _, _ = deliver(ns, f)
    assert dls[0].start == f.end + seconds(1) and dls[0].mac.target_window == "rx1"
    # RX1 sub-band is now in off-time; the next ACK goes out in RX2
    f2 = uplink(2, fcnt=1, start=f.end + seconds(3))
    dls, _, _ = deliver(ns, f2)
    assert dls[0].mac.target_window == "rx2" and dls[0].frequency_hz == 869_525_000 and dls[0].sf == 12


def test_fallback_to_second_gateway():
    ns = server()
    ns.register_abp("d", "addr-d")
    f = uplink(1)
    deliver(ns, f, {"b": 9.0})  # b spends its RX1 budget
    f2 = uplink(2, fcnt=1, start=f.end + seconds(3))
    dls, _, _ = deliver(ns, f2, {"b": 9.0, "a": 1.0})
    assert dls[0].emitter == "a" and dls[0].mac.target_window == "rx1"


def test_rx2_preference():
    ns = server(gws=("a",))
    ns.register_abp("d", "addr-d", rx2_preference=True)
    dls, _, _ = deliver(ns, uplink(1))
    assert dls[0].mac.target_window == "rx2"


def test_unconfirmed_gets_no_downlink():
    ns = server()
    ns.register_abp("d", "addr-d")
    dls, events, _ = deliver(ns, uplink(1, confirmed=False))
    assert dls == [] and events[0].kind == "DATA_UP"


def test_replay_and_retransmission():
    ns = server()
    ns.register_abp("d", "addr-d")
    deliver(ns, uplink(1, fcnt=5))
    _, events, _ = deliver(ns, uplink(2, fcnt=5, start=seconds(10)))
    assert events[0].kind == "DATA_UP_CNF" and events[0].extra["retx"] == 1
    _, events, _ = deliver(ns, uplink(3, fcnt=4, start=seconds(20)))
    assert [e.kind for e in events] == ["REPLAY_REJECTED"]


def test_counter_reset_accepted_without_persistence():
    ns = server()
    ns.register_abp("d", "addr-d", counter_persistence=False)
    deliver(ns, uplink(1, fcnt=5))
    _, events, _ = deliver(ns, uplink(2, fcnt=0, start=seconds(10)))
    assert events[0].kind == "DATA_UP_CNF"


def test_unknown_device():
    ns = server()
    _, events, _ = deliver(ns, uplink(1, devaddr="nobody"))
    assert events[0].kind == "UNKNOWN_DEVICE"


def _adr_run(policy, n, snr=20.0, sf=12):
    ns = server(gws=("a",), adr=policy)
    s = ns.register_abp("d", "addr-d", dr=0)
    out = []
    for k in range(n):
        dls, events, _ = deliver(ns, uplink(k + 1, fcnt=k, confirmed=False, sf=sf, start=seconds(600 * k)), {"a": snr})
        out.append([d.mac.adr_dr for d in dls])
    return ns, s, out


def test_adr_default_waits_for_history():
    _, _, out = _adr_run(AdrPolicy.preset("default"), 12)
    assert out[:11] == [[]] * 11 and out[11] == [5]


def test_adr_clamps_to_policy():
    _, _, out = _adr_run(AdrPolicy.preset("limited"), 6, snr=-15.0)
    assert out[5] == [3]  # poor link, but never below DR3
    _, _, out = _adr_run(AdrPolicy("default", 1, 0, 4), 1, snr=30.0)
    assert out[0] == [4]


def test_adr_decision_by_margin():
    ns = server()
    s = ns.register_abp("d", "addr-d", dr=0)
    s.snr_history.extend([-2.0])
    assert ns.adr_decide(s, AdrPolicy()) == 3  # SF9 floor -12.5 + 10 dB margin <= -2, SF8 needs 0
    s.snr_history.clear()
    assert ns.adr_decide(s, AdrPolicy()) is None


def test_fixed_adr_early_offer_on_first_ack():
    ns = server(gws=("a",), adr=AdrPolicy.preset("fixed"))
    ns.register_abp("d", "addr-d", dr=0)
    dls, events, _ = deliver(ns, uplink(1, sf=12))
    assert dls[0].mac.ack and dls[0].mac.adr_dr == 5
    # offered once only
    dls, _, _ = deliver(ns, uplink(2, fcnt=1, sf=12, start=seconds(600)))
    assert dls[0].mac.adr_dr is None


def test_adr_bit_off_means_no_command():
    _, s, out = _adr_run(AdrPolicy.preset("fixed_plus"), 1)
    assert out == [[5]]
    ns = server(gws=("a",), adr=AdrPolicy.preset("fixed_plus"))
    ns.register_abp("d", "addr-d", dr=0)
    dls, _, _ = deliver(ns, uplink(1, sf=12, confirmed=False, adr_bit=False))
    assert dls == []


def join(fid, devnonce, valid=True, start=0):
    return uplink(fid, kind=FrameKind.JOIN_REQUEST, devnonce=devnonce, valid=valid, devaddr=None, confirmed=False,
                  start=start)


def test_join_accept_and_devnonce_replay():
    ns = server()
    ns.register_otaa("d")
    f = join(1, 77)
    dls, events, _ = deliver(ns, f)
    assert events[0].kind == "JOIN_REQUEST"
    assert dls[0].kind is FrameKind.JOIN_ACCEPT and dls[0].start == f.end + seconds(5)
    addr = dls[0].mac.devaddr
    _, events, _ = deliver(ns, join(2, 77, start=seconds(30)))
    assert events[0].kind == "JOIN_IGNORED" and events[0].extra["cause"] == "devnonce-replay"
    dls, _, _ = deliver(ns, join(3, 78, start=seconds(60)))
    assert dls[0].mac.devaddr != addr and addr not in ns.by_addr


def test_join_with_bad_keys_ignored():
    ns = server()
    ns.register_otaa("d")
    dls, events, _ = deliver(ns, join(1, 1, valid=False))
    assert dls == [] and events[0].extra["cause"] == "credentials"


def test_overload_disables_gateway():
    ns = server(gws=("a",), overload=OverloadPolicy(enabled=True, threshold_per_s=0.5, window_s=10.0))
    ns.register_otaa("d")
    disabled = []
    for k in range(7):
        _, _, dis = deliver(ns, join(k + 1, k, start=seconds(1.2 * k)))
        for gid in dis:
            ns.gateways[gid].disable(0)  # the engine's job
        disabled += dis
    assert disabled == ["a"]
    assert sum(e.kind == "GW_DISABLED" for e in ns.events) == 1


def test_policy_validation():
    with pytest.raises(ValueError):
        AdrPolicy(mode="greedy")
    with pytest.raises(ValueError):
        AdrPolicy(dr_min=4, dr_max=3)
    with pytest.raises(ValueError):
        OverloadPolicy(threshold_per_s=0)
    with pytest.raises(ValueError):
        server().ingest_uplink([])
