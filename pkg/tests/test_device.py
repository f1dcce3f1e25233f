import itertools
import random

import pytest

from lorasec.core import LORAWAN_OVERHEAD, default_plan, seconds
from lorasec.device import BOOT, STATUS, DefectFlags, DeviceProfile, EndDevice
from lorasec.radio import FrameKind, MacFields, PhyFrame
from lorasec.core import JOIN_ACCEPT_LEN, TxParams, airtime


def make(activation="abp", **kw):
    return EndDevice("d", default_plan(), random.Random(1), activation=activation, **kw)


ids = itertools.count(1)


def new_id():
    return next(ids)


def downlink(dev, uplink, window="rx1", ack=True, adr=None, fcnt=0, kind=FrameKind.DOWNLINK_DATA):
    w = dev.windows
    freq, dr, at = (w.rx1_frequency_hz, w.rx1_dr, w.rx1_at) if window == "rx1" else (w.rx2_frequency_hz, w.rx2_dr, w.rx2_at)
    p = TxParams(sf=12 - dr, payload_len=JOIN_ACCEPT_LEN if kind is FrameKind.JOIN_ACCEPT else 13)
    mac = MacFields(dev_id=dev.id, devaddr=dev.devaddr if kind is FrameKind.DOWNLINK_DATA else "addr-1", fcnt=fcnt,
                    ack=ack, adr_dr=adr, target_window=window)
    return PhyFrame(new_id(), "gw", freq, p, at, airtime(p), kind, mac=mac)


def test_abp_boot_is_first_and_confirmed():
    dev = make()
    dev.power_on(0)
    f = dev.next_action(0, new_id)
    assert isinstance(f, PhyFrame)
    assert f.kind is FrameKind.UPLINK_DATA and f.mac.msg_type == BOOT and f.confirmed
    assert f.params.payload_len == DeviceProfile().boot_len + LORAWAN_OVERHEAD
    assert f.frequency_hz in {868_100_000, 868_300_000, 868_500_000} or 867_000_000 <= f.frequency_hz < 868_000_000
    assert dev.next_action(0, new_id) is None  # busy until windows close


def test_windows_follow_uplink():
    dev = make()
    dev.power_on(0)
    f = dev.next_action(0, new_id)
    w = dev.rx_window_listen(f)
    assert w.rx1_at == f.end + seconds(1) and w.rx2_at == f.end + seconds(2)
    assert w.rx1_frequency_hz == f.frequency_hz and w.rx1_dr == 5
    assert w.rx2_frequency_hz == 869_525_000 and w.rx2_dr == 0
    assert w.expects(f.frequency_hz, 7, w.rx1_at) == "rx1"
    assert w.expects(869_525_000, 12, w.rx2_at) == "rx2"
    assert w.expects(869_525_000, 12, w.rx2_at + 1) is None


def test_ack_clears_pending_and_reports_rtt():
    dev = make()
    dev.power_on(0)
    f = dev.next_action(0, new_id)
    dev.rx_window_listen(f)
    d = downlink(dev, f)
    events = dev.on_downlink(d, d.end)
    assert [e.kind for e in events] == ["ack"]
    assert events[0].data["rtt_us"] == d.end - f.start
    assert dev.pending is None


def test_unacked_confirmed_retries_then_abandons():
    dev = make(max_retries=2)
    dev.power_on(0)
    t = 0
    kinds = []
    for _ in range(3):
        f = dev.next_action(t, new_id)
        while not isinstance(f, PhyFrame):
            t = f
            f = dev.next_action(t, new_id)
        w = dev.rx_window_listen(f)
        t, events = dev.retransmission_tick(w.close_at)
        kinds += [e.kind for e in events]
    assert dev.retransmissions == 2
    assert kinds == ["abandoned"]


def test_duty_cycle_delays_uplinks():
    dev = make(enabled_channels=[0])
    dev.power_on(0)
    dev.enqueue(STATUS, 0)
    first = dev.next_action(0, new_id)
    dev.pending = None
    dev.busy = False
    nxt = dev.next_action(first.end, new_id)
    assert nxt == first.start + 100 * first.air


def test_ignore_ack_and_adr_defect():
    dev = make(defects=DefectFlags(ignore_ack_and_adr=True))
    dev.power_on(0)
    f = dev.next_action(0, new_id)
    dev.rx_window_listen(f)
    events = dev.on_downlink(downlink(dev, f, adr=3), f.end + seconds(1))
    assert [e.kind for e in events] == ["ack-ignored", "adr-ignored"]
    assert dev.dr == 5
    _, events = dev.retransmission_tick(f.end + seconds(3))
    assert [e.kind for e in events] == ["sent"] and dev.retransmissions == 0


def test_adr_applied():
    dev = make()
    dev.power_on(0)
    f = dev.next_action(0, new_id)
    dev.rx_window_listen(f)
    events = dev.on_downlink(downlink(dev, f, adr=2), f.end + seconds(1))
    assert [e.kind for e in events] == ["ack", "adr-applied"] and dev.dr == 2


def test_stale_downlink_counter_ignored():
    dev = make()
    dev.power_on(0)
    f = dev.next_action(0, new_id)
    dev.rx_window_listen(f)
    dev.fcnt_down = 4
    assert dev.on_downlink(downlink(dev, f, fcnt=4), f.end + seconds(1)) == []


def test_otaa_join_then_boot():
    dev = make("otaa", defects=DefectFlags(reset_dr0_after_join=True))
    dev.power_on(0)
    j = dev.next_action(0, new_id)
    assert j.kind is FrameKind.JOIN_REQUEST and j.frequency_hz in (868_100_000, 868_300_000, 868_500_000)
    w = dev.rx_window_listen(j)
    assert w.rx1_at == j.end + seconds(5) and w.join
    acc = downlink(dev, j, kind=FrameKind.JOIN_ACCEPT)
    events = dev.on_downlink(acc, acc.end)
    assert events[0].kind == "joined" and events[0].data == {"join_dr": 5, "data_dr": 0}
    assert dev.devaddr == "addr-1"
    f = dev.next_action(acc.end, new_id)
    assert f.mac.msg_type == BOOT and f.sf == 12


def test_join_backoff_spacing():
    dev = make("otaa")
    dev.power_on(0)
    j = dev.next_action(0, new_id)
    w = dev.rx_window_listen(j)
    t, _ = dev.retransmission_tick(w.close_at)
    assert dev.join_allowed_at == j.start + 100 * j.air  # 1% aggregate in the first hour
    allowed = dev.join_allowed_at
    assert dev.next_action(j.end, new_id) == max(dev.retry_at, allowed)
    again = dev.next_action(t, new_id)
    assert again.start >= allowed
    assert dev.join_allowed_at == again.start + 100 * again.air


def test_join_duty_schedule():
    dev = make("otaa")
    dev.power_on(0)
    assert dev.join_duty(seconds(10)) == 0.01
    assert dev.join_duty(seconds(5 * 3600)) == 0.001
    assert dev.join_duty(seconds(12 * 3600)) == 0.0001


def test_join_burst_defect():
    plain = make("otaa")
    plain.power_on(0)
    assert plain.join_burst_time(plain.next_action(0, new_id)) is None
    dev = make("otaa", defects=DefectFlags(join_backoff_violation=True))
    dev.power_on(0)
    j = dev.next_action(0, new_id)
    at = dev.join_burst_time(j)
    assert j.end < at < j.start + seconds(1) + 1
    second = dev.start_join_burst(at, new_id)
    assert second is not None and second.start == at and second.mac.devnonce != j.mac.devnonce


def test_power_off_abandons_pending():
    dev = make()
    dev.power_on(0)
    dev.enqueue(STATUS, 0)
    dev.next_action(0, new_id)
    kinds = [e.kind for e in dev.power_off(10)]
    assert kinds == ["power-off", "abandoned", "dropped"]
    assert not dev.enqueue(STATUS, 20)
    with pytest.raises(RuntimeError):
        dev.power_on(30)
        dev.power_on(40)


def test_device_validation():
    with pytest.raises(ValueError):
        make(activation="psk")
    with pytest.raises(ValueError):
        make(tx_power_dbm=20)
    with pytest.raises(ValueError):
        DeviceProfile(status_period_min=0)
    with pytest.raises(ValueError):
        DeviceProfile(status_len=60)


def test_oversized_payload_at_dr0():
    dev = make(profile=DeviceProfile(boot_len=51))
    dev.dr = 0
    dev.power_on(0)
    dev.dr = 0
    assert isinstance(dev.next_action(0, new_id), PhyFrame)
    dev2 = make()
    dev2.power_on(0)
    dev2.pending = None
    dev2.queue.clear()
    dev2.enqueue(STATUS, 0, app_len=52)
    dev2.dr = 0
    with pytest.raises(ValueError):
        dev2.next_action(0, new_id)
